#include "drseg/train.hpp"

#include <cmath>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"

namespace drseg {

void AdamWState::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw DimensionError("AdamW: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grad[i];
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
    params[i] -= opt_.lr * opt_.weight_decay * params[i];
    params[i] -= opt_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + opt_.eps);
  }
}

TrainResult train(const std::vector<PreparedScene>& scenes, const TextEmbeddings& text,
                  const ChannelPartition& partition, HeadParameters init, const RunConfig& config, int threads) {
  if (scenes.empty()) throw ArgumentError("training dataset is empty");
  const std::size_t n = scenes.size();
  const std::size_t b = std::min(n, static_cast<std::size_t>(config.batch_size));
  TrainResult r{std::move(init), {}};
  std::vector<double> flat = r.params.pack();
  AdamWState opt({config.learning_rate, config.weight_decay}, flat.size());
  std::vector<const PreparedScene*> batch(b);
  for (int step = 0; step < config.steps; ++step) {
    for (std::size_t i = 0; i < b; ++i) batch[i] = &scenes[(static_cast<std::size_t>(step) * b + i) % n];
    const LossGrad lg = loss_and_grad(batch, text, partition, r.params, config, threads);
    if (!std::isfinite(lg.loss))
      throw DivergenceError("training diverged at step " + std::to_string(step) + " (loss is not finite)");
    r.loss_trace.push_back(lg.loss);
    opt.step(flat, lg.grad);
    r.params.unpack(flat);
  }
  return r;
}

std::vector<double> smooth_trace(const std::vector<double>& trace, std::size_t window) {
  std::vector<double> out(trace.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    acc += trace[i];
    if (i >= window) acc -= trace[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

EvalReport evaluate(const std::vector<PreparedScene>& scenes, const TextEmbeddings& text,
                    const ChannelPartition& partition, const HeadParameters& params, const RunConfig& config) {
  if (scenes.empty()) throw ArgumentError("evaluation dataset is empty");
  ConfusionMatrix cm(text.n_classes);
  std::size_t used = 0;
  for (const auto& s : scenes) {
    if (!s.labels) continue;
    const FeatureMap logits = forward_pipeline(s, text, partition, params, config).logits;
    const FeatureMap full = resize_bilinear(logits, s.labels->h, s.labels->w);
    cm.add(*s.labels, argmax_labels(full));
    ++used;
  }
  if (used == 0) throw ArgumentError("evaluation dataset has no labelled scenes");
  return make_report(cm);
}

EvalReport evaluate(const Dataset& data, const ChannelPartition& partition, const HeadParameters& params,
                    const RunConfig& config) {
  return evaluate(prepare_dataset(data, partition, config), data.text, partition, params, config);
}

ChannelPartition compute_partition(const Dataset& data, const RunConfig& config) {
  const PrototypeBank bank = collect_prototypes(data, static_cast<std::size_t>(config.n_prototypes), config.seed);
  const ChannelScores scores =
      channel_scores(channel_entropy(bank, config.epsilon), channel_similarity(bank), config.lambda);
  return partition_channels(scores, config.rho);
}

nlohmann::json trace_json(const std::vector<double>& trace) {
  return {{"loss", trace}, {"smoothed", smooth_trace(trace)}};
}

} // namespace drseg
