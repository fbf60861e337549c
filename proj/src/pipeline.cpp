#include "drseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"

namespace drseg {

namespace {

LabelGrid resample_nearest(const LabelGrid& g, std::size_t h, std::size_t w) {
  if (g.h == h && g.w == w) return g;
  LabelGrid out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto sy = std::min(g.h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * g.h / h));
      const auto sx = std::min(g.w - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * g.w / w));
      out.at(y, x) = g.at(sy, sx);
    }
  return out;
}

GraphOptions graph_options(const RunConfig& c) { return {c.sigma_f, c.sigma_s, c.top_k, c.epsilon}; }

void check_dims(const PreparedScene& s, const ChannelPartition& partition, const HeadParameters& params) {
  if (params.gcn.c != partition.str.size())
    throw DimensionError("head projection width differs from the structure subspace width");
  if (params.edge.in_dim != 2 * s.dino.c) throw DimensionError("edge MLP input width differs from 2 x DINO width");
}

struct SceneForward {
  std::optional<GraphRectifier> rectifier;
  FeatureMap f_ref;
  CorrelationVolume c_ref;
  std::optional<FusionHead> head;
};

SceneForward run_forward(const PreparedScene& s, const TextEmbeddings& text, const ChannelPartition& partition,
                         const HeadParameters& params, const RunConfig& config) {
  check_dims(s, partition, params);
  SceneForward f;
  if (partition.str.empty()) {
    f.f_ref = s.canonical;
  } else {
    f.rectifier.emplace(params.edge, params.gcn);
    const FeatureMap& rectified = f.rectifier->forward(s.split.str, s.topology, s.dino);
    f.f_ref = recompose(s.split.sem, rectified, partition);
  }
  f.c_ref = correlation(f.f_ref, text, config.epsilon, Branch::refined);
  f.head.emplace(params.fusion, config.fusion_mode, config.softmax_temperature, config.epsilon);
  return f;
}

struct SceneGrad {
  double loss = 0.0;
  HeadParameters grad;
};

SceneGrad scene_grad(const PreparedScene& s, const TextEmbeddings& text, const ChannelPartition& partition,
                     const HeadParameters& params, const RunConfig& config) {
  if (!s.grid_labels) throw ArgumentError("training scene has no labels");
  SceneForward f = run_forward(s, text, partition, params, config);
  FeatureMap d_logits;
  SceneGrad out{0.0, HeadParameters::zeros(params.dims())};
  const FeatureMap& logits = f.head->forward(s.c_ori, f.c_ref);
  out.loss = cross_entropy(logits, *s.grid_labels, &d_logits);

  UgafGradients ug = f.head->backward(d_logits);
  out.grad.fusion = std::move(ug.params);
  if (f.rectifier) {
    const FeatureMap d_ref = correlation_backward(f.f_ref, text, ug.d_c_ref, config.epsilon);
    FeatureMap d_str(d_ref.h, d_ref.w, partition.str.size());
    for (std::size_t i = 0; i < d_ref.nodes(); ++i)
      for (std::size_t j = 0; j < partition.str.size(); ++j)
        d_str.data[i * d_str.c + j] = d_ref.data[i * d_ref.c + partition.str[j]];
    PdgrGradients pg = f.rectifier->backward(d_str);
    out.grad.edge = std::move(pg.edge);
    out.grad.gcn = std::move(pg.gcn);
  }
  return out;
}

} // namespace

PreparedScene prepare_scene(const Scene& scene, const TextEmbeddings& text, const ChannelPartition& partition,
                            const RunConfig& config) {
  PreparedScene p;
  p.canonical = scene.canonical();
  if (p.canonical.c != text.c) throw DimensionError("scene feature width differs from text width");
  p.dino = resize_bilinear(scene.dino, p.canonical.h, p.canonical.w);
  p.topology = build_graph(p.dino, graph_options(config));
  p.split = split_features(p.canonical, partition);

  std::vector<std::pair<int, CorrelationVolume>> views;
  for (int angle : config.rotations) {
    auto it = scene.clip.find(angle);
    if (it == scene.clip.end()) continue;
    views.emplace_back(angle, correlation(it->second, text, config.epsilon));
  }
  if (views.empty()) views.emplace_back(0, correlation(p.canonical, text, config.epsilon));
  p.c_ori = aggregate_rotations(views);

  if (scene.labels) {
    p.labels = scene.labels;
    p.grid_labels = resample_nearest(*scene.labels, p.canonical.h, p.canonical.w);
  }
  return p;
}

std::vector<PreparedScene> prepare_dataset(const Dataset& data, const ChannelPartition& partition,
                                           const RunConfig& config) {
  std::vector<PreparedScene> out;
  out.reserve(data.scenes.size());
  for (const auto& s : data.scenes) out.push_back(prepare_scene(s, data.text, partition, config));
  return out;
}

HeadDims head_dims(const Dataset& data, const ChannelPartition& partition, const RunConfig& config) {
  if (data.scenes.empty()) throw ArgumentError("dataset is empty");
  return {data.scenes.front().dino.c, static_cast<std::size_t>(config.edge_hidden), partition.str.size(),
          static_cast<std::size_t>(config.gcn_layers), static_cast<std::size_t>(config.embed_dim)};
}

PipelineOutput forward_pipeline(const PreparedScene& scene, const TextEmbeddings& text,
                                const ChannelPartition& partition, const HeadParameters& params,
                                const RunConfig& config) {
  SceneForward f = run_forward(scene, text, partition, params, config);
  PipelineOutput out;
  out.logits = f.head->forward(scene.c_ori, f.c_ref);
  out.c_ref = f.c_ref;
  out.uncertainty = f.head->uncertainty_map();
  if (f.rectifier) {
    out.graph = f.rectifier->weighted_graph();
  } else {
    out.graph = scene.topology;
    edge_weights(out.graph, scene.dino, params.edge);
  }
  return out;
}

FeatureMap forward_pipeline(const Scene& scene, const TextEmbeddings& text, const ChannelPartition& partition,
                            const HeadParameters& params, const RunConfig& config) {
  return forward_pipeline(prepare_scene(scene, text, partition, config), text, partition, params, config).logits;
}

double cross_entropy(const FeatureMap& logits, const LabelGrid& labels, FeatureMap* d_logits) {
  if (logits.h != labels.h || logits.w != labels.w) throw DimensionError("cross_entropy: grid mismatch");
  const std::size_t K = logits.c, N = logits.nodes();
  if (d_logits) *d_logits = FeatureMap(logits.h, logits.w, K);
  double total = 0.0;
  std::vector<double> p(K);
  for (std::size_t i = 0; i < N; ++i) {
    const int y = labels.data[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw ArgumentError("label out of range");
    const auto z = logits.pixel(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += p[k] = std::exp(z[k] - zmax);
    total += std::log(sum) + zmax - z[static_cast<std::size_t>(y)];
    if (d_logits)
      for (std::size_t k = 0; k < K; ++k)
        d_logits->data[i * K + k] = (p[k] / sum - (k == static_cast<std::size_t>(y) ? 1.0 : 0.0)) / static_cast<double>(N);
  }
  return total / static_cast<double>(N);
}

LossGrad loss_and_grad(const std::vector<const PreparedScene*>& batch, const TextEmbeddings& text,
                       const ChannelPartition& partition, const HeadParameters& params, const RunConfig& config,
                       int threads) {
  if (batch.empty()) throw ArgumentError("empty batch");
  std::vector<std::optional<SceneGrad>> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t i) {
    try {
      results[i] = scene_grad(*batch[i], text, partition, params, config);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || batch.size() == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(workers, batch.size()); ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < batch.size(); i += workers) work(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  LossGrad out;
  out.grad.assign(params.count(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& r : results) {
    out.loss += r->loss * inv;
    const auto flat = r->grad.pack();
    for (std::size_t i = 0; i < flat.size(); ++i) out.grad[i] += flat[i] * inv;
  }
  return out;
}

double batch_loss(const std::vector<const PreparedScene*>& batch, const TextEmbeddings& text,
                  const ChannelPartition& partition, const HeadParameters& params, const RunConfig& config) {
  if (batch.empty()) throw ArgumentError("empty batch");
  double total = 0.0;
  for (const auto* s : batch) {
    if (!s->grid_labels) throw ArgumentError("training scene has no labels");
    SceneForward f = run_forward(*s, text, partition, params, config);
    total += cross_entropy(f.head->forward(s->c_ori, f.c_ref), *s->grid_labels);
  }
  return total / static_cast<double>(batch.size());
}

} // namespace drseg
