#include "drseg/sweep.hpp"

#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"
#include "drseg/train.hpp"

namespace drseg {

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "rho") return SweepAxis::rho;
  if (s == "top_k") return SweepAxis::top_k;
  if (s == "fusion_mode") return SweepAxis::fusion_mode;
  if (s == "prior_noise") return SweepAxis::prior_noise;
  throw ArgumentError("unknown sweep axis '" + std::string(s) + "'");
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::rho: return "rho";
    case SweepAxis::top_k: return "top_k";
    case SweepAxis::fusion_mode: return "fusion_mode";
    case SweepAxis::prior_noise: return "prior_noise";
  }
  return "?";
}

std::vector<std::string> default_sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::rho: return {"0.3", "0.4", "0.5", "0.6", "0.7"};
    case SweepAxis::top_k: return {"20", "40", "50", "75", "100"};
    case SweepAxis::fusion_mode: return {"mean", "concat", "separate", "ugaf"};
    case SweepAxis::prior_noise: return {"0", "0.1", "0.3", "1"};
  }
  return {};
}

Dataset with_prior_noise(const Dataset& data, double sigma, std::uint64_t seed) {
  Dataset out = data;
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < out.scenes.size(); ++i) {
    std::mt19937_64 rng(derive_seed(seed ^ 0x5eedULL, i));
    std::normal_distribution<double> nd(0.0, sigma);
    for (double& v : out.scenes[i].dino.data) v += nd(rng);
  }
  return out;
}

namespace {

double parse_number(const std::string& s, SweepAxis axis) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ArgumentError("bad value '" + s + "' for sweep axis " + std::string(to_string(axis)));
  }
}

RunConfig cell_config(const RunConfig& base, SweepAxis axis, const std::string& value) {
  RunConfig c = base;
  switch (axis) {
    case SweepAxis::rho: c.rho = parse_number(value, axis); break;
    case SweepAxis::top_k: {
      const double k = parse_number(value, axis);
      if (k != static_cast<double>(static_cast<int>(k))) throw ArgumentError("top_k values must be integers");
      c.top_k = static_cast<int>(k);
      break;
    }
    case SweepAxis::fusion_mode: c.fusion_mode = parse_fusion_mode(value); break;
    case SweepAxis::prior_noise: parse_number(value, axis); break;
  }
  c.validate();
  return c;
}

} // namespace

std::vector<SweepCell> ablation_sweep(SweepAxis axis, const std::vector<std::string>& values, const Dataset& train_set,
                                      const Dataset& eval_set, const RunConfig& base, int threads) {
  if (values.empty()) throw ArgumentError("sweep needs at least one value");
  std::vector<SweepCell> cells;
  for (const auto& value : values) {
    const auto t0 = std::chrono::steady_clock::now();
    SweepCell cell;
    cell.axis = to_string(axis);
    cell.value = value;
    cell.config = cell_config(base, axis, value);
    const RunConfig& cfg = cell.config;
    const double sigma = axis == SweepAxis::prior_noise ? parse_number(value, axis) : 0.0;
    const Dataset tr = with_prior_noise(train_set, sigma, cfg.seed);
    const Dataset ev = with_prior_noise(eval_set, sigma, cfg.seed + 1);

    const ChannelPartition part = compute_partition(tr, cfg);
    cell.sem_channels = part.sem.size();
    const auto prepared = prepare_dataset(tr, part, cfg);
    TrainResult r = train(prepared, tr.text, part, HeadParameters::init(head_dims(tr, part, cfg), cfg.seed), cfg,
                          threads);
    if (!r.loss_trace.empty()) {
      cell.initial_loss = r.loss_trace.front();
      cell.final_loss = smooth_trace(r.loss_trace).back();
    }
    cell.report = evaluate(ev, part, r.params, cfg);
    cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    cells.push_back(std::move(cell));
  }
  return cells;
}

nlohmann::json to_json(const SweepCell& c) {
  return {{"axis", c.axis},
          {"value", c.value},
          {"config", to_json(c.config)},
          {"sem_channels", c.sem_channels},
          {"initial_loss", c.initial_loss},
          {"final_loss", c.final_loss},
          {"report", to_json(c.report)},
          {"seconds", c.seconds}};
}

std::string format_sweep_table(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %-10s %8s %8s %8s %10s %10s\n", "axis", "value", "mIoU", "fwIoU", "mACC",
                "loss0", "loss_end");
  os << line;
  for (const auto& c : cells) {
    std::snprintf(line, sizeof line, "%-12s %-10s %8.2f %8.2f %8.2f %10.4f %10.4f\n", c.axis.c_str(),
                  c.value.c_str(), c.report.miou, c.report.fwiou, c.report.macc, c.initial_loss, c.final_loss);
    os << line;
  }
  return os.str();
}

} // namespace drseg
