#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/config.hpp"
#include "drseg/dataset.hpp"
#include "drseg/metrics.hpp"

namespace drseg {

enum class SweepAxis { rho, top_k, fusion_mode, prior_noise };

SweepAxis parse_sweep_axis(std::string_view s);
std::string_view to_string(SweepAxis a);
std::vector<std::string> default_sweep_values(SweepAxis a);

struct SweepCell {
  std::string axis;
  std::string value;
  RunConfig config;
  std::size_t sem_channels = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;   // smoothed
  EvalReport report;
  double seconds = 0.0;
};

// Copy of the data with Gaussian noise of std `sigma` added to every DINO feature.
Dataset with_prior_noise(const Dataset& data, double sigma, std::uint64_t seed);

// One retrain-and-evaluate per value, all from the same seed. The partition is
// recomputed from the training set in every cell.
std::vector<SweepCell> ablation_sweep(SweepAxis axis, const std::vector<std::string>& values, const Dataset& train_set,
                                      const Dataset& eval_set, const RunConfig& base, int threads = 1);

nlohmann::json to_json(const SweepCell& c);
std::string format_sweep_table(const std::vector<SweepCell>& cells);

} // namespace drseg
