#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace drseg {

// How the original and refined correlation branches are combined before decoding.
enum class FusionMode { ugaf, mean, concat, separate };

std::string_view to_string(FusionMode m);
FusionMode parse_fusion_mode(std::string_view s);

struct RunConfig {
  // Channel scoring and partition.
  double lambda = 0.3;
  double rho = 0.5;
  int n_prototypes = 64;

  // Affinity graph.
  double sigma_f = 2.0;
  double sigma_s = 0.05;
  int top_k = 75;
  int gcn_layers = 2;
  int edge_hidden = 32;

  // Fusion head.
  int embed_dim = 64;
  std::vector<int> rotations = {0, 90, 180, 270};
  double softmax_temperature = 0.07;
  FusionMode fusion_mode = FusionMode::ugaf;

  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  // Optimisation (AdamW).
  double learning_rate = 2e-4;
  double weight_decay = 1e-4;
  int batch_size = 8;
  int steps = 200;

  // Throws ConfigError when a field is outside its domain.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys and out-of-range values throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& c, const std::filesystem::path& path);

} // namespace drseg
