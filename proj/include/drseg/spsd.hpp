#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/dataset.hpp"

namespace drseg {

struct PrototypeSource {
  std::size_t scene = 0;
  std::size_t cell = 0;
  friend bool operator==(const PrototypeSource&, const PrototypeSource&) = default;
};

// Per-class L2-normalised pixel features. Rows are grouped by class: rows
// [k * n_p, (k + 1) * n_p) belong to class k.
struct PrototypeBank {
  std::size_t n_classes = 0;
  std::size_t n_p = 0;
  std::size_t c = 0;
  std::vector<double> rows;
  std::vector<PrototypeSource> sources;

  std::span<const double> row(std::size_t i) const { return {rows.data() + i * c, c}; }
  std::size_t size() const { return n_classes * n_p; }
  friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
};

struct ChannelScores {
  std::vector<double> entropy;     // bits
  std::vector<double> similarity;
  std::vector<double> score;       // in [0, 1], larger = more semantic
  double lambda = 0.0;
};

struct ChannelPartition {
  std::vector<std::size_t> sem;    // descending score order
  std::vector<std::size_t> str;    // descending score order
  std::vector<double> scores;
  double lambda = 0.0;
  double rho = 0.0;

  std::size_t channels() const { return sem.size() + str.size(); }
  // Throws ArgumentError unless sem and str partition {0..C-1}.
  void validate(std::size_t c) const;
  friend bool operator==(const ChannelPartition&, const ChannelPartition&) = default;
};

// Uniform sampling of n_p labelled pixels per class from the canonical CLIP features
// (without replacement when enough pixels exist).
PrototypeBank collect_prototypes(const Dataset& data, std::size_t n_p, std::uint64_t seed);

std::vector<double> channel_entropy(const PrototypeBank& bank, double epsilon = 1e-8);
std::vector<double> channel_similarity(const PrototypeBank& bank);
ChannelScores channel_scores(std::span<const double> entropy, std::span<const double> similarity, double lambda);

// Ascending rank of each entry (ties -> lower index first), normalised by (n - 1).
std::vector<double> normalized_rank(std::span<const double> values);

std::size_t semantic_channel_count(double rho, std::size_t c);
ChannelPartition partition_channels(const ChannelScores& scores, double rho);

struct SplitFeatures {
  FeatureMap sem;
  FeatureMap str;
};
SplitFeatures split_features(const FeatureMap& f, const ChannelPartition& p);

nlohmann::json to_json(const ChannelPartition& p);
ChannelPartition partition_from_json(const nlohmann::json& j);

// Zero-shot label prediction: argmax over classes of the rotation-aggregated cosine
// correlation, restricted to `channels` (features and text sliced identically).
LabelGrid zero_shot_segment(const Scene& scene, const TextEmbeddings& text, std::span<const std::size_t> channels);

// mIoU with all channels minus mIoU with channel `c` zeroed in features and text.
double mask_channel_eval(const Dataset& data, std::size_t c);

enum class RankEnd { top, bottom };
// Zero-shot mIoU keeping only the floor(retain * C) highest (or lowest) scoring channels.
double subspace_zero_shot_eval(const Dataset& data, std::span<const double> scores, double retain_ratio, RankEnd end);

} // namespace drseg
