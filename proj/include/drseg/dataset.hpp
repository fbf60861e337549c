#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drseg/synthgen.hpp"
#include "drseg/tensor.hpp"

namespace drseg {

// Class text embeddings, n_classes x C, row-major.
struct TextEmbeddings {
  std::size_t n_classes = 0;
  std::size_t c = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t k) const { return {data.data() + k * c, c}; }
  friend bool operator==(const TextEmbeddings&, const TextEmbeddings&) = default;
};

struct Scene {
  std::string id;
  std::map<int, FeatureMap> clip;   // angle -> features on the rotated grid; 0 is always present
  FeatureMap dino;                  // structural prior, any grid size (resampled on use)
  std::optional<LabelGrid> labels;  // canonical orientation

  const FeatureMap& canonical() const { return clip.at(0); }
};

struct Dataset {
  std::vector<Scene> scenes;
  TextEmbeddings text;
  std::vector<std::string> class_names;
  std::vector<std::size_t> semantic_truth;  // synthetic datasets only

  std::size_t n_classes() const { return text.n_classes; }
  std::size_t channels() const { return text.c; }
};

Dataset from_synthetic(const std::vector<SyntheticScene>& scenes);

} // namespace drseg
