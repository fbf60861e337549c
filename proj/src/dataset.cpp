#include "drseg/dataset.hpp"

#include "drseg/error.hpp"

namespace drseg {

Dataset from_synthetic(const std::vector<SyntheticScene>& scenes) {
  if (scenes.empty()) throw ArgumentError("empty scene list");
  Dataset d;
  const auto& first = scenes.front();
  d.text = {first.n_classes, first.channels(), first.text};
  d.semantic_truth = first.semantic_truth;
  for (std::size_t k = 0; k < first.n_classes; ++k) d.class_names.push_back("class_" + std::to_string(k));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    if (s.text != first.text) throw ArgumentError("scenes do not share text embeddings");
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", i);
    d.scenes.push_back({id, s.clip, s.dino, s.labels});
  }
  return d;
}

} // namespace drseg
