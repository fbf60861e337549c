#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "drseg/tensor.hpp"

namespace drseg {

struct SceneParams {
  std::size_t h = 12;
  std::size_t w = 12;
  std::size_t channels = 32;   // C, CLIP-like feature width
  std::size_t dino_dim = 16;   // D
  int n_classes = 4;
  double noise = 0.0;          // std of additive Gaussian noise on CLIP-like features
  double rho_gen = 0.5;        // fraction of class-selective channels
  double dino_jitter = 0.1;    // std of per-cell jitter around the class anchor
  double text_structural_weight = 1.0;  // text mass on label-independent channels
  int seeds_per_class = 2;     // Voronoi sites per class
  // Angles to render; empty means {0,90,180,270} on square grids and {0} otherwise.
  std::vector<int> rotations;
  // Seed of the channel layout, text embeddings and DINO anchors. Scenes that share it
  // share class semantics; unset means "use the scene seed".
  std::optional<std::uint64_t> world_seed;
};

struct SyntheticScene {
  LabelGrid labels;
  std::map<int, FeatureMap> clip;          // angle -> h x w x C (rotated grid)
  FeatureMap dino;                         // h x w x D
  std::vector<double> text;                // n_classes x C, unit rows
  std::size_t n_classes = 0;
  std::vector<std::size_t> semantic_truth; // sorted channel indices
  std::vector<int> channel_class;          // class of each semantic channel, -1 for structural
  std::vector<double> amplitude;           // construction amplitude per channel (0 for structural)
  std::vector<std::uint8_t> boundary;      // h x w, 1 where a 4-neighbour has another label

  const FeatureMap& canonical() const { return clip.at(0); }
  std::size_t channels() const { return canonical().c; }

  friend bool operator==(const SyntheticScene&, const SyntheticScene&) = default;
};

SyntheticScene generate_scene(const SceneParams& p, std::uint64_t seed);

// Scenes share the world drawn from `seed`; scene i uses derive_seed(seed, i).
std::vector<SyntheticScene> generate_dataset(std::size_t n_scenes, SceneParams p, std::uint64_t seed);

// Mean canonical activation of `channel` on cells of `cls` minus its mean on all other cells.
double class_selectivity_margin(const SyntheticScene& s, std::size_t channel, int cls);

} // namespace drseg
