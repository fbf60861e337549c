#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "drseg/config.hpp"
#include "drseg/dataset.hpp"

namespace drseg {

enum class Branch { original, refined, modulated };

// h x w x N_c cosine correlations between pixel features and class text embeddings.
struct CorrelationVolume {
  FeatureMap values;
  Branch branch = Branch::original;

  std::size_t classes() const { return values.c; }
};

CorrelationVolume correlation(const FeatureMap& f, const TextEmbeddings& text, double epsilon = 1e-8,
                              Branch branch = Branch::original);

// Vector-Jacobian product of `correlation` with respect to the features.
FeatureMap correlation_backward(const FeatureMap& f, const TextEmbeddings& text, const FeatureMap& d_corr,
                                double epsilon = 1e-8);

// Inverse-rotates every volume to the canonical grid and averages them.
CorrelationVolume aggregate_rotations(const std::vector<std::pair<int, CorrelationVolume>>& volumes);

struct UncertaintyMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;
  double temperature = 0.0;
};

// Squared normalised softmax entropy of the original branch, clamped to [0, 1].
// A single class is treated as fully certain (0).
UncertaintyMap uncertainty(const CorrelationVolume& c_ori, double temperature, double epsilon = 1e-8);
// dL/dC_ori given dL/dM_unc.
FeatureMap uncertainty_backward(const CorrelationVolume& c_ori, double temperature, double epsilon,
                                std::span<const double> d_unc);

struct GateAffine {
  double a = 1.0;
  double b = 0.0;
  friend bool operator==(const GateAffine&, const GateAffine&) = default;
};

// C_ref scaled per pixel by logistic(a * M_unc + b).
CorrelationVolume modulate(const CorrelationVolume& c_ref, const UncertaintyMap& m, GateAffine psi);

// Class-count agnostic fusion head. Every kernel acts on one class slice at a time.
struct FusionParams {
  std::size_t e = 0;
  GateAffine gate;
  std::vector<double> embed_ori_w, embed_ori_b;  // E
  std::vector<double> embed_ref_w, embed_ref_b;  // E
  std::vector<double> conv3_w, conv3_b;          // E x 3 x 3 depthwise, E
  std::vector<double> conv5_w, conv5_b;          // E x 5 x 5 depthwise, E
  std::vector<double> fuse_w, fuse_b;            // E x 2E, E
  std::vector<double> score_w;                   // E
  double score_b = 0.0;

  static FusionParams zeros(std::size_t e);
  static FusionParams init(std::size_t e, std::mt19937_64& rng);

  template <class F>
  void visit(F&& f) {
    f("fusion.gate_a", std::span<double>(&gate.a, 1));
    f("fusion.gate_b", std::span<double>(&gate.b, 1));
    f("fusion.embed_ori_w", std::span<double>(embed_ori_w));
    f("fusion.embed_ori_b", std::span<double>(embed_ori_b));
    f("fusion.embed_ref_w", std::span<double>(embed_ref_w));
    f("fusion.embed_ref_b", std::span<double>(embed_ref_b));
    f("fusion.conv3_w", std::span<double>(conv3_w));
    f("fusion.conv3_b", std::span<double>(conv3_b));
    f("fusion.conv5_w", std::span<double>(conv5_w));
    f("fusion.conv5_b", std::span<double>(conv5_b));
    f("fusion.fuse_w", std::span<double>(fuse_w));
    f("fusion.fuse_b", std::span<double>(fuse_b));
    f("fusion.score_w", std::span<double>(score_w));
    f("fusion.score_b", std::span<double>(&score_b, 1));
  }
  friend bool operator==(const FusionParams&, const FusionParams&) = default;
};

struct DecodeResult {
  FeatureMap logits;  // H x W x N_c
  LabelGrid labels;   // argmax, lowest class index wins ties
};

// Grid logits from a pair of branch volumes (already modulated where applicable),
// bilinearly upsampled to out_h x out_w and decoded.
DecodeResult fuse_and_decode(const CorrelationVolume& c_ori, const CorrelationVolume& c_ref_mod,
                             const FusionParams& params, std::size_t out_h, std::size_t out_w);

LabelGrid argmax_labels(const FeatureMap& logits);

struct UgafGradients {
  FusionParams params;
  FeatureMap d_c_ori;
  FeatureMap d_c_ref;
};

// Full uncertainty-gated fusion with a cached forward pass for reverse-mode gradients.
// The cache belongs to the instance; backward() requires a preceding forward().
class FusionHead {
public:
  FusionHead(FusionParams params, FusionMode mode, double temperature, double epsilon = 1e-8);

  // Returns grid-resolution logits h x w x N_c.
  const FeatureMap& forward(const CorrelationVolume& c_ori, const CorrelationVolume& c_ref);
  UgafGradients backward(const FeatureMap& d_logits) const;

  const UncertaintyMap& uncertainty_map() const;
  const FusionParams& params() const { return params_; }

  struct SliceCache;
  struct DecoderCache {
    std::size_t h = 0, w = 0, classes = 0;
    std::vector<double> xo, xr;  // decoder inputs, h x w x N_c
    std::vector<SliceCache> slices;
  };

private:
  struct Cache {
    CorrelationVolume c_ori, c_ref;
    UncertaintyMap unc;
    std::vector<double> gate;  // per pixel
    std::vector<DecoderCache> decoders;
    FeatureMap logits;
  };

  FusionParams params_;
  FusionMode mode_;
  double temperature_;
  double epsilon_;
  std::optional<Cache> cache_;
};

struct FusionHead::SliceCache {
  std::vector<double> er;  // E x N refined embedding
  std::vector<double> ms;  // E x N multi-scale pre-activation
  std::vector<double> eo;  // E x N original embedding
  std::vector<double> fz;  // E x N fusion pre-activation
};

} // namespace drseg
