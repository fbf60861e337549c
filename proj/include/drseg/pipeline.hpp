#pragma once

#include <vector>

#include "drseg/config.hpp"
#include "drseg/dataset.hpp"
#include "drseg/head.hpp"
#include "drseg/pdgr.hpp"
#include "drseg/spsd.hpp"
#include "drseg/ugaf.hpp"

namespace drseg {

// Parameter-independent work for one scene: channel split, DINO resampling, graph
// topology and the rotation-aggregated original branch.
struct PreparedScene {
  FeatureMap canonical;
  FeatureMap dino;          // resampled to the canonical grid
  SparseGraph topology;
  SplitFeatures split;
  CorrelationVolume c_ori;
  std::optional<LabelGrid> labels;       // full resolution
  std::optional<LabelGrid> grid_labels;  // nearest-resampled to the feature grid
};

PreparedScene prepare_scene(const Scene& scene, const TextEmbeddings& text, const ChannelPartition& partition,
                            const RunConfig& config);
std::vector<PreparedScene> prepare_dataset(const Dataset& data, const ChannelPartition& partition,
                                           const RunConfig& config);

HeadDims head_dims(const Dataset& data, const ChannelPartition& partition, const RunConfig& config);

struct PipelineOutput {
  FeatureMap logits;  // grid resolution, h x w x N_c
  CorrelationVolume c_ref;
  UncertaintyMap uncertainty;
  SparseGraph graph;  // weighted
};

// Decouple, rectify, correlate, gate and fuse. Deterministic in its inputs.
PipelineOutput forward_pipeline(const PreparedScene& scene, const TextEmbeddings& text,
                                const ChannelPartition& partition, const HeadParameters& params,
                                const RunConfig& config);
FeatureMap forward_pipeline(const Scene& scene, const TextEmbeddings& text, const ChannelPartition& partition,
                            const HeadParameters& params, const RunConfig& config);

// Mean per-pixel cross-entropy of grid logits; labels must match the logits grid.
double cross_entropy(const FeatureMap& logits, const LabelGrid& labels, FeatureMap* d_logits = nullptr);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // flat, HeadParameters::pack order
};

// Mean cross-entropy over the batch and its gradient. Scenes may be processed on up to
// `threads` workers; per-scene results are reduced in index order.
LossGrad loss_and_grad(const std::vector<const PreparedScene*>& batch, const TextEmbeddings& text,
                       const ChannelPartition& partition, const HeadParameters& params, const RunConfig& config,
                       int threads = 1);
double batch_loss(const std::vector<const PreparedScene*>& batch, const TextEmbeddings& text,
                  const ChannelPartition& partition, const HeadParameters& params, const RunConfig& config);

} // namespace drseg
