#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/config.hpp"
#include "drseg/dataset.hpp"
#include "drseg/head.hpp"
#include "drseg/metrics.hpp"
#include "drseg/pipeline.hpp"

namespace drseg {

struct AdamW {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled-weight-decay Adam over a flat parameter vector.
class AdamWState {
public:
  AdamWState(AdamW opt, std::size_t n) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}
  void step(std::span<double> params, std::span<const double> grad);

private:
  AdamW opt_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

struct TrainResult {
  HeadParameters params;
  std::vector<double> loss_trace;  // batch loss before each update, raw
};

// Trains from `init` for config.steps AdamW steps. Step s uses scenes
// (s * B + b) mod n for b < B = min(batch_size, n). Throws DivergenceError on a
// non-finite loss.
TrainResult train(const std::vector<PreparedScene>& scenes, const TextEmbeddings& text,
                  const ChannelPartition& partition, HeadParameters init, const RunConfig& config, int threads = 1);

// Trailing mean over `window` entries ending at each index.
std::vector<double> smooth_trace(const std::vector<double>& trace, std::size_t window = 10);

EvalReport evaluate(const std::vector<PreparedScene>& scenes, const TextEmbeddings& text,
                    const ChannelPartition& partition, const HeadParameters& params, const RunConfig& config);
EvalReport evaluate(const Dataset& data, const ChannelPartition& partition, const HeadParameters& params,
                    const RunConfig& config);

// Offline channel partition from labelled data (prototypes -> scores -> split).
ChannelPartition compute_partition(const Dataset& data, const RunConfig& config);

nlohmann::json trace_json(const std::vector<double>& trace);

} // namespace drseg
