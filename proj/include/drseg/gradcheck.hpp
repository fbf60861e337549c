#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/config.hpp"
#include "drseg/dataset.hpp"
#include "drseg/head.hpp"
#include "drseg/pipeline.hpp"

namespace drseg {

// Small labelled problem on which analytic gradients are compared with central
// differences: 4x4 grid, C = 12, D = 4, three classes, E = 8 by default.
struct GradcheckInstance {
  Dataset data;
  ChannelPartition partition;
  std::vector<PreparedScene> scenes;
  HeadParameters params;
  RunConfig config;
};

GradcheckInstance make_gradcheck_instance(const RunConfig& base);

struct BlockCheck {
  std::string name;
  std::size_t size = 0;
  double max_abs_error = 0.0;
  double scale = 0.0;        // max(|analytic|, |numeric|) over the block
  double rel_error = 0.0;    // max_abs_error / max(scale, 1e-8)
  std::size_t kinked = 0;    // entries whose +-step evaluations straddle a ReLU kink; not compared
  bool passed = false;
};

struct GradcheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 0.0;
  double step = 0.0;
  double max_rel_error = 0.0;
  std::size_t kinked = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-3;
  // Applied to the analytic gradients before comparison (negative controls).
  std::function<void(const std::string& block, std::span<double> analytic)> corrupt;
};

// Every parameter block is checked through the full batch loss. The inputs of the
// rectifier (F_str) and of the fusion head (C_ori, C_ref) are checked as extra blocks.
// Central differences are meaningless across a ReLU kink, so entries whose two probes
// see different activation patterns are counted and excluded; a block with every
// entry excluded fails unless the tolerance is infinite.
GradcheckReport gradcheck(const GradcheckInstance& inst, const GradcheckOptions& opt = {});

nlohmann::json to_json(const GradcheckReport& r);
std::string format_table(const GradcheckReport& r);

} // namespace drseg
