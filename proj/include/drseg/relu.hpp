#pragma once

#include <cstdint>
#include <vector>

namespace drseg {

// When set, every ReLU evaluated on this thread appends its activation bit. The
// gradient checker compares these patterns to spot perturbations that cross a kink.
inline thread_local std::vector<std::uint8_t>* relu_trace = nullptr;

inline double relu(double z) {
  if (relu_trace) relu_trace->push_back(z > 0.0);
  return z > 0.0 ? z : 0.0;
}

} // namespace drseg
