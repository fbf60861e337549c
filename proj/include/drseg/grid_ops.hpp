#pragma once

#include <cstdint>

#include "drseg/tensor.hpp"

namespace drseg {

// Rotates the spatial grid counter-clockwise by `angle` degrees (a multiple of 90).
// Channels are untouched; this is a pure index permutation.
FeatureMap rotate(const FeatureMap& f, int angle);
LabelGrid rotate(const LabelGrid& g, int angle);

// Bilinear resampling with half-pixel centres and edge clamping.
FeatureMap resize_bilinear(const FeatureMap& f, std::size_t out_h, std::size_t out_w);

// Splits a 64-bit seed into an independent stream seed (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

} // namespace drseg
