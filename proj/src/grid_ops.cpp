#include "drseg/grid_ops.hpp"

#include <algorithm>
#include <cmath>

#include "drseg/error.hpp"

namespace drseg {

namespace {

int quarter_turns(int angle) {
  if (angle % 90 != 0) throw ArgumentError("rotation angle must be a multiple of 90 degrees");
  return ((angle / 90) % 4 + 4) % 4;
}

// Source (row, col) for destination (y, x) after `k` counter-clockwise quarter turns
// of an h x w grid.
struct RotIndex {
  std::size_t h, w;
  int k;
  std::pair<std::size_t, std::size_t> operator()(std::size_t y, std::size_t x) const {
    switch (k) {
      case 1: return {x, w - 1 - y};
      case 2: return {h - 1 - y, w - 1 - x};
      case 3: return {h - 1 - x, y};
      default: return {y, x};
    }
  }
};

} // namespace

FeatureMap rotate(const FeatureMap& f, int angle) {
  const int k = quarter_turns(angle);
  const bool swap = k % 2 == 1;
  FeatureMap out(swap ? f.w : f.h, swap ? f.h : f.w, f.c);
  const RotIndex src{f.h, f.w, k};
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) {
      const auto [sy, sx] = src(y, x);
      std::copy_n(&f.data[(sy * f.w + sx) * f.c], f.c, &out.data[(y * out.w + x) * out.c]);
    }
  return out;
}

LabelGrid rotate(const LabelGrid& g, int angle) {
  const int k = quarter_turns(angle);
  const bool swap = k % 2 == 1;
  LabelGrid out(swap ? g.w : g.h, swap ? g.h : g.w);
  const RotIndex src{g.h, g.w, k};
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) {
      const auto [sy, sx] = src(y, x);
      out.at(y, x) = g.at(sy, sx);
    }
  return out;
}

FeatureMap resize_bilinear(const FeatureMap& f, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || f.h == 0 || f.w == 0) throw DimensionError("resize to or from an empty grid");
  if (out_h == f.h && out_w == f.w) return f;
  FeatureMap out(out_h, out_w, f.c);
  auto axis = [](std::size_t i, std::size_t n_in, std::size_t n_out) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, n_in - 1);
    return std::tuple{lo, hi, s - static_cast<double>(lo)};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, ty] = axis(y, f.h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, tx] = axis(x, f.w, out_w);
      for (std::size_t ch = 0; ch < f.c; ++ch) {
        const double top = (1 - tx) * f.at(y0, x0, ch) + tx * f.at(y0, x1, ch);
        const double bot = (1 - tx) * f.at(y1, x0, ch) + tx * f.at(y1, x1, ch);
        out.at(y, x, ch) = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace drseg
