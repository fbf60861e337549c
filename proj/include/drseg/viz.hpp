#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "drseg/pdgr.hpp"
#include "drseg/tensor.hpp"
#include "drseg/ugaf.hpp"

namespace drseg {

struct GrayImage {
  std::size_t w = 0, h = 0;
  std::vector<std::uint8_t> px;
};

struct RgbImage {
  std::size_t w = 0, h = 0;
  std::vector<std::uint8_t> px;  // interleaved RGB
};

void write_pgm(const GrayImage& img, const std::filesystem::path& path);  // binary P5
void write_ppm(const RgbImage& img, const std::filesystem::path& path);   // binary P6
GrayImage read_pgm(const std::filesystem::path& path);

// One gray level per class: round(k * 255 / (n_classes - 1)).
GrayImage render_labels(const LabelGrid& g, std::size_t n_classes, std::size_t scale = 1);
// Values in [0, 1] mapped linearly to 0..255.
GrayImage render_unit_map(std::size_t h, std::size_t w, std::span<const double> values, std::size_t scale = 1);
// Class slice of a correlation volume, [-1, 1] mapped to 0..255.
GrayImage render_correlation(const CorrelationVolume& v, std::size_t cls, std::size_t scale = 1);

struct GraphOverlay {
  RgbImage image;
  std::size_t edges_drawn = 0;
};
// Labels as a dimmed gray background, one white segment per undirected retained edge
// between cell centres.
GraphOverlay render_graph(const SparseGraph& g, const LabelGrid& labels, std::size_t n_classes,
                          std::size_t scale = 16);

} // namespace drseg
