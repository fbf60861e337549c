#include "drseg/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "drseg/error.hpp"

namespace drseg {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

GrayImage upscale(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& cells, std::size_t scale) {
  if (scale == 0) throw ArgumentError("image scale must be positive");
  GrayImage img{w * scale, h * scale, std::vector<std::uint8_t>(w * scale * h * scale)};
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) img.px[y * img.w + x] = cells[(y / scale) * w + x / scale];
  return img;
}

void draw_line(RgbImage& img, long x0, long y0, long x1, long y1) {
  const long dx = std::labs(x1 - x0), dy = -std::labs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    const std::size_t o = (static_cast<std::size_t>(y0) * img.w + static_cast<std::size_t>(x0)) * 3;
    img.px[o] = img.px[o + 1] = img.px[o + 2] = 255;
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

} // namespace

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_ppm(const RgbImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.w >> img.h >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw IoError("not an 8-bit binary PGM: " + path.string());
  in.get();
  img.px.resize(img.w * img.h);
  in.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.px.size())) throw IoError("truncated PGM: " + path.string());
  return img;
}

GrayImage render_labels(const LabelGrid& g, std::size_t n_classes, std::size_t scale) {
  std::vector<std::uint8_t> cells(g.data.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const int k = g.data[i];
    if (k < 0 || static_cast<std::size_t>(k) >= n_classes) throw ArgumentError("label outside [0, n_classes)");
    cells[i] = n_classes < 2 ? 0 : to_byte(static_cast<double>(k) / static_cast<double>(n_classes - 1));
  }
  return upscale(g.h, g.w, cells, scale);
}

GrayImage render_unit_map(std::size_t h, std::size_t w, std::span<const double> values, std::size_t scale) {
  if (values.size() != h * w) throw DimensionError("map size differs from h x w");
  std::vector<std::uint8_t> cells(values.size());
  std::transform(values.begin(), values.end(), cells.begin(), to_byte);
  return upscale(h, w, cells, scale);
}

GrayImage render_correlation(const CorrelationVolume& v, std::size_t cls, std::size_t scale) {
  if (cls >= v.classes()) throw ArgumentError("class index out of range");
  const FeatureMap& f = v.values;
  std::vector<std::uint8_t> cells(f.nodes());
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = to_byte(0.5 * (f.data[i * f.c + cls] + 1.0));
  return upscale(f.h, f.w, cells, scale);
}

GraphOverlay render_graph(const SparseGraph& g, const LabelGrid& labels, std::size_t n_classes, std::size_t scale) {
  if (labels.h != g.h || labels.w != g.w) throw DimensionError("label grid differs from graph grid");
  const GrayImage base = render_labels(labels, n_classes, scale);
  GraphOverlay out;
  out.image = {base.w, base.h, std::vector<std::uint8_t>(base.px.size() * 3)};
  for (std::size_t i = 0; i < base.px.size(); ++i) {
    // Background stays below 200 so the white edges remain visible.
    const auto v = static_cast<std::uint8_t>(40 + base.px[i] * 160 / 255);
    out.image.px[3 * i] = v;
    out.image.px[3 * i + 1] = static_cast<std::uint8_t>(v / 2);
    out.image.px[3 * i + 2] = static_cast<std::uint8_t>(255 - v);
  }
  const long half = static_cast<long>(scale / 2);
  for (const auto& [a, b] : g.edge_list()) {
    const long ya = static_cast<long>(a / g.w), xa = static_cast<long>(a % g.w);
    const long yb = static_cast<long>(b / g.w), xb = static_cast<long>(b % g.w);
    const long s = static_cast<long>(scale);
    draw_line(out.image, xa * s + half, ya * s + half, xb * s + half, yb * s + half);
    ++out.edges_drawn;
  }
  return out;
}

} // namespace drseg
