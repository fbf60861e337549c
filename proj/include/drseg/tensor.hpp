#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace drseg {

// Immutable float32 array used for storage and file exchange. Rank >= 1, row-major.
class Tensor {
public:
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::span<const float> data() const { return data_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

// Dense h x w x c grid of feature vectors. Computation happens in double precision;
// conversion to Tensor narrows to float32.
struct FeatureMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t h_, std::size_t w_, std::size_t c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), data(h_ * w_ * c_, fill) {}

  std::size_t nodes() const { return h * w; }
  double& at(std::size_t y, std::size_t x, std::size_t ch) { return data[(y * w + x) * c + ch]; }
  double at(std::size_t y, std::size_t x, std::size_t ch) const { return data[(y * w + x) * c + ch]; }
  std::span<double> pixel(std::size_t node) { return {data.data() + node * c, c}; }
  std::span<const double> pixel(std::size_t node) const { return {data.data() + node * c, c}; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

// Integer class index per grid cell.
struct LabelGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<int> data;

  LabelGrid() = default;
  LabelGrid(std::size_t h_, std::size_t w_, int fill = 0) : h(h_), w(w_), data(h_ * w_, fill) {}

  int& at(std::size_t y, std::size_t x) { return data[y * w + x]; }
  int at(std::size_t y, std::size_t x) const { return data[y * w + x]; }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

Tensor to_tensor(const FeatureMap& f);
FeatureMap to_feature_map(const Tensor& t);   // rank 3 required
Tensor to_tensor(const LabelGrid& g);
LabelGrid to_label_grid(const Tensor& t);     // rank 2, integral values required
Tensor matrix_tensor(std::size_t rows, std::size_t cols, std::span<const double> values);

// NPY v1.0 subset: '<f4', C order. See README for the exact layout.
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

} // namespace drseg
