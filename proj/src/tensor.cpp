#include "drseg/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>

#include "drseg/error.hpp"

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

namespace drseg {

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kAlign = 64;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) s += ",";
    if (i + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

// Extracts the value text of `key` from a python dict literal.
std::string dict_value(const std::string& header, const std::string& key) {
  const std::regex re("'" + key + "'\\s*:\\s*('[^']*'|True|False|\\([^)]*\\))");
  std::smatch m;
  if (!std::regex_search(header, m, re)) throw MalformedHeaderError("npy header lacks key '" + key + "'");
  return m[1].str();
}

std::vector<std::size_t> parse_shape(const std::string& tuple) {
  std::vector<std::size_t> shape;
  std::string body = tuple.substr(1, tuple.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    if (!std::all_of(item.begin(), item.end(), ::isdigit))
      throw MalformedHeaderError("npy shape entry is not an integer: " + item);
    shape.push_back(std::stoull(item));
  }
  return shape;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ArgumentError("tensor rank must be >= 1");
  if (product(shape_) != data_.size())
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  for (float v : data_)
    if (!std::isfinite(v)) throw ArgumentError("tensor contains a non-finite value");
}

Tensor to_tensor(const FeatureMap& f) {
  std::vector<float> d(f.data.begin(), f.data.end());
  return Tensor({f.h, f.w, f.c}, std::move(d));
}

FeatureMap to_feature_map(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("feature map tensor must have rank 3");
  FeatureMap f;
  f.h = t.shape()[0];
  f.w = t.shape()[1];
  f.c = t.shape()[2];
  f.data.assign(t.data().begin(), t.data().end());
  return f;
}

Tensor to_tensor(const LabelGrid& g) {
  std::vector<float> d(g.data.begin(), g.data.end());
  return Tensor({g.h, g.w}, std::move(d));
}

LabelGrid to_label_grid(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("label tensor must have rank 2");
  LabelGrid g(t.shape()[0], t.shape()[1]);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float v = t.data()[i];
    if (v < 0.0f || v != std::floor(v)) throw ArgumentError("label tensor holds a non-integral or negative value");
    g.data[i] = static_cast<int>(v);
  }
  return g;
}

Tensor matrix_tensor(std::size_t rows, std::size_t cols, std::span<const double> values) {
  return Tensor({rows, cols}, std::vector<float>(values.begin(), values.end()));
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file " + path.string());

  char preamble[10];
  in.read(preamble, sizeof preamble);
  if (in.gcount() != sizeof preamble || std::memcmp(preamble, kMagic, kMagicLen) != 0)
    throw MalformedHeaderError(path.string() + ": missing NPY magic");
  if (preamble[6] != 1 || preamble[7] != 0)
    throw MalformedHeaderError(path.string() + ": only NPY version 1.0 is supported");
  const std::uint16_t header_len =
      static_cast<std::uint8_t>(preamble[8]) | (static_cast<std::uint8_t>(preamble[9]) << 8);

  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (static_cast<std::size_t>(in.gcount()) != header_len)
    throw MalformedHeaderError(path.string() + ": header shorter than declared");

  const std::string descr = dict_value(header, "descr");
  if (descr != "'<f4'") throw UnsupportedDtypeError(path.string() + ": element type " + descr + " is not '<f4'");
  if (dict_value(header, "fortran_order") != "False")
    throw MalformedHeaderError(path.string() + ": fortran_order must be False");
  const auto shape = parse_shape(dict_value(header, "shape"));
  if (shape.empty()) throw MalformedHeaderError(path.string() + ": rank-0 tensors are not supported");

  const std::size_t count = product(shape);
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != count * sizeof(float))
    throw TruncatedPayloadError(path.string() + ": expected " + std::to_string(count) + " values, found " +
                                std::to_string(got / sizeof(float)));
  if (in.peek() != std::char_traits<char>::eof())
    throw MalformedHeaderError(path.string() + ": trailing bytes after payload");
  return Tensor(shape, std::move(data));
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_string(t.shape()) + ", }";
  const std::size_t unpadded = kMagicLen + 4 + header.size() + 1;
  header.append((kAlign - unpadded % kAlign) % kAlign, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw IoError("write failed for " + path.string());
}

} // namespace drseg
