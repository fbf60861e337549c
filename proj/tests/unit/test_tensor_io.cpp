#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "drseg/config.hpp"
#include "drseg/error.hpp"
#include "drseg/tensor.hpp"
#include "support.hpp"

using namespace drseg;
using testing::TempDir;

namespace {

// Hand-assembled NPY v1.0 file, independent of the library writer.
void write_raw_npy(const std::filesystem::path& p, const std::string& dict, const std::string& payload,
                   char major = 1) {
  std::string header = dict;
  const std::size_t base = 10;
  while ((base + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::ofstream out(p, std::ios::binary);
  out.write("\x93NUMPY", 6);
  out.put(major);
  out.put(0);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out << header << payload;
}

std::string floats(std::initializer_list<float> v) {
  std::string s(v.size() * 4, '\0');
  std::memcpy(s.data(), std::data(v), s.size());
  return s;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a.data()[i]) != std::bit_cast<std::uint32_t>(b.data()[i])) return false;
  return true;
}

} // namespace

TEST_CASE("2x3 tensor survives a write/read round trip") {
  TempDir d("tio");
  const Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  write_tensor(t, d / "a.npy");
  CHECK(read_tensor(d / "a.npy") == t);
}

TEST_CASE("one-element tensor round trip") {
  TempDir d("tio");
  const Tensor t({1}, {0.0f});
  write_tensor(t, d / "one.npy");
  const Tensor r = read_tensor(d / "one.npy");
  CHECK(r.size() == 1);
  CHECK(r == t);
}

TEST_CASE("rank-0 tensors are rejected") {
  CHECK_THROWS_AS(Tensor({}, {1.0f}), ArgumentError);
}

TEST_CASE("shape/data mismatch and non-finite values are rejected") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, {std::nanf("")}), ArgumentError);
}

TEST_CASE("24x24x512 tensor round trip") {
  TempDir d("tio");
  std::mt19937_64 rng(3);
  std::normal_distribution<float> nd;
  std::vector<float> v(24 * 24 * 512);
  for (float& x : v) x = nd(rng);
  const Tensor t({24, 24, 512}, v);
  write_tensor(t, d / "big.npy");
  CHECK(bit_equal(read_tensor(d / "big.npy"), t));
}

TEST_CASE("reader accepts a hand-built file and rejects each malformation distinctly") {
  TempDir d("tio");
  write_raw_npy(d / "ok.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }", floats({0, 1, 2, 3, 4, 5}));
  CHECK(read_tensor(d / "ok.npy") == Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));

  write_raw_npy(d / "f8.npy", "{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }", std::string(16, '\0'));
  CHECK_THROWS_AS(read_tensor(d / "f8.npy"), UnsupportedDtypeError);

  write_raw_npy(d / "be.npy", "{'descr': '>f4', 'fortran_order': False, 'shape': (2,), }", std::string(8, '\0'));
  CHECK_THROWS_AS(read_tensor(d / "be.npy"), UnsupportedDtypeError);

  write_raw_npy(d / "short.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }", floats({0, 1, 2, 3, 4}));
  CHECK_THROWS_AS(read_tensor(d / "short.npy"), TruncatedPayloadError);

  write_raw_npy(d / "fortran.npy", "{'descr': '<f4', 'fortran_order': True, 'shape': (2,), }", floats({0, 1}));
  CHECK_THROWS_AS(read_tensor(d / "fortran.npy"), MalformedHeaderError);

  write_raw_npy(d / "v2.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }", floats({0, 1}), 2);
  CHECK_THROWS_AS(read_tensor(d / "v2.npy"), MalformedHeaderError);

  write_raw_npy(d / "scalar.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (), }", floats({0}));
  CHECK_THROWS_AS(read_tensor(d / "scalar.npy"), MalformedHeaderError);

  {
    std::ofstream out(d / "junk.npy", std::ios::binary);
    out << "not a tensor file at all";
  }
  CHECK_THROWS_AS(read_tensor(d / "junk.npy"), MalformedHeaderError);
  CHECK_THROWS_AS(read_tensor(d / "missing.npy"), IoError);
}

TEST_CASE("written files use a 64-byte aligned v1.0 header") {
  TempDir d("tio");
  write_tensor(Tensor({5}, {1, 2, 3, 4, 5}), d / "a.npy");
  std::ifstream in(d / "a.npy", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() > 10);
  CHECK(bytes.substr(0, 6) == "\x93NUMPY");
  CHECK(bytes[6] == 1);
  CHECK(bytes[7] == 0);
  const std::size_t hlen = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
  CHECK((10 + hlen) % 64 == 0);
  CHECK(bytes[10 + hlen - 1] == '\n');
  CHECK(bytes.find("(5,)") != std::string::npos);
  CHECK(bytes.size() == 10 + hlen + 20);
}

TEST_CASE("property: random shapes and bit patterns round trip exactly") {
  TempDir d("tio");
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> rank(1, 4), dim(1, 7);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> shape(static_cast<std::size_t>(rank(rng)));
    std::size_t n = 1;
    for (auto& s : shape) n *= (s = static_cast<std::size_t>(dim(rng)));
    std::vector<float> v(n);
    for (float& x : v) {
      do x = std::bit_cast<float>(bits(rng));
      while (!std::isfinite(x));
    }
    const Tensor t(shape, v);
    const auto p = d / ("t" + std::to_string(trial) + ".npy");
    write_tensor(t, p);
    REQUIRE(bit_equal(read_tensor(p), t));
  }
}

TEST_CASE("feature maps and label grids convert through tensors") {
  std::mt19937_64 rng(2);
  FeatureMap f = testing::random_map(3, 4, 5, rng);
  for (double& v : f.data) v = static_cast<float>(v);
  CHECK(to_feature_map(to_tensor(f)) == f);
  const LabelGrid g = testing::random_labels(3, 4, 6, rng);
  CHECK(to_label_grid(to_tensor(g)) == g);
  CHECK_THROWS_AS(to_label_grid(Tensor({2}, {0.5f, 1})), DimensionError);
  CHECK_THROWS_AS(to_label_grid(Tensor({1, 2}, {0.5f, 1})), ArgumentError);
  CHECK_THROWS_AS(to_feature_map(Tensor({2, 2}, {0, 1, 2, 3})), DimensionError);
}

TEST_CASE("empty config object yields the published defaults") {
  const RunConfig c = config_from_json(nlohmann::json::object());
  CHECK(c.lambda == 0.3);
  CHECK(c.rho == 0.5);
  CHECK(c.sigma_f == 2.0);
  CHECK(c.sigma_s == 0.05);
  CHECK(c.top_k == 75);
  CHECK(c == RunConfig{});
}

TEST_CASE("config range and key checks") {
  CHECK_THROWS_AS(config_from_json({{"rho", 1.5}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"rh0", 0.5}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"top_k", 0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"top_k", 2.5}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"rotations", {0, 45}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"fusion_mode", "sum"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);

  const RunConfig c = config_from_json({{"top_k", 20}});
  RunConfig expect;
  expect.top_k = 20;
  CHECK(c == expect);
}

TEST_CASE("config files load, reject bad JSON and round trip idempotently") {
  TempDir d("cfg");
  {
    std::ofstream(d / "bad.json") << "{\"rho\": ";
  }
  CHECK_THROWS_AS(load_config(d / "bad.json"), ConfigError);
  {
    std::ofstream(d / "empty.json") << "{}";
  }
  CHECK(load_config(d / "empty.json") == RunConfig{});

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u;
  const FusionMode modes[] = {FusionMode::ugaf, FusionMode::mean, FusionMode::concat, FusionMode::separate};
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig c;
    c.lambda = u(rng);
    c.rho = u(rng);
    c.sigma_f = 0.1 + 3 * u(rng);
    c.sigma_s = u(rng);
    c.top_k = 1 + static_cast<int>(100 * u(rng));
    c.embed_dim = 1 + static_cast<int>(16 * u(rng));
    c.fusion_mode = modes[trial % 4];
    c.rotations = trial % 2 ? std::vector<int>{0} : std::vector<int>{0, 180};
    c.seed = rng();
    save_config(c, d / "c.json");
    const RunConfig once = load_config(d / "c.json");
    CHECK(once == c);
    save_config(once, d / "c2.json");
    CHECK(load_config(d / "c2.json") == once);
  }
}
