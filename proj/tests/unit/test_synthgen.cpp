#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"
#include "drseg/synthgen.hpp"

using namespace drseg;

namespace {

SceneParams small(double noise = 0.0) {
  SceneParams p;
  p.h = p.w = 8;
  p.channels = 16;
  p.dino_dim = 8;
  p.n_classes = 4;
  p.noise = noise;
  return p;
}

} // namespace

TEST_CASE("same seed, same scene; different seed, different labels") {
  const auto a = generate_scene(small(0.1), 1);
  const auto b = generate_scene(small(0.1), 1);
  CHECK(a == b);
  const auto c = generate_scene(small(0.1), 2);
  CHECK(a.canonical().data != c.canonical().data);
}

TEST_CASE("zero-noise semantic channels separate their class by exactly their amplitude") {
  const auto s = generate_scene(small(), 1);
  REQUIRE(s.semantic_truth.size() == 8);
  for (std::size_t c : s.semantic_truth) {
    const int k = s.channel_class[c];
    REQUIRE(k >= 0);
    CHECK(class_selectivity_margin(s, c, k) == doctest::Approx(s.amplitude[c]).epsilon(1e-12));
  }
}

TEST_CASE("semantic channel values are amplitude on their class and zero elsewhere") {
  const auto s = generate_scene(small(), 5);
  const auto& f = s.canonical();
  for (std::size_t c : s.semantic_truth)
    for (std::size_t i = 0; i < f.nodes(); ++i) {
      const double want = s.labels.data[i] == s.channel_class[c] ? s.amplitude[c] : 0.0;
      CHECK(f.data[i * f.c + c] == want);
    }
}

TEST_CASE("every class appears and labels stay in range") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = generate_scene(small(), seed);
    std::set<int> seen(s.labels.data.begin(), s.labels.data.end());
    CHECK(seen.size() == 4);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 3);
  }
}

TEST_CASE("rotated views are exact rotations of the canonical view without noise") {
  const auto s = generate_scene(small(), 3);
  REQUIRE(s.clip.size() == 4);
  for (int a : {90, 180, 270}) CHECK(s.clip.at(a) == rotate(s.canonical(), a));
}

TEST_CASE("non-square grids render only the canonical view") {
  SceneParams p = small();
  p.w = 6;
  const auto s = generate_scene(p, 0);
  CHECK(s.clip.size() == 1);
  p.rotations = {90};
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
}

TEST_CASE("parameter validation") {
  SceneParams p = small();
  p.h = 3;
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
  p = small();
  p.channels = 7;
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
  p = small();
  p.n_classes = 1;
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
  p = small();
  p.h = p.w = 4;
  p.n_classes = 17;
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
  p = small();
  p.rho_gen = 1.5;
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
  p = small();
  p.noise = -1;
  CHECK_THROWS_AS(generate_scene(p, 0), ArgumentError);
  CHECK_THROWS_AS(generate_dataset(0, small(), 0), ArgumentError);
}

TEST_CASE("a one-scene dataset is the scene at the derived seed in the dataset world") {
  SceneParams p = small(0.05);
  const auto d = generate_dataset(1, p, 42);
  p.world_seed = 42;
  CHECK(d.front() == generate_scene(p, derive_seed(42, 0)));
}

TEST_CASE("dataset scenes share world semantics") {
  const auto d = generate_dataset(5, small(), 9);
  for (const auto& s : d) {
    CHECK(s.semantic_truth == d.front().semantic_truth);
    CHECK(s.text == d.front().text);
    CHECK(s.channel_class == d.front().channel_class);
  }
  CHECK(d[0].labels != d[1].labels);
}

TEST_CASE("text rows are unit norm") {
  const auto s = generate_scene(small(), 11);
  for (std::size_t k = 0; k < s.n_classes; ++k) {
    double n = 0.0;
    for (std::size_t c = 0; c < s.channels(); ++c) n += s.text[k * s.channels() + c] * s.text[k * s.channels() + c];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("semantic truth size follows rho_gen") {
  for (double rho : {0.0, 0.25, 0.3, 0.5, 0.7, 1.0}) {
    SceneParams p = small();
    p.channels = 20;
    p.rho_gen = rho;
    const auto s = generate_scene(p, 0);
    CHECK(s.semantic_truth.size() == static_cast<std::size_t>(std::floor(rho * 20 + 1e-9)));
    CHECK(std::is_sorted(s.semantic_truth.begin(), s.semantic_truth.end()));
  }
}

TEST_CASE("noisy semantic channels keep a positive margin on average") {
  const auto d = generate_dataset(10, small(0.1), 4);
  for (std::size_t c : d.front().semantic_truth) {
    double m = 0.0;
    for (const auto& s : d) m += class_selectivity_margin(s, c, s.channel_class[c]);
    m /= static_cast<double>(d.size());
    CHECK(m > 0.5 * d.front().amplitude[c]);
  }
}

TEST_CASE("structural channels do not separate classes") {
  const auto s = generate_scene(small(), 2);
  for (std::size_t c = 0; c < s.channels(); ++c) {
    if (s.channel_class[c] >= 0) continue;
    CHECK(s.amplitude[c] == 0.0);
  }
}

TEST_CASE("boundary mask marks exactly the cells with a differing 4-neighbour") {
  const auto s = generate_scene(small(), 6);
  const auto& g = s.labels;
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x) {
      bool diff = false;
      const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const long yy = static_cast<long>(y) + dy[k], xx = static_cast<long>(x) + dx[k];
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(g.h) || xx >= static_cast<long>(g.w)) continue;
        diff = diff || g.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) != g.at(y, x);
      }
      CHECK(s.boundary[y * g.w + x] == (diff ? 1 : 0));
    }
}

TEST_CASE("two hundred small scenes generate quickly") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = generate_dataset(200, small(0.1), 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(d.size() == 200);
  CHECK(secs < 10.0);
}
