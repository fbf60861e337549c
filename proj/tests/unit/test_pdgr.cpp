#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "drseg/error.hpp"
#include "drseg/pdgr.hpp"
#include "drseg/synthgen.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace drseg;

namespace {

double softplus_ref(double x) { return std::log(1.0 + std::exp(x)); }

FeatureMap one_pixel(std::vector<double> v) {
  FeatureMap f(1, 1, v.size());
  f.data = std::move(v);
  return f;
}

} // namespace

TEST_CASE("affinity examples") {
  const std::vector<double> a{1, 2, 3}, b{-2, 1, 0}, zero{0, 0, 0}, neg{-1, -2, -3};
  CHECK(affinity(a, a, {1, 1}, {1, 1}, 5.0, 2.0, 0.05) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(affinity(a, b, {0, 0}, {0, 0}, 5.0, 2.0, 0.05) == 0.0);
  CHECK(affinity(a, neg, {0, 0}, {0, 0}, 5.0, 2.0, 0.05) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(affinity(a, zero, {0, 0}, {0, 0}, 5.0, 2.0, 0.05) == 0.0);
  const double d2 = 9.0 + 16.0;
  CHECK(affinity(a, a, {0, 0}, {3, 4}, 5.0, 2.0, 0.05) ==
        doctest::Approx(2.0 * std::exp(-0.05 * d2 / (5.0 + 1e-8))).epsilon(1e-12));
}

TEST_CASE("affinity is exactly symmetric") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> a(5), b(5);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const std::pair<double, double> ci{u(rng), u(rng)}, cj{u(rng), u(rng)};
    CHECK(affinity(a, b, ci, cj, 7.0, 2.0, 0.05) == affinity(b, a, cj, ci, 7.0, 2.0, 0.05));
  }
}

TEST_CASE("top-k out-degree and symmetrisation") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t h = 2 + rng() % 5, w = 2 + rng() % 5;
    const auto f = testing::random_map(h, w, 4, rng);
    GraphOptions opt;
    opt.top_k = 1 + static_cast<int>(rng() % 30);
    const auto g = build_graph(f, opt);
    const std::size_t N = h * w;
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(opt.top_k), N - 1);
    std::set<std::pair<std::size_t, std::size_t>> stored;
    for (std::size_t i = 0; i < N; ++i) {
      CHECK(g.topk[i].size() == k);
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) stored.insert({i, g.cols[e]});
      CHECK(stored.count({i, i}) == 1);
      CHECK(std::is_sorted(g.cols.begin() + static_cast<std::ptrdiff_t>(g.offsets[i]),
                           g.cols.begin() + static_cast<std::ptrdiff_t>(g.offsets[i + 1])));
    }
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j : g.topk[i]) {
        CHECK(stored.count({i, j}) == 1);
        CHECK(stored.count({j, i}) == 1);
      }
    for (const auto& [i, j] : stored) CHECK(stored.count({j, i}) == 1);
    // Nothing beyond the union of selections and self-loops.
    for (const auto& [i, j] : stored) {
      if (i == j) continue;
      const bool ij = std::count(g.topk[i].begin(), g.topk[i].end(), j) > 0;
      const bool ji = std::count(g.topk[j].begin(), g.topk[j].end(), i) > 0;
      CHECK((ij || ji));
    }
    CHECK(g.edge_list().size() == g.undirected_edges());
  }
}

TEST_CASE("large k gives the complete graph") {
  std::mt19937_64 rng(3);
  const auto g = build_graph(testing::random_map(3, 3, 2, rng), GraphOptions{2.0, 0.05, 100});
  CHECK(g.entries() == 81);
  CHECK(g.undirected_edges() == 36);
  CHECK_THROWS_AS(build_graph(FeatureMap(1, 1, 2, 1.0), GraphOptions{}), ArgumentError);
}

TEST_CASE("2x2 grid with identical features keeps nearest neighbours first") {
  const FeatureMap f(2, 2, 3, 1.0);
  const auto g = build_graph(f, GraphOptions{2.0, 0.05, 2});
  const double dmax = std::sqrt(2.0);
  CHECK(g.d_max == doctest::Approx(dmax));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.cols[e];
      const double dy = double(i / 2) - double(j / 2), dx = double(i % 2) - double(j % 2);
      CHECK(g.affinity[e] == doctest::Approx(2.0 * std::exp(-0.05 * (dy * dy + dx * dx) / (dmax + 1e-8))));
    }
  // Node 0's two picks are its 4-neighbours 1 and 2; the diagonal 3 is farther.
  CHECK(g.topk[0] == std::vector<std::size_t>{1, 2});
  CHECK(g.topk[3] == std::vector<std::size_t>{1, 2});
}

TEST_CASE("synthetic graphs prefer same-class neighbours") {
  SceneParams p;
  p.h = p.w = 8;
  p.channels = 16;
  p.dino_dim = 8;
  const auto s = generate_scene(p, 4);
  const auto g = build_graph(s.dino, GraphOptions{2.0, 0.05, 10});
  const auto frac = [&](const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::size_t same = 0;
    for (const auto& [i, j] : edges) same += s.labels.data[i] == s.labels.data[j];
    return static_cast<double>(same) / static_cast<double>(edges.size());
  };
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = i + 1; j < 64; ++j) all.emplace_back(i, j);
  CHECK(frac(g.edge_list()) > frac(all));
}

TEST_CASE("zero edge parameters give ln 2 everywhere") {
  std::mt19937_64 rng(5);
  const auto f = testing::random_map(3, 3, 4, rng);
  auto g = build_graph(f, GraphOptions{2.0, 0.05, 3});
  edge_weights(g, f, EdgeMlpParams::zeros(4, 6));
  for (double w : g.weight) CHECK(w == doctest::Approx(0.693147).epsilon(1e-6));
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(g.degree[i] == doctest::Approx(std::log(2.0) * double(g.offsets[i + 1] - g.offsets[i])));
}

TEST_CASE("edge weights match a scalar MLP and stay positive") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 10; ++t) {
    const auto f = testing::random_map(4, 4, 3, rng, -2, 2);
    auto g = build_graph(f, GraphOptions{2.0, 0.05, 4});
    auto p = EdgeMlpParams::init(3, 5, rng);
    std::uniform_real_distribution<double> u(-3, 3);
    for (auto& v : p.b1) v = u(rng);
    p.b2 = u(rng);
    if (t == 0) p.b2 = -40.0;
    edge_weights(g, f, p);
    for (std::size_t i = 0; i < g.nodes(); ++i)
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
        const std::size_t j = g.cols[e];
        std::vector<double> x(f.pixel(i).begin(), f.pixel(i).end());
        x.insert(x.end(), f.pixel(j).begin(), f.pixel(j).end());
        double out = p.b2;
        for (std::size_t h = 0; h < 5; ++h) {
          double a = p.b1[h];
          for (std::size_t d = 0; d < 6; ++d) a += x[d] * p.w1[d * 5 + h];
          out += p.w2[h] * std::max(a, 0.0);
        }
        CHECK(g.weight[e] > 0.0);
        CHECK(g.weight[e] == doctest::Approx(softplus_ref(out)).epsilon(1e-9));
      }
    for (double d : g.degree) CHECK(d > 0.0);
  }
}

TEST_CASE("single node with a self-loop passes ReLU of its input through") {
  SparseGraph g;
  g.h = g.w = 1;
  g.offsets = {0, 1};
  g.cols = {0};
  g.affinity = {2.0};
  set_uniform_weights(g, 3.7);
  auto p = GcnParams::identity(3, 2);
  const auto out = graph_rectify(one_pixel({1.5, -2.0, 0.25}), g, p, RectifyOptions{false});
  CHECK(out.data == std::vector<double>{1.5, 0.0, 0.25});
  CHECK_THROWS_AS(set_uniform_weights(g, 0.0), ArgumentError);
}

TEST_CASE("identity rectification on non-negative input is a no-op") {
  std::mt19937_64 rng(7);
  const auto f = testing::random_map(3, 3, 4, rng, 0.0, 1.0);
  auto g = build_graph(f, GraphOptions{2.0, 0.05, 100});
  set_uniform_weights(g, 1.0);
  FeatureMap constant(3, 3, 4, 0.5);
  const auto out = graph_rectify(constant, g, GcnParams::identity(4, 2), RectifyOptions{false});
  for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("constant field on the complete graph stays constant") {
  std::mt19937_64 rng(8);
  FeatureMap f(4, 4, 3);
  for (std::size_t i = 0; i < 16; ++i) {
    f.data[i * 3] = 0.3;
    f.data[i * 3 + 1] = -1.0;
    f.data[i * 3 + 2] = 2.0;
  }
  auto g = build_graph(testing::random_map(4, 4, 2, rng), GraphOptions{2.0, 0.05, 100});
  set_uniform_weights(g, 0.4);
  const auto out = graph_rectify(f, g, GcnParams::identity(3, 2), RectifyOptions{false});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(out.data[i * 3 + c] == doctest::Approx(out.data[c]).epsilon(1e-12));
}

TEST_CASE("sparse propagation matches a dense matrix oracle on 6x6 grids") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 5; ++t) {
    const auto dino = testing::random_map(6, 6, 4, rng);
    const auto f = testing::random_map(6, 6, 5, rng);
    const auto edge = EdgeMlpParams::init(4, 8, rng);
    auto gcn = GcnParams::init(5, 2, rng);
    for (auto& v : gcn.gamma) v = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
    for (auto& v : gcn.beta) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    for (int k : {75, 35, 6}) {
      auto g = build_graph(dino, GraphOptions{2.0, 0.05, k});
      edge_weights(g, dino, edge);
      for (bool ln : {false, true}) {
        const auto sparse = graph_rectify(f, g, gcn, RectifyOptions{ln});
        const auto dense = oracle::dense_rectify(f, g, gcn, ln);
        double scale = 1e-12;
        for (double v : dense) scale = std::max(scale, std::abs(v));
        CHECK(testing::max_abs_diff(sparse.data, dense) / scale <= 1e-5);
      }
    }
  }
}

TEST_CASE("rectify input validation") {
  std::mt19937_64 rng(10);
  const auto dino = testing::random_map(3, 3, 2, rng);
  auto g = build_graph(dino, GraphOptions{});
  CHECK_THROWS_AS(graph_rectify(FeatureMap(3, 3, 2), g, GcnParams::identity(2, 2)), ArgumentError);
  set_uniform_weights(g, 1.0);
  CHECK_THROWS_AS(graph_rectify(FeatureMap(3, 3, 3), g, GcnParams::identity(2, 2)), DimensionError);
  CHECK_THROWS_AS(graph_rectify(FeatureMap(2, 3, 2), g, GcnParams::identity(2, 2)), DimensionError);
}

TEST_CASE("recompose places every channel from exactly one source") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const std::size_t C = 2 + rng() % 8, n_sem = rng() % (C + 1);
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ChannelPartition p;
    p.sem.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_sem));
    p.str.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_sem), perm.end());
    // Source values encode (subspace, column) so every output can be traced back.
    FeatureMap sem(2, 2, n_sem), str(2, 2, C - n_sem);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < n_sem; ++j) sem.data[i * n_sem + j] = 1000.0 + double(j);
      for (std::size_t j = 0; j < C - n_sem; ++j) str.data[i * (C - n_sem) + j] = 2000.0 + double(j);
    }
    const auto out = recompose(sem, str, p);
    for (std::size_t j = 0; j < n_sem; ++j) CHECK(out.at(1, 1, p.sem[j]) == 1000.0 + double(j));
    for (std::size_t j = 0; j < p.str.size(); ++j) CHECK(out.at(1, 1, p.str[j]) == 2000.0 + double(j));
  }
  ChannelPartition bad;
  bad.sem = {0, 1};
  bad.str = {1};
  CHECK_THROWS_AS(recompose(FeatureMap(1, 1, 2), FeatureMap(1, 1, 1), bad), ArgumentError);
  bad.str = {2};
  CHECK_THROWS_AS(recompose(FeatureMap(1, 1, 1), FeatureMap(1, 1, 1), bad), DimensionError);
}

TEST_CASE("rectifier forward matches the free functions") {
  std::mt19937_64 rng(12);
  const auto dino = testing::random_map(4, 4, 3, rng);
  const auto f = testing::random_map(4, 4, 5, rng);
  const auto edge = EdgeMlpParams::init(3, 6, rng);
  const auto gcn = GcnParams::init(5, 2, rng);
  const auto topo = build_graph(dino, GraphOptions{2.0, 0.05, 4});
  GraphRectifier r(edge, gcn);
  const auto out = r.forward(f, topo, dino);
  auto g = topo;
  edge_weights(g, dino, edge);
  CHECK(out == graph_rectify(f, g, gcn));
  CHECK(r.weighted_graph().weight == g.weight);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  std::mt19937_64 rng(13);
  const auto dino = testing::random_map(4, 4, 3, rng);
  const auto f = testing::random_map(4, 4, 5, rng);
  GraphRectifier r(EdgeMlpParams::init(3, 6, rng), GcnParams::init(5, 2, rng));
  CHECK_THROWS_AS(r.backward(FeatureMap(4, 4, 5)), ArgumentError);
  r.forward(f, build_graph(dino, GraphOptions{2.0, 0.05, 4}), dino);
  const auto g = r.backward(FeatureMap(4, 4, 5));
  for (double v : g.d_f_str.data) CHECK(v == 0.0);
  auto edge = g.edge;
  edge.visit([](const std::string&, std::span<double> s) {
    for (double v : s) CHECK(v == 0.0);
  });
  auto gcn = g.gcn;
  gcn.visit([](const std::string&, std::span<double> s) {
    for (double v : s) CHECK(v == 0.0);
  });
}

TEST_CASE("rectifier gradients match central differences") {
  std::mt19937_64 rng(14);
  const auto dino = testing::random_map(4, 4, 4, rng);
  const auto f = testing::random_map(4, 4, 6, rng);
  const auto up = testing::random_map(4, 4, 6, rng);
  auto edge = EdgeMlpParams::init(4, 5, rng);
  auto gcn = GcnParams::init(6, 2, rng);
  for (auto& v : gcn.gamma) v += 0.3;
  const auto topo = build_graph(dino, GraphOptions{2.0, 0.05, 4});
  const auto loss = [&](const EdgeMlpParams& e, const GcnParams& g) {
    GraphRectifier r(e, g);
    const auto& out = r.forward(f, topo, dino);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * up.data[i];
    return s;
  };
  GraphRectifier r(edge, gcn);
  r.forward(f, topo, dino);
  auto grads = r.backward(up);

  const double h = 1e-6;
  std::vector<double> analytic, numeric;
  auto probe = [&](std::span<double> x, std::span<double> a) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + h;
      const double lp = loss(edge, gcn);
      x[i] = keep - h;
      const double lm = loss(edge, gcn);
      x[i] = keep;
      numeric.push_back((lp - lm) / (2 * h));
      analytic.push_back(a[i]);
    }
  };
  std::vector<std::span<double>> pa, ga;
  edge.visit([&](const std::string&, std::span<double> s) { pa.push_back(s); });
  gcn.visit([&](const std::string&, std::span<double> s) { pa.push_back(s); });
  grads.edge.visit([&](const std::string&, std::span<double> s) { ga.push_back(s); });
  grads.gcn.visit([&](const std::string&, std::span<double> s) { ga.push_back(s); });
  REQUIRE(pa.size() == ga.size());
  for (std::size_t b = 0; b < pa.size(); ++b) probe(pa[b], ga[b]);
  double scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  CHECK(testing::max_abs_diff(analytic, numeric) / scale < 1e-4);
}
