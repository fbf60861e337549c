#include "drseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"

namespace drseg {

namespace {

using Rng = std::mt19937_64;

struct World {
  std::vector<std::size_t> semantic;     // sorted
  std::vector<int> channel_class;        // -1 for structural channels
  std::vector<double> amplitude;         // semantic bump height
  std::vector<double> base;              // structural offset
  std::vector<double> texture;           // structural texture amplitude
  std::vector<double> text;              // n_classes x C
  std::vector<double> anchors;           // n_classes x D
};

std::size_t semantic_count(const SceneParams& p) {
  return static_cast<std::size_t>(std::floor(p.rho_gen * static_cast<double>(p.channels) + 1e-9));
}

void normalize_rows(std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < cols; ++c) n += m[r * cols + c] * m[r * cols + c];
    n = std::sqrt(n);
    if (n > 0.0)
      for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] /= n;
  }
}

World make_world(const SceneParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC0FFEE));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t C = p.channels;
  const auto K = static_cast<std::size_t>(p.n_classes);

  World w;
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_sem = semantic_count(p);
  w.channel_class.assign(C, -1);
  w.amplitude.assign(C, 0.0);
  w.base.assign(C, 0.0);
  w.texture.assign(C, 0.0);
  for (std::size_t j = 0; j < n_sem; ++j) {
    const std::size_t c = order[j];
    w.semantic.push_back(c);
    w.channel_class[c] = static_cast<int>(j % K);
    w.amplitude[c] = 1.0 + uni(rng);
  }
  std::sort(w.semantic.begin(), w.semantic.end());
  for (std::size_t c = 0; c < C; ++c) {
    if (w.channel_class[c] >= 0) continue;
    w.base[c] = 0.5 + 0.5 * uni(rng);
    w.texture[c] = 0.2 + 0.2 * uni(rng);
  }

  // Text rows align with each class's bump channels; the structural part adds
  // class-specific, label-independent interference.
  w.text.assign(K * C, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double sem_norm = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      if (w.channel_class[c] == static_cast<int>(k)) {
        w.text[k * C + c] = w.amplitude[c];
        sem_norm += w.amplitude[c] * w.amplitude[c];
      }
    sem_norm = std::sqrt(std::max(sem_norm, 1.0));
    for (std::size_t c = 0; c < C; ++c)
      if (w.channel_class[c] < 0) w.text[k * C + c] = p.text_structural_weight * sem_norm * gauss(rng) / 2.0;
  }
  normalize_rows(w.text, K, C);

  // Class anchors: Gram-Schmidt orthonormal when K <= D so cos^2 affinity separates classes.
  const std::size_t D = p.dino_dim;
  w.anchors.assign(K * D, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> v(D);
    for (auto& x : v) x = gauss(rng);
    if (k < D)
      for (std::size_t j = 0; j < k; ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += v[d] * w.anchors[j * D + d];
        for (std::size_t d = 0; d < D; ++d) v[d] -= dot * w.anchors[j * D + d];
      }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    std::copy(v.begin(), v.end(), w.anchors.begin() + static_cast<std::ptrdiff_t>(k * D));
  }
  normalize_rows(w.anchors, K, D);
  return w;
}

LabelGrid voronoi_labels(const SceneParams& p, Rng& rng) {
  const std::size_t N = p.h * p.w;
  const auto K = static_cast<std::size_t>(p.n_classes);
  std::size_t per_class = static_cast<std::size_t>(std::max(1, p.seeds_per_class));
  if (K * per_class > N) per_class = 1;
  std::vector<std::size_t> cells(N);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  const std::size_t n_sites = K * per_class;

  LabelGrid g(p.h, p.w);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      double best = std::numeric_limits<double>::infinity();
      int label = 0;
      for (std::size_t s = 0; s < n_sites; ++s) {
        const double dy = static_cast<double>(cells[s] / p.w) - static_cast<double>(y);
        const double dx = static_cast<double>(cells[s] % p.w) - static_cast<double>(x);
        const double d = dy * dy + dx * dx;
        const int cls = static_cast<int>(s % K);
        if (d < best || (d == best && cls < label)) {
          best = d;
          label = cls;
        }
      }
      g.at(y, x) = label;
    }
  return g;
}

// Zero-mean, unit-variance field smoothed by two 3x3 box passes.
std::vector<double> smooth_field(std::size_t h, std::size_t w, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> f(h * w);
  for (auto& v : f) v = gauss(rng);
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> g(h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
            const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w))
              continue;
            acc += f[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
            ++n;
          }
        g[y * w + x] = acc / n;
      }
    f.swap(g);
  }
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  for (auto& v : f) v = sd > 0 ? (v - mean) / sd : 0.0;
  return f;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa * bb) + 1e-12);
}

void check_dino_coherence(const LabelGrid& labels, const FeatureMap& dino) {
  double same = 0, diff = 0;
  std::size_t n_same = 0, n_diff = 0;
  const std::size_t N = dino.nodes();
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j) {
      const double c = cosine(dino.pixel(i), dino.pixel(j));
      if (labels.data[i] == labels.data[j]) {
        same += c;
        ++n_same;
      } else {
        diff += c;
        ++n_diff;
      }
    }
  if (n_same == 0 || n_diff == 0) return;
  constexpr double kMargin = 0.05;
  if (same / static_cast<double>(n_same) <= diff / static_cast<double>(n_diff) + kMargin)
    throw ArgumentError("generated DINO features are not class-coherent; reduce dino_jitter");
}

} // namespace

SyntheticScene generate_scene(const SceneParams& p, std::uint64_t seed) {
  if (p.h < 4 || p.w < 4) throw ArgumentError("scene grid must be at least 4x4");
  if (p.channels < 8) throw ArgumentError("scene needs at least 8 channels");
  if (p.dino_dim < 1) throw ArgumentError("dino_dim must be >= 1");
  if (p.n_classes < 2) throw ArgumentError("scene needs at least 2 classes");
  if (static_cast<std::size_t>(p.n_classes) > p.h * p.w) throw ArgumentError("more classes than grid cells");
  if (p.noise < 0.0 || p.dino_jitter < 0.0) throw ArgumentError("noise levels must be >= 0");
  if (p.rho_gen < 0.0 || p.rho_gen > 1.0) throw ArgumentError("rho_gen must be in [0,1]");

  std::vector<int> angles = p.rotations;
  if (angles.empty()) angles = p.h == p.w ? std::vector<int>{0, 90, 180, 270} : std::vector<int>{0};
  if (std::find(angles.begin(), angles.end(), 0) == angles.end()) angles.insert(angles.begin(), 0);
  for (int a : angles) {
    if (a != 0 && a != 90 && a != 180 && a != 270) throw ArgumentError("rotation angles must be multiples of 90");
    if (a != 0 && p.h != p.w) throw ArgumentError("rotated views need a square grid");
  }

  const World world = make_world(p, p.world_seed.value_or(seed));
  Rng rng(derive_seed(seed, 1));
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticScene s;
  s.n_classes = static_cast<std::size_t>(p.n_classes);
  s.labels = voronoi_labels(p, rng);
  s.semantic_truth = world.semantic;
  s.channel_class = world.channel_class;
  s.amplitude = world.amplitude;
  s.text = world.text;

  const std::size_t C = p.channels;
  FeatureMap clean(p.h, p.w, C);
  for (std::size_t c = 0; c < C; ++c) {
    if (world.channel_class[c] >= 0) {
      for (std::size_t i = 0; i < clean.nodes(); ++i)
        clean.data[i * C + c] = s.labels.data[i] == world.channel_class[c] ? world.amplitude[c] : 0.0;
    } else {
      const auto field = smooth_field(p.h, p.w, rng);
      for (std::size_t i = 0; i < clean.nodes(); ++i)
        clean.data[i * C + c] = world.base[c] + world.texture[c] * field[i];
    }
  }
  for (int a : angles) {
    FeatureMap view = rotate(clean, a);
    if (p.noise > 0.0)
      for (auto& v : view.data) v += p.noise * gauss(rng);
    s.clip.emplace(a, std::move(view));
  }

  const std::size_t D = p.dino_dim;
  s.dino = FeatureMap(p.h, p.w, D);
  for (std::size_t i = 0; i < s.dino.nodes(); ++i) {
    const auto k = static_cast<std::size_t>(s.labels.data[i]);
    for (std::size_t d = 0; d < D; ++d)
      s.dino.data[i * D + d] = world.anchors[k * D + d] + p.dino_jitter * gauss(rng);
  }
  check_dino_coherence(s.labels, s.dino);

  s.boundary.assign(p.h * p.w, 0);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      const int l = s.labels.at(y, x);
      const bool edge = (y > 0 && s.labels.at(y - 1, x) != l) || (y + 1 < p.h && s.labels.at(y + 1, x) != l) ||
                        (x > 0 && s.labels.at(y, x - 1) != l) || (x + 1 < p.w && s.labels.at(y, x + 1) != l);
      s.boundary[y * p.w + x] = edge ? 1 : 0;
    }
  return s;
}

std::vector<SyntheticScene> generate_dataset(std::size_t n_scenes, SceneParams p, std::uint64_t seed) {
  if (n_scenes < 1) throw ArgumentError("dataset needs at least one scene");
  p.world_seed = seed;
  std::vector<SyntheticScene> out;
  out.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) out.push_back(generate_scene(p, derive_seed(seed, i)));
  return out;
}

double class_selectivity_margin(const SyntheticScene& s, std::size_t channel, int cls) {
  const FeatureMap& f = s.canonical();
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    const double v = f.data[i * f.c + channel];
    if (s.labels.data[i] == cls) {
      in += v;
      ++n_in;
    } else {
      out += v;
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) throw ArgumentError("class does not split the scene");
  return in / static_cast<double>(n_in) - out / static_cast<double>(n_out);
}

} // namespace drseg
