#include "drseg/spsd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "drseg/error.hpp"
#include "drseg/grid_ops.hpp"
#include "drseg/metrics.hpp"
#include "drseg/ugaf.hpp"

namespace drseg {

PrototypeBank collect_prototypes(const Dataset& data, std::size_t n_p, std::uint64_t seed) {
  if (n_p == 0) throw ArgumentError("n_p must be >= 1");
  const std::size_t K = data.n_classes();
  const std::size_t C = data.channels();
  std::vector<std::vector<PrototypeSource>> pool(K);
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    const Scene& sc = data.scenes[s];
    if (!sc.labels) continue;
    if (sc.canonical().c != C) throw DimensionError("scene feature width differs from text width");
    if (sc.labels->h != sc.canonical().h || sc.labels->w != sc.canonical().w)
      throw DimensionError("labels and features differ in grid size");
    for (std::size_t i = 0; i < sc.labels->data.size(); ++i) {
      const int l = sc.labels->data[i];
      if (l < 0 || static_cast<std::size_t>(l) >= K) throw ArgumentError("label out of range");
      pool[static_cast<std::size_t>(l)].push_back({s, i});
    }
  }

  PrototypeBank bank{K, n_p, C, {}, {}};
  bank.rows.reserve(K * n_p * C);
  for (std::size_t k = 0; k < K; ++k) {
    auto& cells = pool[k];
    if (cells.empty()) throw ArgumentError("class " + std::to_string(k) + " is absent from every scene");
    std::mt19937_64 rng(derive_seed(seed, k));
    std::vector<PrototypeSource> picked;
    if (cells.size() >= n_p) {
      for (std::size_t i = 0; i < n_p; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
        std::swap(cells[i], cells[pick(rng)]);
      }
      picked.assign(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(n_p));
      std::sort(picked.begin(), picked.end(),
                [](const auto& a, const auto& b) { return std::tie(a.scene, a.cell) < std::tie(b.scene, b.cell); });
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
      for (std::size_t i = 0; i < n_p; ++i) picked.push_back(cells[pick(rng)]);
    }
    for (const auto& src : picked) {
      const auto px = data.scenes[src.scene].canonical().pixel(src.cell);
      double norm = 0.0;
      for (double v : px) norm += v * v;
      norm = std::sqrt(norm);
      for (double v : px) bank.rows.push_back(norm > 0.0 ? v / norm : 0.0);
      bank.sources.push_back(src);
    }
  }
  return bank;
}

std::vector<double> channel_entropy(const PrototypeBank& bank, double epsilon) {
  const std::size_t K = bank.n_classes, C = bank.c;
  std::vector<double> u(K * C, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < bank.n_p; ++i) {
      const auto r = bank.row(k * bank.n_p + i);
      for (std::size_t c = 0; c < C; ++c) u[k * C + c] += std::max(0.0, r[c]);
    }
    for (std::size_t c = 0; c < C; ++c) u[k * C + c] /= static_cast<double>(bank.n_p);
  }
  std::vector<double> h(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += u[k * C + c];
    for (std::size_t k = 0; k < K; ++k) {
      const double p = u[k * C + c] / (total + epsilon);
      h[c] -= p * std::log2(p + epsilon);
    }
  }
  return h;
}

std::vector<double> channel_similarity(const PrototypeBank& bank) {
  const std::size_t K = bank.n_classes, C = bank.c;
  if (K < 2) throw ArgumentError("channel_similarity needs at least two classes");
  // Sum over cross-class pairs factorises into products of per-class column sums.
  std::vector<double> col(K * C, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < bank.n_p; ++i) {
      const auto r = bank.row(k * bank.n_p + i);
      for (std::size_t c = 0; c < C; ++c) col[k * C + c] += r[c];
    }
  const double n = static_cast<double>(bank.n_p);
  const double pairs = n * n * static_cast<double>(K * (K - 1) / 2);
  std::vector<double> s(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t l = k + 1; l < K; ++l) acc += col[k * C + c] * col[l * C + c];
    s[c] = acc / pairs;
  }
  return s;
}

std::vector<double> normalized_rank(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(n, 0.0);
  if (n < 2) return rank;
  for (std::size_t pos = 0; pos < n; ++pos)
    rank[order[pos]] = static_cast<double>(pos) / static_cast<double>(n - 1);
  return rank;
}

ChannelScores channel_scores(std::span<const double> entropy, std::span<const double> similarity, double lambda) {
  if (entropy.size() != similarity.size()) throw DimensionError("entropy and similarity lengths differ");
  const auto rh = normalized_rank(entropy);
  const auto rs = normalized_rank(similarity);
  ChannelScores out;
  out.entropy.assign(entropy.begin(), entropy.end());
  out.similarity.assign(similarity.begin(), similarity.end());
  out.lambda = lambda;
  out.score.resize(entropy.size());
  for (std::size_t c = 0; c < entropy.size(); ++c)
    out.score[c] = lambda * (1.0 - rh[c]) + (1.0 - lambda) * (1.0 - rs[c]);
  return out;
}

std::size_t semantic_channel_count(double rho, std::size_t c) {
  // The small bias keeps products such as 0.7 * 10 from flooring to 6.
  return std::min(c, static_cast<std::size_t>(std::floor(rho * static_cast<double>(c) + 1e-9)));
}

ChannelPartition partition_channels(const ChannelScores& scores, double rho) {
  if (rho < 0.0 || rho > 1.0) throw ArgumentError("rho must be in [0,1]");
  const std::size_t C = scores.score.size();
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores.score[a] > scores.score[b]; });
  const std::size_t n_sem = semantic_channel_count(rho, C);
  ChannelPartition p;
  p.sem.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_sem));
  p.str.assign(order.begin() + static_cast<std::ptrdiff_t>(n_sem), order.end());
  p.scores = scores.score;
  p.lambda = scores.lambda;
  p.rho = rho;
  return p;
}

void ChannelPartition::validate(std::size_t c) const {
  if (sem.size() + str.size() != c) throw ArgumentError("partition does not cover every channel");
  std::vector<bool> seen(c, false);
  for (const auto* list : {&sem, &str})
    for (std::size_t i : *list) {
      if (i >= c) throw ArgumentError("partition index out of range");
      if (seen[i]) throw ArgumentError("partition index appears twice");
      seen[i] = true;
    }
}

SplitFeatures split_features(const FeatureMap& f, const ChannelPartition& p) {
  if (p.channels() != f.c) throw DimensionError("partition width differs from feature width");
  p.validate(f.c);
  SplitFeatures out{FeatureMap(f.h, f.w, p.sem.size()), FeatureMap(f.h, f.w, p.str.size())};
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    const auto px = f.pixel(i);
    for (std::size_t j = 0; j < p.sem.size(); ++j) out.sem.data[i * p.sem.size() + j] = px[p.sem[j]];
    for (std::size_t j = 0; j < p.str.size(); ++j) out.str.data[i * p.str.size() + j] = px[p.str[j]];
  }
  return out;
}

nlohmann::json to_json(const ChannelPartition& p) {
  return {{"scores", p.scores}, {"sem_indices", p.sem}, {"str_indices", p.str}, {"lambda", p.lambda}, {"rho", p.rho}};
}

ChannelPartition partition_from_json(const nlohmann::json& j) {
  ChannelPartition p;
  try {
    p.scores = j.at("scores").get<std::vector<double>>();
    p.sem = j.at("sem_indices").get<std::vector<std::size_t>>();
    p.str = j.at("str_indices").get<std::vector<std::size_t>>();
    p.lambda = j.at("lambda").get<double>();
    p.rho = j.at("rho").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed partition JSON: ") + e.what());
  }
  p.validate(p.channels());
  return p;
}

namespace {

FeatureMap slice_channels(const FeatureMap& f, std::span<const std::size_t> channels) {
  FeatureMap out(f.h, f.w, channels.size());
  for (std::size_t i = 0; i < f.nodes(); ++i)
    for (std::size_t j = 0; j < channels.size(); ++j) out.data[i * channels.size() + j] = f.data[i * f.c + channels[j]];
  return out;
}

TextEmbeddings slice_text(const TextEmbeddings& t, std::span<const std::size_t> channels) {
  TextEmbeddings out{t.n_classes, channels.size(), std::vector<double>(t.n_classes * channels.size())};
  for (std::size_t k = 0; k < t.n_classes; ++k)
    for (std::size_t j = 0; j < channels.size(); ++j) out.data[k * channels.size() + j] = t.data[k * t.c + channels[j]];
  return out;
}

double zero_shot_miou(const Dataset& data, std::span<const std::size_t> channels) {
  std::vector<LabelGrid> truth, pred;
  for (const auto& s : data.scenes) {
    if (!s.labels) throw ArgumentError("zero-shot evaluation needs labelled scenes");
    truth.push_back(*s.labels);
    pred.push_back(zero_shot_segment(s, data.text, channels));
  }
  return mean_iou(truth, pred, data.n_classes());
}

} // namespace

LabelGrid zero_shot_segment(const Scene& scene, const TextEmbeddings& text, std::span<const std::size_t> channels) {
  if (channels.empty()) throw ArgumentError("zero-shot segmentation with no channels");
  const TextEmbeddings t = slice_text(text, channels);
  std::vector<std::pair<int, CorrelationVolume>> views;
  for (const auto& [angle, f] : scene.clip) views.emplace_back(angle, correlation(slice_channels(f, channels), t));
  return argmax_labels(aggregate_rotations(views).values);
}

double mask_channel_eval(const Dataset& data, std::size_t c) {
  const std::size_t C = data.channels();
  if (c >= C) throw ArgumentError("channel index out of range");
  std::vector<std::size_t> all(C);
  std::iota(all.begin(), all.end(), 0);
  const double full = zero_shot_miou(data, all);

  // Zero-fill the channel in the features and in the text embeddings.
  Dataset masked = data;
  for (auto& s : masked.scenes)
    for (auto& [angle, f] : s.clip)
      for (std::size_t i = 0; i < f.nodes(); ++i) f.data[i * C + c] = 0.0;
  for (std::size_t k = 0; k < masked.text.n_classes; ++k) masked.text.data[k * C + c] = 0.0;
  return full - zero_shot_miou(masked, all);
}

double subspace_zero_shot_eval(const Dataset& data, std::span<const double> scores, double retain_ratio,
                               RankEnd end) {
  if (!(retain_ratio > 0.0 && retain_ratio <= 1.0)) throw ArgumentError("retain_ratio must be in (0,1]");
  const std::size_t C = data.channels();
  if (scores.size() != C) throw DimensionError("score vector width differs from feature width");
  const std::size_t keep = semantic_channel_count(retain_ratio, C);
  if (keep == 0) throw ArgumentError("retain_ratio keeps no channels");
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  if (end == RankEnd::top) kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  else kept.assign(order.end() - static_cast<std::ptrdiff_t>(keep), order.end());
  std::sort(kept.begin(), kept.end());
  return zero_shot_miou(data, kept);
}

} // namespace drseg
