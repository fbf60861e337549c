#include "drseg/pdgr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drseg/error.hpp"
#include "drseg/relu.hpp"

namespace drseg {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::pair<double, double> coord(std::size_t node, std::size_t w) {
  return {static_cast<double>(node / w), static_cast<double>(node % w)};
}

void recompute_degrees(SparseGraph& g) {
  g.degree.assign(g.nodes(), 0.0);
  for (std::size_t i = 0; i < g.nodes(); ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) g.degree[i] += g.weight[e];
}

// Normalised propagation coefficients w_ij / sqrt(d_i d_j) per stored entry.
std::vector<double> normalized_coefficients(const SparseGraph& g) {
  std::vector<double> a(g.entries());
  for (std::size_t i = 0; i < g.nodes(); ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
      a[e] = g.weight[e] / std::sqrt(g.degree[i] * g.degree[g.cols[e]]);
  return a;
}

// out = A_hat * in, both N x c.
void propagate(const SparseGraph& g, std::span<const double> coeff, std::span<const double> in, std::size_t c,
               std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < g.nodes(); ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const double a = coeff[e];
      const double* src = in.data() + g.cols[e] * c;
      double* dst = out.data() + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += a * src[ch];
    }
}

// out = in * W for N x c rows and a c x c matrix.
void project(std::span<const double> in, std::span<const double> w, std::size_t n, std::size_t c,
             std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < c; ++a) {
      const double v = in[i * c + a];
      if (v == 0.0) continue;
      for (std::size_t b = 0; b < c; ++b) out[i * c + b] += v * w[a * c + b];
    }
}

struct GcnTrace {
  std::vector<std::vector<double>> h, p, z;
  std::vector<double> xhat, inv_std;
};

FeatureMap gcn_forward(const FeatureMap& f_str, const SparseGraph& g, const GcnParams& params,
                       const RectifyOptions& opt, GcnTrace* trace) {
  if (f_str.h != g.h || f_str.w != g.w) throw DimensionError("graph_rectify: grid differs from graph");
  if (f_str.c != params.c) throw DimensionError("graph_rectify: channel count differs from projection width");
  if (!g.has_weights()) throw ArgumentError("graph_rectify: graph has no edge weights");
  const std::size_t N = g.nodes(), C = f_str.c, L = params.w.size();
  const auto coeff = normalized_coefficients(g);

  GcnTrace t;
  t.h.push_back(f_str.data);
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> p(N * C), z(N * C);
    propagate(g, coeff, t.h[l], C, p);
    project(p, params.w[l], N, C, z);
    t.p.push_back(std::move(p));
    if (l + 1 < L) {
      std::vector<double> next(z);
      for (auto& v : next) v = relu(v);
      t.h.push_back(std::move(next));
    }
    t.z.push_back(std::move(z));
  }

  FeatureMap out(f_str.h, f_str.w, C);
  const auto& zl = t.z.back();
  if (!opt.layer_norm || C == 0) {
    out.data = zl;
  } else {
    t.xhat.resize(N * C);
    t.inv_std.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < C; ++c) mu += zl[i * C + c];
      mu /= static_cast<double>(C);
      for (std::size_t c = 0; c < C; ++c) var += (zl[i * C + c] - mu) * (zl[i * C + c] - mu);
      var /= static_cast<double>(C);
      const double inv = 1.0 / std::sqrt(var + opt.ln_epsilon);
      t.inv_std[i] = inv;
      for (std::size_t c = 0; c < C; ++c) {
        const double xh = (zl[i * C + c] - mu) * inv;
        t.xhat[i * C + c] = xh;
        out.data[i * C + c] = params.gamma[c] * xh + params.beta[c];
      }
    }
  }
  if (trace) *trace = std::move(t);
  return out;
}

} // namespace

double affinity(std::span<const double> f_i, std::span<const double> f_j, std::pair<double, double> c_i,
                std::pair<double, double> c_j, double d_max, double sigma_f, double sigma_s, double epsilon) {
  if (f_i.size() != f_j.size()) throw DimensionError("affinity: feature widths differ");
  double dot = 0.0, ni = 0.0, nj = 0.0;
  for (std::size_t d = 0; d < f_i.size(); ++d) {
    dot += f_i[d] * f_j[d];
    ni += f_i[d] * f_i[d];
    nj += f_j[d] * f_j[d];
  }
  // sqrt(ni) * sqrt(nj) rather than sqrt(ni * nj) keeps the product order-independent.
  const double denom = std::sqrt(ni) * std::sqrt(nj);
  const double cos = denom > 0.0 ? dot / denom : 0.0;
  const double dy = c_i.first - c_j.first;
  const double dx = c_i.second - c_j.second;
  return sigma_f * cos * cos * std::exp(-sigma_s * (dy * dy + dx * dx) / (d_max + epsilon));
}

SparseGraph build_graph(const FeatureMap& dino, const GraphOptions& opt) {
  const std::size_t N = dino.nodes();
  if (N < 2) throw ArgumentError("build_graph needs at least two nodes");
  if (opt.top_k < 1) throw ArgumentError("top_k must be >= 1");
  SparseGraph g;
  g.h = dino.h;
  g.w = dino.w;
  g.d_max = std::hypot(static_cast<double>(dino.h - 1), static_cast<double>(dino.w - 1));
  const std::size_t k = std::min(static_cast<std::size_t>(opt.top_k), N - 1);

  std::vector<std::vector<std::size_t>> adj(N);
  g.topk.resize(N);
  std::vector<double> a(N);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < N; ++i) {
    order.clear();
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) continue;
      a[j] = affinity(dino.pixel(i), dino.pixel(j), coord(i, g.w), coord(j, g.w), g.d_max, opt.sigma_f, opt.sigma_s,
                      opt.epsilon);
      order.push_back(j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t x, std::size_t y) { return a[x] > a[y] || (a[x] == a[y] && x < y); });
    g.topk[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t j : g.topk[i]) {
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
  }
  g.offsets.push_back(0);
  for (std::size_t i = 0; i < N; ++i) {
    adj[i].push_back(i);
    std::sort(adj[i].begin(), adj[i].end());
    adj[i].erase(std::unique(adj[i].begin(), adj[i].end()), adj[i].end());
    for (std::size_t j : adj[i]) {
      g.cols.push_back(j);
      g.affinity.push_back(affinity(dino.pixel(i), dino.pixel(j), coord(i, g.w), coord(j, g.w), g.d_max,
                                    opt.sigma_f, opt.sigma_s, opt.epsilon));
    }
    g.offsets.push_back(g.cols.size());
  }
  return g;
}

std::vector<std::pair<std::size_t, std::size_t>> SparseGraph::edge_list() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < nodes(); ++i)
    for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e)
      if (cols[e] > i) out.emplace_back(i, cols[e]);
  return out;
}

void set_uniform_weights(SparseGraph& g, double w) {
  if (!(w > 0.0)) throw ArgumentError("edge weights must be positive");
  g.weight.assign(g.entries(), w);
  recompute_degrees(g);
}

nlohmann::json to_json(const SparseGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    nlohmann::json n;
    n["id"] = i;
    n["row"] = i / g.w;
    n["col"] = i % g.w;
    n["topk"] = g.topk.empty() ? std::vector<std::size_t>{} : g.topk[i];
    std::vector<std::size_t> nb;
    std::vector<double> aff, wt;
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      nb.push_back(g.cols[e]);
      aff.push_back(g.affinity[e]);
      if (g.has_weights()) wt.push_back(g.weight[e]);
    }
    n["neighbors"] = nb;
    n["affinity"] = aff;
    if (g.has_weights()) {
      n["weights"] = wt;
      n["degree"] = g.degree[i];
    }
    nodes.push_back(std::move(n));
  }
  return {{"height", g.h}, {"width", g.w}, {"d_max", g.d_max}, {"undirected_edges", g.undirected_edges()},
          {"nodes", std::move(nodes)}};
}

EdgeMlpParams EdgeMlpParams::zeros(std::size_t dino_dim, std::size_t hidden) {
  EdgeMlpParams p;
  p.in_dim = 2 * dino_dim;
  p.hidden = hidden;
  p.w1.assign(p.in_dim * hidden, 0.0);
  p.b1.assign(hidden, 0.0);
  p.w2.assign(hidden, 0.0);
  p.b2 = 0.0;
  return p;
}

EdgeMlpParams EdgeMlpParams::init(std::size_t dino_dim, std::size_t hidden, std::mt19937_64& rng) {
  EdgeMlpParams p = zeros(dino_dim, hidden);
  std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(static_cast<double>(p.in_dim)),
                                            1.0 / std::sqrt(static_cast<double>(p.in_dim)));
  for (auto& v : p.w1) v = u1(rng);
  std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(static_cast<double>(hidden)),
                                            1.0 / std::sqrt(static_cast<double>(hidden)));
  for (auto& v : p.w2) v = u2(rng);
  return p;
}

namespace {

// First-layer halves: proj_i = f * W1[0:D], proj_j = f * W1[D:2D], each N x hidden.
void edge_projections(const FeatureMap& dino, const EdgeMlpParams& p, std::vector<double>& pi,
                      std::vector<double>& pj) {
  const std::size_t D = dino.c, H = p.hidden, N = dino.nodes();
  if (p.in_dim != 2 * D) throw DimensionError("edge MLP input width differs from 2 x DINO width");
  pi.assign(N * H, 0.0);
  pj.assign(N * H, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      const double f = dino.data[n * D + d];
      const double* top = p.w1.data() + d * H;
      const double* bot = p.w1.data() + (D + d) * H;
      for (std::size_t h = 0; h < H; ++h) {
        pi[n * H + h] += f * top[h];
        pj[n * H + h] += f * bot[h];
      }
    }
}

double edge_logit(const EdgeMlpParams& p, const double* pi, const double* pj) {
  double s = p.b2;
  for (std::size_t h = 0; h < p.hidden; ++h) s += p.w2[h] * relu(pi[h] + pj[h] + p.b1[h]);
  return s;
}

} // namespace

void edge_weights(SparseGraph& g, const FeatureMap& dino, const EdgeMlpParams& params) {
  if (dino.h != g.h || dino.w != g.w) throw DimensionError("edge_weights: DINO grid differs from graph");
  std::vector<double> pi, pj;
  edge_projections(dino, params, pi, pj);
  const std::size_t H = params.hidden;
  g.weight.resize(g.entries());
  for (std::size_t i = 0; i < g.nodes(); ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
      g.weight[e] = softplus(edge_logit(params, &pi[i * H], &pj[g.cols[e] * H]));
  recompute_degrees(g);
}

GcnParams GcnParams::zeros(std::size_t c, std::size_t layers) {
  GcnParams p;
  p.c = c;
  p.w.assign(layers, std::vector<double>(c * c, 0.0));
  p.gamma.assign(c, 0.0);
  p.beta.assign(c, 0.0);
  return p;
}

GcnParams GcnParams::identity(std::size_t c, std::size_t layers) {
  GcnParams p = zeros(c, layers);
  for (auto& w : p.w)
    for (std::size_t i = 0; i < c; ++i) w[i * c + i] = 1.0;
  p.gamma.assign(c, 1.0);
  return p;
}

GcnParams GcnParams::init(std::size_t c, std::size_t layers, std::mt19937_64& rng) {
  GcnParams p = zeros(c, layers);
  if (c > 0) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(static_cast<double>(c)),
                                             1.0 / std::sqrt(static_cast<double>(c)));
    for (auto& w : p.w)
      for (auto& v : w) v = u(rng);
  }
  p.gamma.assign(c, 1.0);
  return p;
}

FeatureMap graph_rectify(const FeatureMap& f_str, const SparseGraph& g, const GcnParams& params,
                         const RectifyOptions& opt) {
  return gcn_forward(f_str, g, params, opt, nullptr);
}

FeatureMap recompose(const FeatureMap& f_sem, const FeatureMap& f_str_hat, const ChannelPartition& p) {
  const std::size_t C = p.channels();
  p.validate(C);
  if (f_sem.c != p.sem.size() || f_str_hat.c != p.str.size())
    throw DimensionError("recompose: subspace widths differ from the partition");
  if (f_sem.h != f_str_hat.h || f_sem.w != f_str_hat.w) throw DimensionError("recompose: grids differ");
  FeatureMap out(f_sem.h, f_sem.w, C);
  for (std::size_t i = 0; i < out.nodes(); ++i) {
    for (std::size_t j = 0; j < p.sem.size(); ++j) out.data[i * C + p.sem[j]] = f_sem.data[i * f_sem.c + j];
    for (std::size_t j = 0; j < p.str.size(); ++j) out.data[i * C + p.str[j]] = f_str_hat.data[i * f_str_hat.c + j];
  }
  return out;
}

GraphRectifier::GraphRectifier(EdgeMlpParams edge, GcnParams gcn, RectifyOptions opt)
    : edge_(std::move(edge)), gcn_(std::move(gcn)), opt_(opt) {}

const FeatureMap& GraphRectifier::forward(const FeatureMap& f_str, const SparseGraph& topology,
                                          const FeatureMap& dino) {
  Cache c;
  c.graph = topology;
  c.dino = dino;
  if (dino.h != topology.h || dino.w != topology.w) throw DimensionError("GraphRectifier: DINO grid differs");
  edge_projections(dino, edge_, c.proj_i, c.proj_j);
  const std::size_t H = edge_.hidden;
  c.pre.resize(c.graph.entries());
  c.graph.weight.resize(c.graph.entries());
  for (std::size_t i = 0; i < c.graph.nodes(); ++i)
    for (std::size_t e = c.graph.offsets[i]; e < c.graph.offsets[i + 1]; ++e) {
      c.pre[e] = edge_logit(edge_, &c.proj_i[i * H], &c.proj_j[c.graph.cols[e] * H]);
      c.graph.weight[e] = softplus(c.pre[e]);
    }
  recompute_degrees(c.graph);

  GcnTrace t;
  c.out = gcn_forward(f_str, c.graph, gcn_, opt_, &t);
  c.h = std::move(t.h);
  c.p = std::move(t.p);
  c.z = std::move(t.z);
  c.xhat = std::move(t.xhat);
  c.inv_std = std::move(t.inv_std);
  cache_ = std::move(c);
  return cache_->out;
}

const SparseGraph& GraphRectifier::weighted_graph() const {
  if (!cache_) throw ArgumentError("GraphRectifier: forward() has not been run");
  return cache_->graph;
}

PdgrGradients GraphRectifier::backward(const FeatureMap& d_out) const {
  if (!cache_) throw ArgumentError("GraphRectifier::backward called without a cached forward pass");
  const Cache& c = *cache_;
  const SparseGraph& g = c.graph;
  const std::size_t N = g.nodes(), C = gcn_.c, L = gcn_.w.size();
  if (d_out.h != c.out.h || d_out.w != c.out.w || d_out.c != C) throw DimensionError("PDGR backward: shape mismatch");

  PdgrGradients grad{EdgeMlpParams::zeros(c.dino.c, edge_.hidden), GcnParams::zeros(C, L),
                     FeatureMap(d_out.h, d_out.w, C)};

  // Output layer.
  std::vector<double> dz(N * C);
  if (opt_.layer_norm && C > 0) {
    for (std::size_t i = 0; i < N; ++i) {
      double mean_dx = 0.0, mean_dxx = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double dy = d_out.data[i * C + ch];
        const double xh = c.xhat[i * C + ch];
        grad.gcn.gamma[ch] += dy * xh;
        grad.gcn.beta[ch] += dy;
        mean_dx += dy * gcn_.gamma[ch];
        mean_dxx += dy * gcn_.gamma[ch] * xh;
      }
      mean_dx /= static_cast<double>(C);
      mean_dxx /= static_cast<double>(C);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double dxh = d_out.data[i * C + ch] * gcn_.gamma[ch];
        dz[i * C + ch] = c.inv_std[i] * (dxh - mean_dx - c.xhat[i * C + ch] * mean_dxx);
      }
    }
  } else {
    dz = d_out.data;
  }

  const auto coeff = normalized_coefficients(g);
  std::vector<double> d_coeff(g.entries(), 0.0);
  std::vector<double> dp(N * C), dh(N * C);
  for (std::size_t l = L; l-- > 0;) {
    const auto& W = gcn_.w[l];
    auto& dW = grad.gcn.w[l];
    const auto& p = c.p[l];
    std::fill(dp.begin(), dp.end(), 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t a = 0; a < C; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < C; ++b) {
          const double d = dz[i * C + b];
          dW[a * C + b] += p[i * C + a] * d;
          acc += d * W[a * C + b];
        }
        dp[i * C + a] = acc;
      }
    std::fill(dh.begin(), dh.end(), 0.0);
    const auto& h = c.h[l];
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
        const std::size_t j = g.cols[e];
        double dot = 0.0;
        for (std::size_t ch = 0; ch < C; ++ch) {
          dh[j * C + ch] += coeff[e] * dp[i * C + ch];
          dot += dp[i * C + ch] * h[j * C + ch];
        }
        d_coeff[e] += dot;
      }
    if (l > 0) {
      const auto& zprev = c.z[l - 1];
      for (std::size_t n = 0; n < N * C; ++n) dz[n] = zprev[n] > 0.0 ? dh[n] : 0.0;
    }
  }
  grad.d_f_str.data = dh;

  // Coefficients a_ij = w_ij / sqrt(d_i d_j) with d_i the row sum of w.
  std::vector<double> d_degree(N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.cols[e];
      const double t = -0.5 * d_coeff[e] * coeff[e];
      d_degree[i] += t / g.degree[i];
      d_degree[j] += t / g.degree[j];
    }

  const std::size_t H = edge_.hidden, D = c.dino.c;
  std::vector<double> acc_i(N * H, 0.0), acc_j(N * H, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.cols[e];
      const double dw = d_coeff[e] / std::sqrt(g.degree[i] * g.degree[j]) + d_degree[i];
      const double ds = dw * logistic(c.pre[e]);
      if (ds == 0.0) continue;
      grad.edge.b2 += ds;
      for (std::size_t hh = 0; hh < H; ++hh) {
        const double q = c.proj_i[i * H + hh] + c.proj_j[j * H + hh] + edge_.b1[hh];
        if (q <= 0.0) continue;
        grad.edge.w2[hh] += ds * q;
        const double dq = ds * edge_.w2[hh];
        grad.edge.b1[hh] += dq;
        acc_i[i * H + hh] += dq;
        acc_j[j * H + hh] += dq;
      }
    }
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      const double f = c.dino.data[n * D + d];
      if (f == 0.0) continue;
      double* top = grad.edge.w1.data() + d * H;
      double* bot = grad.edge.w1.data() + (D + d) * H;
      for (std::size_t hh = 0; hh < H; ++hh) {
        top[hh] += f * acc_i[n * H + hh];
        bot[hh] += f * acc_j[n * H + hh];
      }
    }
  return grad;
}

} // namespace drseg
