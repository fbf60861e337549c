#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/spsd.hpp"
#include "drseg/tensor.hpp"

namespace drseg {

struct GraphOptions {
  double sigma_f = 2.0;
  double sigma_s = 0.05;
  int top_k = 75;
  double epsilon = 1e-8;
};

// Squared-cosine feature similarity with Gaussian decay in grid distance.
// A zero feature vector has cosine 0 with everything.
double affinity(std::span<const double> f_i, std::span<const double> f_j, std::pair<double, double> c_i,
                std::pair<double, double> c_j, double d_max, double sigma_f, double sigma_s, double epsilon = 1e-8);

// Top-k affinity graph over an h x w lattice, symmetrised by union, with self-loops.
// Adjacency is stored in CSR form; every row holds its own node.
struct SparseGraph {
  std::size_t h = 0;
  std::size_t w = 0;
  double d_max = 0.0;
  std::vector<std::vector<std::size_t>> topk;  // selected neighbours before symmetrisation
  std::vector<std::size_t> offsets;            // N + 1
  std::vector<std::size_t> cols;               // sorted within a row
  std::vector<double> affinity;                // per stored entry
  std::vector<double> weight;                  // per stored entry, > 0 once edge_weights has run
  std::vector<double> degree;                  // row sums of weight

  std::size_t nodes() const { return h * w; }
  std::size_t entries() const { return cols.size(); }
  // Undirected, non-self edges.
  std::size_t undirected_edges() const { return (cols.size() - nodes()) / 2; }
  std::vector<std::pair<std::size_t, std::size_t>> edge_list() const;  // i < j pairs
  bool has_weights() const { return weight.size() == cols.size(); }
};

SparseGraph build_graph(const FeatureMap& dino, const GraphOptions& opt);

// Assign uniform edge weights (test mode) and recompute degrees.
void set_uniform_weights(SparseGraph& g, double w);

nlohmann::json to_json(const SparseGraph& g);

struct EdgeMlpParams {
  std::size_t in_dim = 0;    // 2D
  std::size_t hidden = 0;
  std::vector<double> w1;    // in_dim x hidden
  std::vector<double> b1;    // hidden
  std::vector<double> w2;    // hidden
  double b2 = 0.0;

  static EdgeMlpParams zeros(std::size_t dino_dim, std::size_t hidden);
  static EdgeMlpParams init(std::size_t dino_dim, std::size_t hidden, std::mt19937_64& rng);
  std::size_t count() const { return w1.size() + b1.size() + w2.size() + 1; }

  template <class F>
  void visit(F&& f) {
    f("edge.w1", std::span<double>(w1));
    f("edge.b1", std::span<double>(b1));
    f("edge.w2", std::span<double>(w2));
    f("edge.b2", std::span<double>(&b2, 1));
  }
  friend bool operator==(const EdgeMlpParams&, const EdgeMlpParams&) = default;
};

// w_ij = softplus(MLP([f_i || f_j])) for every stored entry, including self-loops.
void edge_weights(SparseGraph& g, const FeatureMap& dino, const EdgeMlpParams& params);

struct GcnParams {
  std::size_t c = 0;
  std::vector<std::vector<double>> w;  // one c x c projection per layer
  std::vector<double> gamma;
  std::vector<double> beta;

  static GcnParams zeros(std::size_t c, std::size_t layers);
  static GcnParams identity(std::size_t c, std::size_t layers);
  static GcnParams init(std::size_t c, std::size_t layers, std::mt19937_64& rng);

  template <class F>
  void visit(F&& f) {
    for (std::size_t l = 0; l < w.size(); ++l) f("gcn.w" + std::to_string(l), std::span<double>(w[l]));
    f("gcn.gamma", std::span<double>(gamma));
    f("gcn.beta", std::span<double>(beta));
  }
  friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

struct RectifyOptions {
  bool layer_norm = true;  // false: plain linear output layer (test mode)
  double ln_epsilon = 1e-5;
};

// Degree-normalised propagation over a weighted graph; ReLU between layers,
// LayerNorm with affine on the output layer.
FeatureMap graph_rectify(const FeatureMap& f_str, const SparseGraph& g, const GcnParams& params,
                         const RectifyOptions& opt = {});

// Places F_sem and rectified F_str back at their original channel positions.
FeatureMap recompose(const FeatureMap& f_sem, const FeatureMap& f_str_hat, const ChannelPartition& p);

struct PdgrGradients {
  EdgeMlpParams edge;
  GcnParams gcn;
  FeatureMap d_f_str;
};

// Edge weighting plus rectification with a cached forward pass. The graph topology and
// DINO features are treated as constants.
class GraphRectifier {
public:
  GraphRectifier(EdgeMlpParams edge, GcnParams gcn, RectifyOptions opt = {});

  const FeatureMap& forward(const FeatureMap& f_str, const SparseGraph& topology, const FeatureMap& dino);
  PdgrGradients backward(const FeatureMap& d_out) const;

  const SparseGraph& weighted_graph() const;

private:
  struct Cache {
    SparseGraph graph;                 // with weights
    FeatureMap dino;
    std::vector<double> proj_i, proj_j;  // N x hidden halves of the first MLP layer
    std::vector<double> pre;           // per entry: MLP output before softplus
    std::vector<std::vector<double>> h;  // layer inputs, N x c
    std::vector<std::vector<double>> p;  // propagated inputs, N x c
    std::vector<std::vector<double>> z;  // pre-activations, N x c
    std::vector<double> xhat, inv_std;   // LayerNorm state
    FeatureMap out;
  };

  EdgeMlpParams edge_;
  GcnParams gcn_;
  RectifyOptions opt_;
  std::optional<Cache> cache_;
};

} // namespace drseg
