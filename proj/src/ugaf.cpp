#include "drseg/ugaf.hpp"

#include <algorithm>
#include <cmath>

#include "drseg/error.hpp"
#include "drseg/relu.hpp"
#include "drseg/grid_ops.hpp"

namespace drseg {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_same_shape(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) throw DimensionError(std::string(what) + ": shape mismatch");
}

// Zero-padded depthwise cross-correlation of one E x (h*w) stack with a (2r+1)^2 kernel per channel.
void depthwise_conv(std::span<const double> in, std::span<const double> kernel, std::span<const double> bias,
                    std::size_t e_dim, std::size_t h, std::size_t w, int r, std::span<double> out) {
  const std::size_t n = h * w;
  const int kw = 2 * r + 1;
  for (std::size_t e = 0; e < e_dim; ++e) {
    const double* k = kernel.data() + e * static_cast<std::size_t>(kw * kw);
    const double* src = in.data() + e * n;
    double* dst = out.data() + e * n;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = bias[e];
        for (int dy = -r; dy <= r; ++dy) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (int dx = -r; dx <= r; ++dx) {
            const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            acc += k[(dy + r) * kw + (dx + r)] * src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          }
        }
        dst[y * w + x] += acc;
      }
  }
}

void depthwise_conv_backward(std::span<const double> in, std::span<const double> kernel,
                             std::span<const double> d_out, std::size_t e_dim, std::size_t h, std::size_t w, int r,
                             std::span<double> d_in, std::span<double> d_kernel, std::span<double> d_bias) {
  const std::size_t n = h * w;
  const int kw = 2 * r + 1;
  for (std::size_t e = 0; e < e_dim; ++e) {
    const double* k = kernel.data() + e * static_cast<std::size_t>(kw * kw);
    double* dk = d_kernel.data() + e * static_cast<std::size_t>(kw * kw);
    const double* src = in.data() + e * n;
    double* dsrc = d_in.data() + e * n;
    const double* g = d_out.data() + e * n;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double gy = g[y * w + x];
        if (gy == 0.0) continue;
        d_bias[e] += gy;
        for (int dy = -r; dy <= r; ++dy) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (int dx = -r; dx <= r; ++dx) {
            const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t q = static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
            const std::size_t ki = static_cast<std::size_t>((dy + r) * kw + (dx + r));
            dk[ki] += gy * src[q];
            dsrc[q] += gy * k[ki];
          }
        }
      }
  }
}

// Runs the two-branch decoder on every class slice. xo/xr are h x w x N_c.
FeatureMap decode_forward(const FusionParams& p, std::size_t h, std::size_t w, std::size_t classes,
                          std::vector<double> xo, std::vector<double> xr, FusionHead::DecoderCache* cache) {
  const std::size_t E = p.e;
  const std::size_t N = h * w;
  FeatureMap logits(h, w, classes);
  std::vector<FusionHead::SliceCache> slices(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    auto& s = slices[k];
    s.eo.assign(E * N, 0.0);
    s.er.assign(E * N, 0.0);
    s.ms.assign(E * N, 0.0);
    s.fz.assign(E * N, 0.0);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t i = 0; i < N; ++i) {
        s.eo[e * N + i] = p.embed_ori_w[e] * xo[i * classes + k] + p.embed_ori_b[e];
        s.er[e * N + i] = p.embed_ref_w[e] * xr[i * classes + k] + p.embed_ref_b[e];
      }
    depthwise_conv(s.er, p.conv3_w, p.conv3_b, E, h, w, 1, s.ms);
    depthwise_conv(s.er, p.conv5_w, p.conv5_b, E, h, w, 2, s.ms);
    for (std::size_t e = 0; e < E; ++e) {
      const double* wrow = p.fuse_w.data() + e * 2 * E;
      for (std::size_t i = 0; i < N; ++i) {
        double z = p.fuse_b[e];
        for (std::size_t j = 0; j < E; ++j) z += wrow[j] * s.eo[j * N + i] + wrow[E + j] * relu(s.ms[j * N + i]);
        s.fz[e * N + i] = z;
      }
    }
    for (std::size_t i = 0; i < N; ++i) {
      double l = p.score_b;
      for (std::size_t e = 0; e < E; ++e) l += p.score_w[e] * relu(s.fz[e * N + i]);
      logits.data[i * classes + k] = l;
    }
  }
  if (cache) {
    cache->h = h;
    cache->w = w;
    cache->classes = classes;
    cache->xo = std::move(xo);
    cache->xr = std::move(xr);
    cache->slices = std::move(slices);
  }
  return logits;
}

// Accumulates parameter gradients into `g` and returns dL/dxo, dL/dxr (h x w x N_c).
std::pair<std::vector<double>, std::vector<double>> decode_backward(const FusionParams& p,
                                                                    const FusionHead::DecoderCache& c,
                                                                    std::span<const double> d_logits,
                                                                    FusionParams& g) {
  const std::size_t E = p.e;
  const std::size_t N = c.h * c.w;
  const std::size_t K = c.classes;
  std::vector<double> dxo(N * K, 0.0), dxr(N * K, 0.0);
  std::vector<double> dfz(E * N), deo(E * N), dms(E * N), der(E * N);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& s = c.slices[k];
    std::fill(deo.begin(), deo.end(), 0.0);
    std::fill(dms.begin(), dms.end(), 0.0);
    std::fill(der.begin(), der.end(), 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      const double dl = d_logits[i * K + k];
      g.score_b += dl;
      for (std::size_t e = 0; e < E; ++e) {
        const double z = s.fz[e * N + i];
        g.score_w[e] += dl * std::max(0.0, z);
        dfz[e * N + i] = z > 0.0 ? dl * p.score_w[e] : 0.0;
      }
    }
    for (std::size_t e = 0; e < E; ++e) {
      const double* wrow = p.fuse_w.data() + e * 2 * E;
      double* grow = g.fuse_w.data() + e * 2 * E;
      for (std::size_t i = 0; i < N; ++i) {
        const double d = dfz[e * N + i];
        if (d == 0.0) continue;
        g.fuse_b[e] += d;
        for (std::size_t j = 0; j < E; ++j) {
          const double m = s.ms[j * N + i];
          grow[j] += d * s.eo[j * N + i];
          deo[j * N + i] += d * wrow[j];
          if (m > 0.0) {
            grow[E + j] += d * m;
            dms[j * N + i] += d * wrow[E + j];
          }
        }
      }
    }
    for (std::size_t i = 0; i < E * N; ++i)
      if (s.ms[i] <= 0.0) dms[i] = 0.0;
    depthwise_conv_backward(s.er, p.conv3_w, dms, E, c.h, c.w, 1, der, g.conv3_w, g.conv3_b);
    depthwise_conv_backward(s.er, p.conv5_w, dms, E, c.h, c.w, 2, der, g.conv5_w, g.conv5_b);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t i = 0; i < N; ++i) {
        const double xo = c.xo[i * K + k];
        const double xr = c.xr[i * K + k];
        g.embed_ori_w[e] += deo[e * N + i] * xo;
        g.embed_ori_b[e] += deo[e * N + i];
        g.embed_ref_w[e] += der[e * N + i] * xr;
        g.embed_ref_b[e] += der[e * N + i];
        dxo[i * K + k] += deo[e * N + i] * p.embed_ori_w[e];
        dxr[i * K + k] += der[e * N + i] * p.embed_ref_w[e];
      }
  }
  return {std::move(dxo), std::move(dxr)};
}

} // namespace

CorrelationVolume correlation(const FeatureMap& f, const TextEmbeddings& text, double epsilon, Branch branch) {
  if (f.c != text.c) throw DimensionError("correlation: feature width differs from text width");
  std::vector<double> tnorm(text.n_classes);
  for (std::size_t k = 0; k < text.n_classes; ++k) {
    double n = 0.0;
    for (double v : text.row(k)) n += v * v;
    tnorm[k] = std::sqrt(n);
  }
  CorrelationVolume out{FeatureMap(f.h, f.w, text.n_classes), branch};
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    const auto px = f.pixel(i);
    double fn = 0.0;
    for (double v : px) fn += v * v;
    fn = std::sqrt(fn);
    for (std::size_t k = 0; k < text.n_classes; ++k) {
      const auto t = text.row(k);
      double dot = 0.0;
      for (std::size_t c = 0; c < f.c; ++c) dot += px[c] * t[c];
      out.values.data[i * text.n_classes + k] = dot / (fn * tnorm[k] + epsilon);
    }
  }
  return out;
}

FeatureMap correlation_backward(const FeatureMap& f, const TextEmbeddings& text, const FeatureMap& d_corr,
                                double epsilon) {
  if (f.c != text.c || d_corr.c != text.n_classes || d_corr.h != f.h || d_corr.w != f.w)
    throw DimensionError("correlation_backward: shape mismatch");
  const std::size_t K = text.n_classes;
  std::vector<double> tnorm(K);
  for (std::size_t k = 0; k < K; ++k) {
    double n = 0.0;
    for (double v : text.row(k)) n += v * v;
    tnorm[k] = std::sqrt(n);
  }
  FeatureMap df(f.h, f.w, f.c);
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    const auto px = f.pixel(i);
    auto out = df.pixel(i);
    double fn = 0.0;
    for (double v : px) fn += v * v;
    fn = std::sqrt(fn);
    double radial = 0.0;  // coefficient on f from the norm term
    for (std::size_t k = 0; k < K; ++k) {
      const double g = d_corr.data[i * K + k];
      if (g == 0.0) continue;
      const auto t = text.row(k);
      const double denom = fn * tnorm[k] + epsilon;
      double dot = 0.0;
      for (std::size_t c = 0; c < f.c; ++c) dot += px[c] * t[c];
      for (std::size_t c = 0; c < f.c; ++c) out[c] += g * t[c] / denom;
      if (fn > 0.0) radial -= g * dot * tnorm[k] / (fn * denom * denom);
    }
    for (std::size_t c = 0; c < f.c; ++c) out[c] += radial * px[c];
  }
  return df;
}

CorrelationVolume aggregate_rotations(const std::vector<std::pair<int, CorrelationVolume>>& volumes) {
  if (volumes.empty()) throw ArgumentError("aggregate_rotations: no volumes");
  FeatureMap acc;
  for (const auto& [angle, vol] : volumes) {
    if (angle != 0 && angle != 90 && angle != 180 && angle != 270)
      throw ArgumentError("aggregate_rotations: angle must be 0, 90, 180 or 270");
    if (angle != 0 && vol.values.h != vol.values.w)
      throw DimensionError("aggregate_rotations: rotated views need a square grid");
    FeatureMap canon = rotate(vol.values, (360 - angle) % 360);
    if (acc.data.empty()) {
      acc = std::move(canon);
    } else {
      require_same_shape(acc, canon, "aggregate_rotations");
      for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += canon.data[i];
    }
  }
  if (volumes.size() > 1) {
    const double inv = 1.0 / static_cast<double>(volumes.size());
    for (auto& v : acc.data) v *= inv;
  }
  return {std::move(acc), Branch::original};
}

UncertaintyMap uncertainty(const CorrelationVolume& c_ori, double temperature, double epsilon) {
  const FeatureMap& v = c_ori.values;
  const std::size_t K = v.c;
  UncertaintyMap m{v.h, v.w, std::vector<double>(v.nodes(), 0.0), temperature};
  if (K < 2) return m;
  const double log_k = std::log(static_cast<double>(K));
  std::vector<double> p(K);
  for (std::size_t i = 0; i < v.nodes(); ++i) {
    const auto z = v.pixel(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += p[k] = std::exp((z[k] - zmax) / temperature);
    double u = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] /= sum;
      u -= p[k] * std::log(p[k] + epsilon);
    }
    const double r = u / log_k;
    m.values[i] = std::clamp(r * r, 0.0, 1.0);
  }
  return m;
}

FeatureMap uncertainty_backward(const CorrelationVolume& c_ori, double temperature, double epsilon,
                                std::span<const double> d_unc) {
  const FeatureMap& v = c_ori.values;
  const std::size_t K = v.c;
  FeatureMap d(v.h, v.w, K);
  if (K < 2) return d;
  const double log_k = std::log(static_cast<double>(K));
  std::vector<double> p(K), du_dp(K);
  for (std::size_t i = 0; i < v.nodes(); ++i) {
    if (d_unc[i] == 0.0) continue;
    const auto z = v.pixel(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += p[k] = std::exp((z[k] - zmax) / temperature);
    double u = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] /= sum;
      u -= p[k] * std::log(p[k] + epsilon);
      du_dp[k] = -std::log(p[k] + epsilon) - p[k] / (p[k] + epsilon);
    }
    const double r = u / log_k;
    if (r * r > 1.0) continue;  // clamped
    const double dm_du = 2.0 * u / (log_k * log_k);
    double mean = 0.0;
    for (std::size_t k = 0; k < K; ++k) mean += p[k] * du_dp[k];
    for (std::size_t k = 0; k < K; ++k)
      d.data[i * K + k] = d_unc[i] * dm_du * p[k] * (du_dp[k] - mean) / temperature;
  }
  return d;
}

CorrelationVolume modulate(const CorrelationVolume& c_ref, const UncertaintyMap& m, GateAffine psi) {
  if (c_ref.values.h != m.h || c_ref.values.w != m.w) throw DimensionError("modulate: grid mismatch");
  CorrelationVolume out{c_ref.values, Branch::modulated};
  const std::size_t K = out.values.c;
  for (std::size_t i = 0; i < out.values.nodes(); ++i) {
    const double g = logistic(psi.a * m.values[i] + psi.b);
    for (std::size_t k = 0; k < K; ++k) out.values.data[i * K + k] *= g;
  }
  return out;
}

FusionParams FusionParams::zeros(std::size_t e) {
  FusionParams p;
  p.e = e;
  p.gate = {0.0, 0.0};
  p.embed_ori_w.assign(e, 0.0);
  p.embed_ori_b.assign(e, 0.0);
  p.embed_ref_w.assign(e, 0.0);
  p.embed_ref_b.assign(e, 0.0);
  p.conv3_w.assign(e * 9, 0.0);
  p.conv3_b.assign(e, 0.0);
  p.conv5_w.assign(e * 25, 0.0);
  p.conv5_b.assign(e, 0.0);
  p.fuse_w.assign(e * 2 * e, 0.0);
  p.fuse_b.assign(e, 0.0);
  p.score_w.assign(e, 0.0);
  p.score_b = 0.0;
  return p;
}

FusionParams FusionParams::init(std::size_t e, std::mt19937_64& rng) {
  FusionParams p = zeros(e);
  p.gate = {1.0, 0.0};
  auto fill = [&rng](std::vector<double>& v, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (auto& x : v) x = u(rng);
  };
  fill(p.embed_ori_w, 1.0);
  fill(p.embed_ref_w, 1.0);
  fill(p.conv3_w, 9.0);
  fill(p.conv5_w, 25.0);
  fill(p.fuse_w, 2.0 * static_cast<double>(e));
  fill(p.score_w, static_cast<double>(e));
  return p;
}

LabelGrid argmax_labels(const FeatureMap& logits) {
  LabelGrid g(logits.h, logits.w);
  for (std::size_t i = 0; i < logits.nodes(); ++i) {
    const auto z = logits.pixel(i);
    g.data[i] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return g;
}

DecodeResult fuse_and_decode(const CorrelationVolume& c_ori, const CorrelationVolume& c_ref_mod,
                             const FusionParams& params, std::size_t out_h, std::size_t out_w) {
  require_same_shape(c_ori.values, c_ref_mod.values, "fuse_and_decode");
  const FeatureMap& o = c_ori.values;
  FeatureMap grid = decode_forward(params, o.h, o.w, o.c, o.data, c_ref_mod.values.data, nullptr);
  DecodeResult r;
  r.logits = resize_bilinear(grid, out_h, out_w);
  r.labels = argmax_labels(r.logits);
  return r;
}

FusionHead::FusionHead(FusionParams params, FusionMode mode, double temperature, double epsilon)
    : params_(std::move(params)), mode_(mode), temperature_(temperature), epsilon_(epsilon) {}

const FeatureMap& FusionHead::forward(const CorrelationVolume& c_ori, const CorrelationVolume& c_ref) {
  require_same_shape(c_ori.values, c_ref.values, "FusionHead::forward");
  Cache c;
  c.c_ori = c_ori;
  c.c_ref = c_ref;
  c.unc = uncertainty(c_ori, temperature_, epsilon_);
  const FeatureMap& o = c_ori.values;
  const std::size_t N = o.nodes();
  const std::size_t K = o.c;
  const std::vector<double> zeros(N * K, 0.0);

  switch (mode_) {
    case FusionMode::ugaf: {
      c.gate.resize(N);
      std::vector<double> xr = c_ref.values.data;
      for (std::size_t i = 0; i < N; ++i) {
        c.gate[i] = logistic(params_.gate.a * c.unc.values[i] + params_.gate.b);
        for (std::size_t k = 0; k < K; ++k) xr[i * K + k] *= c.gate[i];
      }
      c.decoders.resize(1);
      c.logits = decode_forward(params_, o.h, o.w, K, o.data, std::move(xr), &c.decoders[0]);
      break;
    }
    case FusionMode::concat:
      c.decoders.resize(1);
      c.logits = decode_forward(params_, o.h, o.w, K, o.data, c_ref.values.data, &c.decoders[0]);
      break;
    case FusionMode::mean: {
      std::vector<double> xo(N * K);
      for (std::size_t i = 0; i < N * K; ++i) xo[i] = 0.5 * (o.data[i] + c_ref.values.data[i]);
      c.decoders.resize(1);
      c.logits = decode_forward(params_, o.h, o.w, K, std::move(xo), zeros, &c.decoders[0]);
      break;
    }
    case FusionMode::separate: {
      c.decoders.resize(2);
      FeatureMap a = decode_forward(params_, o.h, o.w, K, o.data, zeros, &c.decoders[0]);
      FeatureMap b = decode_forward(params_, o.h, o.w, K, zeros, c_ref.values.data, &c.decoders[1]);
      for (std::size_t i = 0; i < N * K; ++i) a.data[i] = 0.5 * (a.data[i] + b.data[i]);
      c.logits = std::move(a);
      break;
    }
  }
  cache_ = std::move(c);
  return cache_->logits;
}

const UncertaintyMap& FusionHead::uncertainty_map() const {
  if (!cache_) throw ArgumentError("FusionHead: forward() has not been run");
  return cache_->unc;
}

UgafGradients FusionHead::backward(const FeatureMap& d_logits) const {
  if (!cache_) throw ArgumentError("FusionHead::backward called without a cached forward pass");
  const Cache& c = *cache_;
  require_same_shape(d_logits, c.logits, "FusionHead::backward");
  const FeatureMap& o = c.c_ori.values;
  const std::size_t N = o.nodes();
  const std::size_t K = o.c;

  UgafGradients g{FusionParams::zeros(params_.e), FeatureMap(o.h, o.w, K), FeatureMap(o.h, o.w, K)};
  switch (mode_) {
    case FusionMode::ugaf: {
      auto [dxo, dxr] = decode_backward(params_, c.decoders[0], d_logits.data, g.params);
      std::vector<double> d_unc(N, 0.0);
      for (std::size_t i = 0; i < N; ++i) {
        double dgate = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          g.d_c_ref.data[i * K + k] = dxr[i * K + k] * c.gate[i];
          dgate += dxr[i * K + k] * c.c_ref.values.data[i * K + k];
        }
        const double dz = dgate * c.gate[i] * (1.0 - c.gate[i]);
        g.params.gate.a += dz * c.unc.values[i];
        g.params.gate.b += dz;
        d_unc[i] = dz * params_.gate.a;
      }
      const FeatureMap d_from_gate = uncertainty_backward(c.c_ori, temperature_, epsilon_, d_unc);
      for (std::size_t i = 0; i < N * K; ++i) g.d_c_ori.data[i] = dxo[i] + d_from_gate.data[i];
      break;
    }
    case FusionMode::concat: {
      auto [dxo, dxr] = decode_backward(params_, c.decoders[0], d_logits.data, g.params);
      g.d_c_ori.data = std::move(dxo);
      g.d_c_ref.data = std::move(dxr);
      break;
    }
    case FusionMode::mean: {
      auto [dxo, dxr] = decode_backward(params_, c.decoders[0], d_logits.data, g.params);
      for (std::size_t i = 0; i < N * K; ++i) g.d_c_ori.data[i] = g.d_c_ref.data[i] = 0.5 * dxo[i];
      break;
    }
    case FusionMode::separate: {
      std::vector<double> half(d_logits.data);
      for (auto& v : half) v *= 0.5;
      auto [dxo, unused_r] = decode_backward(params_, c.decoders[0], half, g.params);
      auto [unused_o, dxr] = decode_backward(params_, c.decoders[1], half, g.params);
      g.d_c_ori.data = std::move(dxo);
      g.d_c_ref.data = std::move(dxr);
      break;
    }
  }
  return g;
}

} // namespace drseg
