#pragma once

// Desk-scale feature extractor: a small MLP with tanh hidden layers, a
// linear head and an L2-normalized output, plus the flattened-parameter
// arithmetic used by federated averaging. Backpropagation is analytic and
// includes the normalization layer's Jacobian.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ipfed/losses.hpp"
#include "ipfed/rng.hpp"
#include "ipfed/vec.hpp"

namespace ipfed {

struct ModelParams {
  // (fan_in, fan_out) per layer; flat layout per layer is the row-major
  // weight block (out x in) followed by the bias block (out).
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes;
  std::vector<double> values;
  std::uint64_t version = 0;  // round bookkeeping lives in federation

  std::size_t expected_size() const {
    std::size_t n = 0;
    for (const auto& [in, out] : layer_shapes) n += in * out + out;
    return n;
  }

  void validate() const {
    if (layer_shapes.empty()) {
      throw std::invalid_argument("ModelParams: no layers");
    }
    if (values.size() != expected_size()) {
      throw std::invalid_argument(
          "ModelParams: flat size " + std::to_string(values.size()) +
          " != expected " + std::to_string(expected_size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("ModelParams: non-finite value");
      }
    }
  }

  std::size_t input_dim() const { return layer_shapes.front().first; }
  std::size_t output_dim() const { return layer_shapes.back().second; }
};

// f_theta: raw input -> unit-normalized d-dimensional embedding.
// tanh on hidden layers, linear head, then L2 normalization. If the
// pre-normalization norm collapses below 1e-12 the first basis vector is
// returned and the event counted.
struct FeatureExtractor {
  ModelParams params;
  mutable std::uint64_t norm_fallback_count = 0;

  std::size_t input_dim() const { return params.input_dim(); }
  std::size_t output_dim() const { return params.output_dim(); }
};

inline ModelParams make_params(std::size_t input_dim,
                               const std::vector<std::size_t>& hidden,
                               std::size_t output_dim) {
  ModelParams p;
  std::size_t prev = input_dim;
  for (std::size_t h : hidden) {
    p.layer_shapes.emplace_back(prev, h);
    prev = h;
  }
  p.layer_shapes.emplace_back(prev, output_dim);
  p.values.assign(p.expected_size(), 0.0);
  return p;
}

/// Seeded init: every weight and bias uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline FeatureExtractor make_extractor(std::size_t input_dim,
                                       const std::vector<std::size_t>& hidden,
                                       std::size_t output_dim,
                                       std::uint64_t seed) {
  FeatureExtractor fx;
  fx.params = make_params(input_dim, hidden, output_dim);
  CounterStream stream(seed, StreamTag::ModelInit);
  std::size_t off = 0;
  for (const auto& [in, out] : fx.params.layer_shapes) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t k = 0; k < in * out + out; ++k) {
      fx.params.values[off + k] = stream.next_uniform(-bound, bound);
    }
    off += in * out + out;
  }
  return fx;
}

namespace detail {

struct ForwardTrace {
  // activations[0] is the input; activations[k] the output of layer k
  // (post-tanh for hidden layers, raw linear output for the head).
  std::vector<std::vector<double>> activations;
  double pre_norm = 0.0;
  bool degenerate = false;
  EmbeddingVec embedding;
};

inline ForwardTrace forward_trace(const FeatureExtractor& fx,
                                  std::span<const double> x) {
  const ModelParams& p = fx.params;
  if (x.size() != p.input_dim()) {
    throw std::invalid_argument("forward: input has dim " +
                                std::to_string(x.size()) + ", model expects " +
                                std::to_string(p.input_dim()));
  }
  ForwardTrace t;
  t.activations.reserve(p.layer_shapes.size() + 1);
  t.activations.emplace_back(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t layer = 0; layer < p.layer_shapes.size(); ++layer) {
    const auto [in, out] = p.layer_shapes[layer];
    const double* w = p.values.data() + off;
    const double* b = w + in * out;
    const std::vector<double>& a = t.activations.back();
    std::vector<double> z(out);
    for (std::size_t r = 0; r < out; ++r) {
      double s = b[r];
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) s += wr[c] * a[c];
      z[r] = s;
    }
    const bool last = (layer + 1 == p.layer_shapes.size());
    if (!last) {
      for (double& v : z) v = std::tanh(v);
    }
    t.activations.push_back(std::move(z));
    off += in * out + out;
  }
  const std::vector<double>& head = t.activations.back();
  t.pre_norm = norm2(head);
  if (t.pre_norm < 1e-12) {
    t.degenerate = true;
    t.embedding.assign(head.size(), 0.0);
    t.embedding[0] = 1.0;
  } else {
    t.embedding.resize(head.size());
    for (std::size_t i = 0; i < head.size(); ++i) {
      t.embedding[i] = head[i] / t.pre_norm;
    }
  }
  return t;
}

}  // namespace detail

inline EmbeddingVec forward(const FeatureExtractor& fx,
                            std::span<const double> x) {
  auto t = detail::forward_trace(fx, x);
  if (t.degenerate) ++fx.norm_fallback_count;
  return std::move(t.embedding);
}

namespace detail {

// Vector-Jacobian product from a completed forward trace: given dL/df at
// the normalized output, returns dL/dtheta (flat, same layout as params).
inline std::vector<double> backward_from_trace(const ModelParams& p,
                                               const ForwardTrace& trace,
                                               const EmbeddingVec& dl_df) {
  if (dl_df.size() != p.output_dim()) {
    throw std::invalid_argument("backward_from_trace: gradient dim mismatch");
  }

  std::vector<double> grad(p.values.size(), 0.0);
  // Through normalization: g_z = (dl_df - f (f . dl_df)) / ||z||.
  // A degenerate (constant) output has zero Jacobian.
  std::vector<double> delta(p.output_dim(), 0.0);
  if (!trace.degenerate) {
    const double fdot = dot(trace.embedding, dl_df);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] = (dl_df[i] - trace.embedding[i] * fdot) / trace.pre_norm;
    }
  }

  // Layer offsets, walked backwards.
  std::vector<std::size_t> offsets(p.layer_shapes.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l < p.layer_shapes.size(); ++l) {
    offsets[l] = off;
    off += p.layer_shapes[l].first * p.layer_shapes[l].second +
           p.layer_shapes[l].second;
  }

  for (std::size_t li = p.layer_shapes.size(); li-- > 0;) {
    const auto [in, out] = p.layer_shapes[li];
    const double* w = p.values.data() + offsets[li];
    double* gw = grad.data() + offsets[li];
    double* gb = gw + in * out;
    const std::vector<double>& a_prev = trace.activations[li];
    for (std::size_t r = 0; r < out; ++r) {
      gb[r] = delta[r];
      double* gwr = gw + r * in;
      for (std::size_t c = 0; c < in; ++c) gwr[c] = delta[r] * a_prev[c];
    }
    if (li == 0) break;
    std::vector<double> prev_delta(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) prev_delta[c] += wr[c] * delta[r];
    }
    // previous layer is tanh: multiply by 1 - a^2
    for (std::size_t c = 0; c < in; ++c) {
      prev_delta[c] *= 1.0 - a_prev[c] * a_prev[c];
    }
    delta = std::move(prev_delta);
  }
  return grad;
}

}  // namespace detail

inline std::vector<double> backward_feature(const FeatureExtractor& fx,
                                            std::span<const double> x,
                                            const EmbeddingVec& dl_df,
                                            EmbeddingVec* f_out = nullptr) {
  auto trace = detail::forward_trace(fx, x);
  if (trace.degenerate) ++fx.norm_fallback_count;
  if (f_out) *f_out = trace.embedding;
  return detail::backward_from_trace(fx.params, trace, dl_df);
}

struct BackwardPositiveResult {
  std::vector<double> grad_theta;
  EmbeddingVec grad_w;
  double loss = 0.0;
};

// Gradient of l_pos(f_theta(x), w) with respect to theta and w. On the flat
// side of the hinge everything is exactly zero.
inline BackwardPositiveResult backward_positive(const FeatureExtractor& fx,
                                                std::span<const double> x,
                                                const EmbeddingVec& w,
                                                const PositiveLossParams& p) {
  if (w.size() != fx.output_dim()) {
    throw std::invalid_argument("backward_positive: embedding dim mismatch");
  }
  BackwardPositiveResult r;
  const auto trace = detail::forward_trace(fx, x);
  if (trace.degenerate) ++fx.norm_fallback_count;
  const EmbeddingVec& f = trace.embedding;
  const double gap = p.margin_m - dot(w, f);
  if (gap <= 0.0) {
    r.grad_theta.assign(fx.params.values.size(), 0.0);
    r.grad_w.assign(w.size(), 0.0);
    return r;
  }
  r.loss = gap * gap;
  const double coef = -2.0 * gap;
  EmbeddingVec dl_df(w.size());
  r.grad_w.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    dl_df[i] = coef * w[i];
    r.grad_w[i] = coef * f[i];
  }
  r.grad_theta = detail::backward_from_trace(fx.params, trace, dl_df);
  return r;
}

/// params - eta * grads; version is untouched.
inline ModelParams sgd_step(const ModelParams& params,
                            std::span<const double> grads, double eta) {
  if (grads.size() != params.values.size()) {
    throw std::invalid_argument("sgd_step: gradient size mismatch");
  }
  ModelParams out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] -= eta * grads[i];
  }
  return out;
}

// Weighted mean of parameter vectors, weights n_i / sum(n_i). Summation runs
// in list order with Kahan compensation, so any permutation of the list
// lands within 1e-12 of the same result.
inline ModelParams average_params(
    const std::vector<std::pair<ModelParams, double>>& weighted) {
  if (weighted.empty()) {
    throw std::invalid_argument("average_params: empty list");
  }
  double total = 0.0;
  for (const auto& [params, n] : weighted) {
    if (n < 0.0) throw std::invalid_argument("average_params: negative weight");
    total += n;
  }
  if (total <= 0.0) {
    throw std::invalid_argument("average_params: zero total weight");
  }
  const ModelParams& first = weighted.front().first;
  for (const auto& [params, n] : weighted) {
    if (params.layer_shapes != first.layer_shapes ||
        params.values.size() != first.values.size()) {
      throw std::invalid_argument("average_params: shape mismatch");
    }
  }
  ModelParams out = first;
  std::vector<double> sum(first.values.size(), 0.0);
  std::vector<double> comp(first.values.size(), 0.0);
  for (const auto& [params, n] : weighted) {
    const double w = n / total;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      const double y = w * params.values[i] - comp[i];
      const double t = sum[i] + y;
      comp[i] = (t - sum[i]) - y;
      sum[i] = t;
    }
  }
  out.values = std::move(sum);
  return out;
}

}  // namespace ipfed
