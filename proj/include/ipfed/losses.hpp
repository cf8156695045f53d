#pragma once

// Loss functions and their closed-form gradients / update steps:
//   - positive loss: client-side hinge pulling a sample embedding toward its
//     own class embedding, l = max(0, m - w.f)^2
//   - spreadout regularizer: server-side hinge pushing pairwise class
//     embeddings at least v apart, summed over ordered pairs
//   - cosine-margin softmax: centralized pretraining / fine-tuning loss
//
// The spreadout update applies exactly one gradient step with step size
// lambda. Its closed form uses min{0, 1 - v/d}, which equals -max(0, v-d)/d,
// so the factor-4 coefficient is the true gradient of the ordered-pair sum.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ipfed/vec.hpp"

namespace ipfed {

struct PositiveLossParams {
  double margin_m = 0.9;
};

struct SpreadoutParams {
  double margin_v = 0.7;
  double step_lambda = 25.0;
};

struct CosineMarginParams {
  double scale_s = 30.0;
  double margin = 0.35;
};

// Pairs closer than this are treated as coincident: the spreadout gradient
// is undefined at distance zero, so such pairs are skipped and counted.
constexpr double kDegeneratePairDistance = 1e-12;

/// max(0, m - w.f)^2
inline double positive_loss(const EmbeddingVec& f, const EmbeddingVec& w,
                            const PositiveLossParams& p) {
  require_same_dim(f, w, "positive_loss");
  const double gap = p.margin_m - dot(w, f);
  return gap > 0.0 ? gap * gap : 0.0;
}

struct PositiveLossGrad {
  EmbeddingVec grad_f;
  EmbeddingVec grad_w;
  double loss = 0.0;
};

// Analytic gradient of the positive loss. Flat (zero) on w.f >= m; the
// boundary itself belongs to the flat side.
inline PositiveLossGrad positive_loss_grad(const EmbeddingVec& f,
                                           const EmbeddingVec& w,
                                           const PositiveLossParams& p) {
  require_same_dim(f, w, "positive_loss_grad");
  PositiveLossGrad g;
  g.grad_f.assign(f.size(), 0.0);
  g.grad_w.assign(w.size(), 0.0);
  const double gap = p.margin_m - dot(w, f);
  if (gap <= 0.0) return g;
  g.loss = gap * gap;
  const double coef = -2.0 * gap;
  for (std::size_t i = 0; i < f.size(); ++i) {
    g.grad_f[i] = coef * w[i];
    g.grad_w[i] = coef * f[i];
  }
  return g;
}

/// sum_{c} sum_{c'!=c} max(0, v - d(w^c, w^c'))^2 over ordered pairs.
inline double spreadout_loss(const ClassEmbeddingMatrix& w,
                             const SpreadoutParams& p) {
  if (w.num_classes() < 2) {
    throw std::invalid_argument("spreadout_loss: needs at least 2 classes");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < w.num_classes(); ++c) {
    for (std::size_t o = 0; o < w.num_classes(); ++o) {
      if (o == c) continue;
      const double gap = p.margin_v - w.row_distance(c, o);
      if (gap > 0.0) total += gap * gap;
    }
  }
  return total;
}

struct SpreadoutUpdateResult {
  ClassEmbeddingMatrix updated;
  std::size_t degenerate_pairs = 0;
};

// One gradient step of the spreadout regularizer:
//   w^c <- w^c - lambda * sum_{c'!=c} 4 (w^c - w^c') min{0, 1 - v/d(w^c,w^c')}
// Coincident pairs (d < 1e-12) are skipped and counted instead of aborting.
inline SpreadoutUpdateResult spreadout_update(const ClassEmbeddingMatrix& w,
                                              const SpreadoutParams& p) {
  if (w.num_classes() < 2) {
    throw std::invalid_argument("spreadout_update: needs at least 2 classes");
  }
  const std::size_t c_count = w.num_classes();
  const std::size_t d = w.dim();
  SpreadoutUpdateResult result;
  result.updated = ClassEmbeddingMatrix(c_count, d);
  std::vector<double> accum(d);
  for (std::size_t c = 0; c < c_count; ++c) {
    std::fill(accum.begin(), accum.end(), 0.0);
    const auto wc = w.row(c);
    for (std::size_t o = 0; o < c_count; ++o) {
      if (o == c) continue;
      const double dist = w.row_distance(c, o);
      if (dist < kDegeneratePairDistance) {
        ++result.degenerate_pairs;
        continue;
      }
      const double coef = std::min(0.0, 1.0 - p.margin_v / dist);
      if (coef == 0.0) continue;
      const auto wo = w.row(o);
      for (std::size_t i = 0; i < d; ++i) {
        accum[i] += 4.0 * (wc[i] - wo[i]) * coef;
      }
    }
    auto out = result.updated.row(c);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = wc[i] - p.step_lambda * accum[i];
    }
  }
  return result;
}

// Softmax cross-entropy over logits s*(cos_c - margin*[c == true_class]),
// with cos_c = w^c . f for unit-normalized inputs.
inline double cosine_margin_loss(const EmbeddingVec& f,
                                 const ClassEmbeddingMatrix& rows,
                                 std::size_t true_class,
                                 const CosineMarginParams& p) {
  if (true_class >= rows.num_classes()) {
    throw std::invalid_argument("cosine_margin_loss: class index out of range");
  }
  if (f.size() != rows.dim()) {
    throw std::invalid_argument("cosine_margin_loss: dimension mismatch");
  }
  std::vector<double> logits(rows.num_classes());
  for (std::size_t c = 0; c < rows.num_classes(); ++c) {
    double cosc = 0.0;
    const auto wc = rows.row(c);
    for (std::size_t i = 0; i < f.size(); ++i) cosc += wc[i] * f[i];
    logits[c] = p.scale_s * (cosc - (c == true_class ? p.margin : 0.0));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);
  return -(logits[true_class] - mx - std::log(denom));
}

struct CosineMarginGrad {
  EmbeddingVec grad_f;
  ClassEmbeddingMatrix grad_rows;
  double loss = 0.0;
};

inline CosineMarginGrad cosine_margin_loss_grad(const EmbeddingVec& f,
                                                const ClassEmbeddingMatrix& rows,
                                                std::size_t true_class,
                                                const CosineMarginParams& p) {
  if (true_class >= rows.num_classes()) {
    throw std::invalid_argument("cosine_margin_loss_grad: class index out of range");
  }
  if (f.size() != rows.dim()) {
    throw std::invalid_argument("cosine_margin_loss_grad: dimension mismatch");
  }
  const std::size_t c_count = rows.num_classes();
  std::vector<double> logits(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    double cosc = 0.0;
    const auto wc = rows.row(c);
    for (std::size_t i = 0; i < f.size(); ++i) cosc += wc[i] * f[i];
    logits[c] = p.scale_s * (cosc - (c == true_class ? p.margin : 0.0));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);

  CosineMarginGrad g;
  g.loss = -(logits[true_class] - mx - std::log(denom));
  g.grad_f.assign(f.size(), 0.0);
  g.grad_rows = ClassEmbeddingMatrix(c_count, rows.dim());
  for (std::size_t c = 0; c < c_count; ++c) {
    const double prob = std::exp(logits[c] - mx) / denom;
    const double dlogit = prob - (c == true_class ? 1.0 : 0.0);
    const double coef = dlogit * p.scale_s;
    const auto wc = rows.row(c);
    auto gr = g.grad_rows.row(c);
    for (std::size_t i = 0; i < f.size(); ++i) {
      g.grad_f[i] += coef * wc[i];
      gr[i] = coef * f[i];
    }
  }
  return g;
}

}  // namespace ipfed
