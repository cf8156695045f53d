#pragma once

// Per-round transformation parameters: random orthonormal matrices, the
// projection of class embeddings into the transformed space, and the inverse
// decoding back to the original feature space. The inverse of an orthonormal
// matrix is its transpose, so decoding never inverts numerically.
//
// A "regular" (merely invertible, non-orthonormal) generation mode exists so
// tests can demonstrate that the protocol equivalence breaks without
// orthonormality.

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "ipfed/rng.hpp"
#include "ipfed/vec.hpp"

namespace ipfed {

struct TransformParam {
  Eigen::MatrixXd matrix;   // R, d x d
  Eigen::MatrixXd inverse;  // R^T when orthonormal, LU inverse otherwise
  std::uint64_t seed = 0;
  int round_index = 0;
  bool orthonormal = true;

  std::size_t dim() const { return static_cast<std::size_t>(matrix.rows()); }
};

/// max |(R^T R - I)_ij|
inline double orthonormality_error(const Eigen::MatrixXd& r) {
  const Eigen::MatrixXd g =
      r.transpose() * r -
      Eigen::MatrixXd::Identity(r.rows(), r.cols());
  return g.cwiseAbs().maxCoeff();
}

namespace detail {

inline Eigen::MatrixXd gaussian_matrix(std::size_t d, CounterStream& stream) {
  Eigen::MatrixXd a(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          stream.next_normal();
    }
  }
  return a;
}

}  // namespace detail

// Haar-uniform orthonormal matrix: QR of a Gaussian matrix drawn from the
// counter stream keyed by (seed, round), with the triangular factor's
// diagonal signs fixed positive so the factorization (and hence the output)
// is unique for a given (seed, round, d).
inline TransformParam gen_orthonormal(std::uint64_t seed, int round,
                                      std::size_t d) {
  if (d == 0) {
    throw std::invalid_argument("gen_orthonormal: dimension must be >= 1");
  }
  CounterStream stream(seed, StreamTag::Transform,
                       static_cast<std::uint64_t>(round));
  const Eigen::MatrixXd a = detail::gaussian_matrix(d, stream);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (r(jj, jj) < 0.0) q.col(jj) = -q.col(jj);
  }
  TransformParam t;
  t.matrix = q;
  t.inverse = q.transpose();
  t.seed = seed;
  t.round_index = round;
  t.orthonormal = true;
  return t;
}

// Falsification mode: an invertible Gaussian matrix that is (almost surely)
// not orthonormal. The inverse is computed by LU decomposition. Draws are
// rejected until the matrix is comfortably invertible and visibly
// non-orthonormal, so downstream tests never hit a vacuous case.
inline TransformParam gen_regular(std::uint64_t seed, int round,
                                  std::size_t d) {
  if (d == 0) {
    throw std::invalid_argument("gen_regular: dimension must be >= 1");
  }
  CounterStream stream(seed, StreamTag::Regular,
                       static_cast<std::uint64_t>(round));
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Eigen::MatrixXd a = detail::gaussian_matrix(d, stream);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) continue;
    if (d > 1 && orthonormality_error(a) < 0.05) continue;
    TransformParam t;
    t.matrix = a;
    t.inverse = lu.inverse();
    t.seed = seed;
    t.round_index = round;
    t.orthonormal = false;
    return t;
  }
  throw std::runtime_error("gen_regular: no invertible draw found");
}

inline TransformParam identity_transform(std::size_t d) {
  TransformParam t;
  t.matrix = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                       static_cast<Eigen::Index>(d));
  t.inverse = t.matrix;
  t.orthonormal = true;
  return t;
}

/// s * I for s != 0; regular but not orthonormal unless |s| = 1.
inline TransformParam scaled_identity_transform(double s, std::size_t d) {
  if (s == 0.0) {
    throw std::invalid_argument("scaled_identity_transform: scale must be nonzero");
  }
  TransformParam t;
  t.matrix = s * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                           static_cast<Eigen::Index>(d));
  t.inverse = (1.0 / s) * Eigen::MatrixXd::Identity(
                              static_cast<Eigen::Index>(d),
                              static_cast<Eigen::Index>(d));
  t.orthonormal = (s == 1.0 || s == -1.0);
  return t;
}

namespace detail {

inline EmbeddingVec apply_matrix(const Eigen::MatrixXd& m,
                                 const EmbeddingVec& w, const char* where) {
  if (static_cast<std::size_t>(m.cols()) != w.size()) {
    throw std::invalid_argument(std::string(where) + ": vector has dim " +
                                std::to_string(w.size()) + ", transform is " +
                                std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(w.data(),
                                            static_cast<Eigen::Index>(w.size()));
  const Eigen::VectorXd y = m * x;
  return EmbeddingVec(y.data(), y.data() + y.size());
}

}  // namespace detail

/// R * w
inline EmbeddingVec project(const EmbeddingVec& w, const TransformParam& r) {
  return detail::apply_matrix(r.matrix, w, "project");
}

/// R^{-1} * w (the transpose for orthonormal R)
inline EmbeddingVec inverse_project(const EmbeddingVec& w,
                                    const TransformParam& r) {
  return detail::apply_matrix(r.inverse, w, "inverse_project");
}

inline ClassEmbeddingMatrix project_rows(const ClassEmbeddingMatrix& m,
                                         const TransformParam& r) {
  ClassEmbeddingMatrix out(m.num_classes(), m.dim());
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    out.set_row(c, project(m.row_vec(c), r));
  }
  return out;
}

inline ClassEmbeddingMatrix inverse_project_rows(const ClassEmbeddingMatrix& m,
                                                 const TransformParam& r) {
  ClassEmbeddingMatrix out(m.num_classes(), m.dim());
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    out.set_row(c, inverse_project(m.row_vec(c), r));
  }
  return out;
}

}  // namespace ipfed
