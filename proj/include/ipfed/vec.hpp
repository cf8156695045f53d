#pragma once

// Embedding vectors and the class-embedding matrix. These are the currency
// of the whole library: d-dimensional feature coordinates in double
// precision, one row per class on the server side.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipfed {

using EmbeddingVec = std::vector<double>;

inline void require_same_dim(const EmbeddingVec& a, const EmbeddingVec& b,
                             const char* where) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(where) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
}

inline double dot(const EmbeddingVec& a, const EmbeddingVec& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const EmbeddingVec& a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

/// Euclidean distance ||a - b||.
inline double pairwise_distance(const EmbeddingVec& a, const EmbeddingVec& b) {
  require_same_dim(a, b, "pairwise_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline bool all_finite(const EmbeddingVec& a) {
  for (double x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool is_unit_norm(const EmbeddingVec& a, double tol = 1e-9) {
  return std::abs(norm2(a) - 1.0) <= tol;
}

/// Cosine similarity; zero vectors score 0 rather than dividing by zero.
inline double cosine_similarity(const EmbeddingVec& a, const EmbeddingVec& b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double c = dot(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

// W = [w^1 ... w^C]: one embedding row per class, contiguous storage.
class ClassEmbeddingMatrix {
 public:
  ClassEmbeddingMatrix() = default;

  ClassEmbeddingMatrix(std::size_t num_classes, std::size_t dim)
      : num_classes_(num_classes), dim_(dim), data_(num_classes * dim, 0.0) {}

  static ClassEmbeddingMatrix from_rows(const std::vector<EmbeddingVec>& rows) {
    if (rows.empty()) {
      throw std::invalid_argument("ClassEmbeddingMatrix: no rows");
    }
    ClassEmbeddingMatrix m(rows.size(), rows.front().size());
    for (std::size_t c = 0; c < rows.size(); ++c) m.set_row(c, rows[c]);
    return m;
  }

  std::size_t num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }

  std::span<double> row(std::size_t c) {
    return {data_.data() + c * dim_, dim_};
  }
  std::span<const double> row(std::size_t c) const {
    return {data_.data() + c * dim_, dim_};
  }

  EmbeddingVec row_vec(std::size_t c) const {
    auto r = row(c);
    return EmbeddingVec(r.begin(), r.end());
  }

  void set_row(std::size_t c, const EmbeddingVec& v) {
    if (v.size() != dim_) {
      throw std::invalid_argument("ClassEmbeddingMatrix::set_row: row has dim " +
                                  std::to_string(v.size()) + ", expected " +
                                  std::to_string(dim_));
    }
    std::copy(v.begin(), v.end(), data_.begin() + c * dim_);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  double row_distance(std::size_t c1, std::size_t c2) const {
    double s = 0.0;
    const double* a = data_.data() + c1 * dim_;
    const double* b = data_.data() + c2 * dim_;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double d = a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  }

  bool operator==(const ClassEmbeddingMatrix& o) const {
    return num_classes_ == o.num_classes_ && dim_ == o.dim_ && data_ == o.data_;
  }

 private:
  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// Largest |a_i - b_i| over all entries of two equally shaped matrices.
inline double max_component_deviation(const ClassEmbeddingMatrix& a,
                                      const ClassEmbeddingMatrix& b) {
  if (a.num_classes() != b.num_classes() || a.dim() != b.dim()) {
    throw std::invalid_argument("max_component_deviation: shape mismatch");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace ipfed
