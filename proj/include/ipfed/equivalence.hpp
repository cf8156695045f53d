#pragma once

// Numerical verification that the protected spreadout update commutes with
// the per-round projection exactly when the transform is orthonormal:
//
//   decode(spreadout(project(W)))  ==  spreadout(W)
//
// The suite checks both directions: orthonormal transforms must commute to
// within a tight tolerance, and regular-but-not-orthonormal transforms must
// visibly break the identity on hinge-active matrices. Trial matrices are
// generated with at least one active hinge pair so neither check can pass
// vacuously.

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "ipfed/losses.hpp"
#include "ipfed/rng.hpp"
#include "ipfed/transform.hpp"
#include "ipfed/vec.hpp"

namespace ipfed {

/// max componentwise |decode(spreadout(project(W))) - spreadout(W)|
inline double commutation_deviation(const ClassEmbeddingMatrix& w,
                                    const SpreadoutParams& p,
                                    const TransformParam& r) {
  const ClassEmbeddingMatrix direct = spreadout_update(w, p).updated;
  const ClassEmbeddingMatrix projected = project_rows(w, r);
  const ClassEmbeddingMatrix updated = spreadout_update(projected, p).updated;
  const ClassEmbeddingMatrix decoded = inverse_project_rows(updated, r);
  return max_component_deviation(direct, decoded);
}

// Random matrix whose rows sit close enough together that several spreadout
// hinges are active, but never coincident. Rows cluster around a random
// point with spread tuned so typical pairwise distances land below v.
inline ClassEmbeddingMatrix random_hinge_active_matrix(std::size_t num_classes,
                                                       std::size_t dim,
                                                       double margin_v,
                                                       CounterStream& stream) {
  const double spread =
      0.5 * margin_v / std::sqrt(2.0 * static_cast<double>(dim));
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<EmbeddingVec> rows(num_classes, EmbeddingVec(dim));
    EmbeddingVec base(dim);
    for (double& v : base) v = stream.next_normal();
    for (auto& row : rows) {
      for (std::size_t i = 0; i < dim; ++i) {
        row[i] = base[i] + spread * stream.next_normal();
      }
    }
    ClassEmbeddingMatrix m = ClassEmbeddingMatrix::from_rows(rows);
    bool active = false;
    bool degenerate = false;
    for (std::size_t c = 0; c < num_classes && !degenerate; ++c) {
      for (std::size_t o = c + 1; o < num_classes; ++o) {
        const double d = m.row_distance(c, o);
        if (d < 1e-6) {
          degenerate = true;
          break;
        }
        if (d < 0.9 * margin_v) active = true;
      }
    }
    if (active && !degenerate) return m;
  }
  throw std::runtime_error("random_hinge_active_matrix: generation failed");
}

struct EquivalenceCase {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  int trial = 0;
  double orthonormal_deviation = 0.0;
  double regular_deviation = 0.0;
  bool pass = false;
};

struct EquivalenceReport {
  std::size_t cases_run = 0;
  std::size_t failures = 0;
  double max_orthonormal_deviation = 0.0;  // must stay <= tolerance
  double min_regular_deviation = 0.0;      // must stay > falsification bar
  std::vector<std::string> failure_notes;
  bool pass() const { return failures == 0 && cases_run > 0; }
};

constexpr double kFalsificationBar = 1e-3;

// Cross product of trials x dims x class counts. Every case checks the
// orthonormal commutation against `tolerance` and, when check_regular is
// set, demands that a random regular transform breaks commutation by more
// than the falsification bar.
inline EquivalenceReport run_equivalence_suite(
    int trials, const std::vector<std::size_t>& dims,
    const std::vector<std::size_t>& class_counts, double tolerance,
    std::uint64_t seed, const SpreadoutParams& p = {},
    bool check_regular = true) {
  EquivalenceReport report;
  report.min_regular_deviation = std::numeric_limits<double>::infinity();
  std::uint64_t case_index = 0;
  for (std::size_t d : dims) {
    for (std::size_t c : class_counts) {
      for (int trial = 0; trial < trials; ++trial) {
        ++case_index;
        CounterStream stream(seed, StreamTag::Trials, case_index);
        const ClassEmbeddingMatrix w =
            random_hinge_active_matrix(c, d, p.margin_v, stream);

        EquivalenceCase ec;
        ec.dim = d;
        ec.num_classes = c;
        ec.trial = trial;

        const TransformParam r_orth =
            gen_orthonormal(stream.next_u64(), trial, d);
        ec.orthonormal_deviation = commutation_deviation(w, p, r_orth);
        bool ok = ec.orthonormal_deviation <= tolerance;

        if (check_regular) {
          const TransformParam r_reg =
              gen_regular(stream.next_u64(), trial, d);
          ec.regular_deviation = commutation_deviation(w, p, r_reg);
          report.min_regular_deviation =
              std::min(report.min_regular_deviation, ec.regular_deviation);
          ok = ok && ec.regular_deviation > kFalsificationBar;
        }

        ec.pass = ok;
        ++report.cases_run;
        report.max_orthonormal_deviation = std::max(
            report.max_orthonormal_deviation, ec.orthonormal_deviation);
        if (!ok) {
          ++report.failures;
          if (report.failure_notes.size() < 20) {
            std::ostringstream os;
            os << "d=" << d << " C=" << c << " trial=" << trial
               << " orth_dev=" << ec.orthonormal_deviation
               << " reg_dev=" << ec.regular_deviation;
            report.failure_notes.push_back(os.str());
          }
        }
      }
    }
  }
  if (!check_regular) report.min_regular_deviation = 0.0;
  return report;
}

}  // namespace ipfed
