#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "resmpc/types.hpp"

namespace resmpc {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Axis-aligned interval box {x : lower <= x <= upper}.
class Box {
 public:
  Box() = default;
  Box(Vec lower, Vec upper);

  static Box zero(Index n);
  static Box symmetric(const Vec& radius);

  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  Index dim() const { return lower_.size(); }

  /// Componentwise max(|lower|, |upper|).
  Vec radius() const;
  Vec center() const { return 0.5 * (lower_ + upper_); }
  bool contains(const Vec& x, double tol = 0.0) const;
  /// All 2^n corners, enumerated with bit i selecting upper[i].
  std::vector<Vec> vertices() const;

  friend bool operator==(const Box& a, const Box& b) {
    return a.lower_ == b.lower_ && a.upper_ == b.upper_;
  }

 private:
  Vec lower_;
  Vec upper_;
};

double support(const Box& box, const Vec& direction);
Box affine_map_box(const Mat& M, const Box& box);
Box minkowski_sum_box(const Box& a, const Box& b);
/// Smallest box containing both arguments.
Box box_hull(const Box& a, const Box& b);

/// Halfspace polytope {x : Hx <= g}. A polytope with zero rows is the whole
/// space. Emptiness is carried as an explicit flag set by the operations
/// that detect it.
class HPolytope {
 public:
  HPolytope() = default;
  HPolytope(Mat H, Vec g);

  static HPolytope from_box(const Box& box);
  static HPolytope universe(Index n);
  static HPolytope empty_set(Index n);

  const Mat& H() const { return H_; }
  const Vec& g() const { return g_; }
  Index dim() const { return H_.cols(); }
  Index num_facets() const { return H_.rows(); }
  bool is_empty() const { return empty_; }

  /// Stacks the rows of both polytopes (no redundancy removal).
  HPolytope intersect(const HPolytope& other) const;
  /// Rows rescaled to unit Euclidean norm; zero rows are dropped (or the
  /// result is flagged empty when such a row is violated).
  HPolytope normalized() const;

 private:
  Mat H_;
  Vec g_;
  bool empty_ = false;
};

/// g_i' = g_i - support(margin, h_i). The result is flagged empty when no
/// point satisfies the tightened rows.
HPolytope tighten(const HPolytope& poly, const Box& margin);

bool contains(const HPolytope& poly, const Vec& x, double tol = 0.0);

/// Runs an LP feasibility check.
bool check_empty(const HPolytope& poly);

/// max over poly of direction'x; std::nullopt when unbounded.
/// Throws std::runtime_error on an empty polytope.
std::optional<double> support(const HPolytope& poly, const Vec& direction);

/// Throws when the polytope is unbounded or empty.
Box bounding_box(const HPolytope& poly);

/// True iff every point of inner lies in outer (facet LPs, tol in offset units).
bool is_subset(const HPolytope& inner, const HPolytope& outer, double tol = 1e-9);

/// Drops rows that are implied by the remaining ones. Each kept row carries
/// an LP certificate: maximizing h_i'x over the other rows exceeds g_i + tol.
HPolytope remove_redundancy(const HPolytope& poly, double tol = 1e-9);

/// Robust one-step predecessor
///   {x : h_i'(A_v x) <= g_i - support(w, h_i)  for every facet i and vertex v}.
HPolytope pre_set(const HPolytope& omega, std::span<const Mat> vertex_mats, const Box& w,
                  double tol = 1e-9);

struct RpiOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

struct RpiResult {
  HPolytope set;
  int iterations = 0;
};

class RpiNotConverged : public std::runtime_error {
 public:
  RpiNotConverged(HPolytope last_iterate, int iterations);
  const HPolytope& last_iterate() const { return last_; }
  int iterations() const { return iterations_; }

 private:
  HPolytope last_;
  int iterations_;
};

/// Maximal robust positive invariant subset of x_constraint for
/// x+ = A_v x + w, A_v in conv(vertex_mats), w in the box.
/// Iterates Omega_{k+1} = Omega_k ∩ pre(Omega_k) until no facet of the
/// predecessor cuts Omega_k by more than tol. Returns a flagged-empty set when
/// the iteration empties; throws RpiNotConverged at max_iter.
RpiResult max_rpi(std::span<const Mat> vertex_mats, const Box& w, const HPolytope& x_constraint,
                  const RpiOptions& options = {});

/// Brute-force vertex enumeration over all n-subsets of rows. Intended for
/// small bounded polytopes (a few dozen rows in low dimension).
std::vector<Vec> enumerate_vertices(const HPolytope& poly, double tol = 1e-9);

}  // namespace resmpc
