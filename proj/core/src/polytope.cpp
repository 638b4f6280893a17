#include "resmpc/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "resmpc/qp.hpp"

namespace resmpc {
namespace {

constexpr double kZeroRow = 1e-12;

void require_dim(Index a, Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

// Rows normalized to unit length; returns false when a zero row is violated.
bool normalize_rows(const Mat& H, const Vec& g, double tol, Mat& H_out, Vec& g_out) {
  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(H.rows()));
  for (Index i = 0; i < H.rows(); ++i) {
    const double norm = H.row(i).norm();
    if (norm <= kZeroRow) {
      if (g(i) < -tol) return false;
      continue;
    }
    keep.push_back(i);
  }
  H_out.resize(static_cast<Index>(keep.size()), H.cols());
  g_out.resize(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Index i = keep[k];
    const double norm = H.row(i).norm();
    H_out.row(static_cast<Index>(k)) = H.row(i) / norm;
    g_out(static_cast<Index>(k)) = g(i) / norm;
  }
  return true;
}

// Among rows with (numerically) identical unit normals keep the tightest one.
// Input rows must already be normalized.
std::vector<Index> dedupe_parallel(const Mat& H, const Vec& g) {
  std::vector<Index> order(static_cast<std::size_t>(H.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto key_less = [&](Index a, Index b) {
    for (Index j = 0; j < H.cols(); ++j) {
      const double da = std::round(H(a, j) * 1e9);
      const double db = std::round(H(b, j) * 1e9);
      if (da != db) return da < db;
    }
    if (g(a) != g(b)) return g(a) < g(b);
    return a < b;
  };
  std::sort(order.begin(), order.end(), key_less);
  std::vector<Index> kept;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Index i = order[k];
    if (!kept.empty()) {
      const Index prev = kept.back();
      if ((H.row(i) - H.row(prev)).cwiseAbs().maxCoeff() < 1e-12) continue;
    }
    kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

Mat select_rows(const Mat& H, const std::vector<Index>& rows) {
  Mat out(static_cast<Index>(rows.size()), H.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = H.row(rows[k]);
  return out;
}

Vec select_rows(const Vec& g, const std::vector<Index>& rows) {
  Vec out(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Index>(k)) = g(rows[k]);
  return out;
}

// max h'x over {Hx <= g}; nullopt if unbounded, throws if empty.
std::optional<double> lp_max(const Mat& H, const Vec& g, const Vec& h) {
  const LpSolution sol = solve_lp_halfspaces(-h, H, g);
  switch (sol.status) {
    case QpStatus::Solved: return -sol.value;
    case QpStatus::DualInfeasible: return std::nullopt;
    case QpStatus::PrimalInfeasible: throw std::runtime_error("lp_max: polytope is empty");
    case QpStatus::MaxIter: break;
  }
  throw std::runtime_error("lp_max: LP iteration limit reached");
}

bool lp_empty(const Mat& H, const Vec& g) {
  if (H.rows() == 0) return false;
  const LpSolution sol = solve_lp_halfspaces(Vec::Zero(H.cols()), H, g);
  if (sol.status == QpStatus::MaxIter) throw std::runtime_error("check_empty: LP iteration limit");
  return sol.status == QpStatus::PrimalInfeasible;
}

std::optional<Box> try_bounding_box(const Mat& H, const Vec& g) {
  const Index n = H.cols();
  Vec lo(n);
  Vec hi(n);
  for (Index j = 0; j < n; ++j) {
    Vec e = Vec::Zero(n);
    e(j) = 1.0;
    const auto up = lp_max(H, g, e);
    const auto down = lp_max(H, g, -e);
    if (!up || !down) return std::nullopt;
    hi(j) = *up;
    lo(j) = std::min(-*down, *up);
  }
  return Box(lo, hi);
}

}  // namespace

// ---------------------------------------------------------------- Box

Box::Box(Vec lower, Vec upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  require_dim(lower_.size(), upper_.size(), "Box");
  for (Index i = 0; i < lower_.size(); ++i) {
    if (!(lower_(i) <= upper_(i))) {
      throw std::invalid_argument("Box: lower[" + std::to_string(i) + "] > upper");
    }
  }
}

Box Box::zero(Index n) { return Box(Vec::Zero(n), Vec::Zero(n)); }

Box Box::symmetric(const Vec& radius) { return Box(-radius.cwiseAbs(), radius.cwiseAbs()); }

Vec Box::radius() const { return lower_.cwiseAbs().cwiseMax(upper_.cwiseAbs()); }

bool Box::contains(const Vec& x, double tol) const {
  require_dim(x.size(), dim(), "Box::contains");
  for (Index i = 0; i < dim(); ++i) {
    if (x(i) < lower_(i) - tol || x(i) > upper_(i) + tol) return false;
  }
  return true;
}

std::vector<Vec> Box::vertices() const {
  const Index n = dim();
  const std::size_t count = std::size_t{1} << static_cast<std::size_t>(n);
  std::vector<Vec> out;
  out.reserve(count);
  for (std::size_t mask = 0; mask < count; ++mask) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = (mask >> static_cast<std::size_t>(i)) & 1U ? upper_(i) : lower_(i);
    out.push_back(std::move(v));
  }
  return out;
}

double support(const Box& box, const Vec& direction) {
  require_dim(direction.size(), box.dim(), "support");
  double s = 0.0;
  for (Index i = 0; i < direction.size(); ++i) {
    const double d = direction(i);
    s += d > 0.0 ? d * box.upper()(i) : d * box.lower()(i);
  }
  return s;
}

Box affine_map_box(const Mat& M, const Box& box) {
  require_dim(M.cols(), box.dim(), "affine_map_box");
  Vec lo(M.rows());
  Vec hi(M.rows());
  for (Index i = 0; i < M.rows(); ++i) {
    const Vec row = M.row(i).transpose();
    hi(i) = support(box, row);
    lo(i) = -support(box, -row);
  }
  return Box(lo, hi);
}

Box minkowski_sum_box(const Box& a, const Box& b) {
  require_dim(a.dim(), b.dim(), "minkowski_sum_box");
  return Box(a.lower() + b.lower(), a.upper() + b.upper());
}

Box box_hull(const Box& a, const Box& b) {
  require_dim(a.dim(), b.dim(), "box_hull");
  return Box(a.lower().cwiseMin(b.lower()), a.upper().cwiseMax(b.upper()));
}

// ---------------------------------------------------------------- HPolytope

HPolytope::HPolytope(Mat H, Vec g) : H_(std::move(H)), g_(std::move(g)) {
  require_dim(H_.rows(), g_.size(), "HPolytope");
}

HPolytope HPolytope::from_box(const Box& box) {
  const Index n = box.dim();
  Mat H(2 * n, n);
  H << Mat::Identity(n, n), -Mat::Identity(n, n);
  Vec g(2 * n);
  g << box.upper(), -box.lower();
  return HPolytope(std::move(H), std::move(g));
}

HPolytope HPolytope::universe(Index n) { return HPolytope(Mat(0, n), Vec(0)); }

HPolytope HPolytope::empty_set(Index n) {
  HPolytope p = universe(n);
  p.empty_ = true;
  return p;
}

HPolytope HPolytope::intersect(const HPolytope& other) const {
  require_dim(dim(), other.dim(), "HPolytope::intersect");
  if (empty_ || other.empty_) return empty_set(dim());
  Mat H(H_.rows() + other.H_.rows(), dim());
  H << H_, other.H_;
  Vec g(g_.size() + other.g_.size());
  g << g_, other.g_;
  return HPolytope(std::move(H), std::move(g));
}

HPolytope HPolytope::normalized() const {
  if (empty_) return *this;
  Mat H;
  Vec g;
  if (!normalize_rows(H_, g_, 0.0, H, g)) return empty_set(dim());
  return HPolytope(std::move(H), std::move(g));
}

HPolytope tighten(const HPolytope& poly, const Box& margin) {
  require_dim(poly.dim(), margin.dim(), "tighten");
  if (poly.is_empty()) return poly;
  Vec g = poly.g();
  for (Index i = 0; i < g.size(); ++i) g(i) -= support(margin, poly.H().row(i).transpose());
  HPolytope out(poly.H(), std::move(g));
  if (check_empty(out)) return HPolytope::empty_set(poly.dim());
  return out;
}

bool contains(const HPolytope& poly, const Vec& x, double tol) {
  require_dim(x.size(), poly.dim(), "contains");
  if (poly.is_empty()) return false;
  if (poly.num_facets() == 0) return true;
  return ((poly.H() * x - poly.g()).array() <= tol).all();
}

bool check_empty(const HPolytope& poly) {
  if (poly.is_empty()) return true;
  return lp_empty(poly.H(), poly.g());
}

std::optional<double> support(const HPolytope& poly, const Vec& direction) {
  require_dim(direction.size(), poly.dim(), "support");
  if (poly.is_empty()) throw std::runtime_error("support: polytope is empty");
  return lp_max(poly.H(), poly.g(), direction);
}

Box bounding_box(const HPolytope& poly) {
  if (poly.is_empty()) throw std::runtime_error("bounding_box: polytope is empty");
  auto box = try_bounding_box(poly.H(), poly.g());
  if (!box) throw std::runtime_error("bounding_box: polytope is unbounded");
  return *box;
}

bool is_subset(const HPolytope& inner, const HPolytope& outer, double tol) {
  require_dim(inner.dim(), outer.dim(), "is_subset");
  if (inner.is_empty() || check_empty(inner)) return true;
  if (outer.is_empty()) return false;
  for (Index i = 0; i < outer.num_facets(); ++i) {
    const auto s = lp_max(inner.H(), inner.g(), outer.H().row(i).transpose());
    if (!s) return false;
    if (*s > outer.g()(i) + tol * std::max(1.0, outer.H().row(i).norm())) return false;
  }
  return true;
}

HPolytope remove_redundancy(const HPolytope& poly, double tol) {
  const Index n = poly.dim();
  if (poly.is_empty()) return poly;
  if (poly.num_facets() == 0) return poly;

  Mat Hn;
  Vec gn;
  if (!normalize_rows(poly.H(), poly.g(), tol, Hn, gn)) return HPolytope::empty_set(n);
  // Track original row indices of the normalized rows.
  std::vector<Index> origin;
  for (Index i = 0; i < poly.num_facets(); ++i) {
    if (poly.H().row(i).norm() > kZeroRow) origin.push_back(i);
  }
  if (Hn.rows() == 0) return HPolytope::universe(n);

  std::vector<Index> rows = dedupe_parallel(Hn, gn);
  {
    const Mat H = select_rows(Hn, rows);
    const Vec g = select_rows(gn, rows);
    if (lp_empty(H, g)) return HPolytope::empty_set(n);
    if (const auto box = try_bounding_box(H, g)) {
      std::vector<Index> survivors;
      for (Index r : rows) {
        if (support(*box, Hn.row(r).transpose()) < gn(r) - 1e-12 * std::max(1.0, std::abs(gn(r)))) continue;
        survivors.push_back(r);
      }
      rows = std::move(survivors);
    }
  }

  std::vector<bool> alive(rows.size(), true);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index r = rows[k];
    Index count = 0;
    for (std::size_t j = 0; j < rows.size(); ++j) count += (alive[j] && j != k) ? 1 : 0;
    Mat H(count + 1, n);
    Vec g(count + 1);
    Index row = 0;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (!alive[j] || j == k) continue;
      H.row(row) = Hn.row(rows[j]);
      g(row++) = gn(rows[j]);
    }
    H.row(row) = Hn.row(r);
    g(row) = gn(r) + 1.0;
    const auto value = lp_max(H, g, Hn.row(r).transpose());
    if (value && *value <= gn(r) + tol) alive[k] = false;
  }

  std::vector<Index> kept;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (alive[k]) kept.push_back(origin[static_cast<std::size_t>(rows[k])]);
  }
  std::sort(kept.begin(), kept.end());
  return HPolytope(select_rows(poly.H(), kept), select_rows(poly.g(), kept));
}

namespace {

// Raw normalized predecessor rows; returns false if a constant row is violated.
bool pre_set_rows(const HPolytope& omega, std::span<const Mat> vertex_mats, const Box& w, double tol,
                  Mat& H_out, Vec& g_out) {
  const Index n = omega.dim();
  const Index f = omega.num_facets();
  Vec tightened(f);
  for (Index i = 0; i < f; ++i) tightened(i) = omega.g()(i) - support(w, omega.H().row(i).transpose());
  Mat H(f * static_cast<Index>(vertex_mats.size()), n);
  Vec g(H.rows());
  Index row = 0;
  for (const Mat& Av : vertex_mats) {
    require_dim(Av.rows(), n, "pre_set");
    require_dim(Av.cols(), n, "pre_set");
    H.middleRows(row, f) = omega.H() * Av;
    g.segment(row, f) = tightened;
    row += f;
  }
  return normalize_rows(H, g, tol, H_out, g_out);
}

}  // namespace

HPolytope pre_set(const HPolytope& omega, std::span<const Mat> vertex_mats, const Box& w, double tol) {
  require_dim(omega.dim(), w.dim(), "pre_set");
  if (omega.is_empty()) return omega;
  Mat H;
  Vec g;
  if (!pre_set_rows(omega, vertex_mats, w, tol, H, g)) return HPolytope::empty_set(omega.dim());
  return remove_redundancy(HPolytope(std::move(H), std::move(g)), tol);
}

RpiNotConverged::RpiNotConverged(HPolytope last_iterate, int iterations)
    : std::runtime_error("max_rpi: no convergence after " + std::to_string(iterations) + " iterations"),
      last_(std::move(last_iterate)),
      iterations_(iterations) {}

RpiResult max_rpi(std::span<const Mat> vertex_mats, const Box& w, const HPolytope& x_constraint,
                  const RpiOptions& options) {
  const Index n = x_constraint.dim();
  require_dim(w.dim(), n, "max_rpi");
  if (options.max_iter < 1) throw std::invalid_argument("max_rpi: max_iter must be >= 1");
  const double tol = options.tol;

  HPolytope omega = remove_redundancy(x_constraint.normalized(), tol);
  if (omega.is_empty()) return {HPolytope::empty_set(n), 0};
  (void)bounding_box(omega);  // rejects unbounded constraint sets

  for (int k = 1; k <= options.max_iter; ++k) {
    Mat Hc;
    Vec gc;
    if (!pre_set_rows(omega, vertex_mats, w, tol, Hc, gc)) return {HPolytope::empty_set(n), k};
    const std::vector<Index> candidates = dedupe_parallel(Hc, gc);
    const Box bb = bounding_box(omega);

    std::vector<Index> cutting;
    for (Index r : candidates) {
      const Vec h = Hc.row(r).transpose();
      if (support(bb, h) <= gc(r) + tol) continue;
      const auto value = lp_max(omega.H(), omega.g(), h);
      if (!value || *value > gc(r) + tol) cutting.push_back(r);
    }
    if (cutting.empty()) return {omega, k};

    const HPolytope cuts(select_rows(Hc, cutting), select_rows(gc, cutting));
    omega = remove_redundancy(omega.intersect(cuts), tol);
    if (omega.is_empty()) return {HPolytope::empty_set(n), k};
  }
  throw RpiNotConverged(omega, options.max_iter);
}

std::vector<Vec> enumerate_vertices(const HPolytope& poly, double tol) {
  const Index n = poly.dim();
  const Index m = poly.num_facets();
  std::vector<Vec> out;
  if (poly.is_empty() || m < n) return out;
  std::vector<Index> pick(static_cast<std::size_t>(n));
  std::iota(pick.begin(), pick.end(), Index{0});
  while (true) {
    Mat A(n, n);
    Vec b(n);
    for (Index i = 0; i < n; ++i) {
      A.row(i) = poly.H().row(pick[static_cast<std::size_t>(i)]);
      b(i) = poly.g()(pick[static_cast<std::size_t>(i)]);
    }
    Eigen::FullPivLU<Mat> lu(A);
    if (lu.isInvertible()) {
      const Vec v = lu.solve(b);
      if (contains(poly, v, tol)) {
        const bool dup = std::any_of(out.begin(), out.end(),
                                     [&](const Vec& o) { return (o - v).cwiseAbs().maxCoeff() <= tol; });
        if (!dup) out.push_back(v);
      }
    }
    Index i = n - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == m - n + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < n; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

}  // namespace resmpc
