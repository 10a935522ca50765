#pragma once

// Moment sums, kernel convolutions, scaling-exponent fits and the analytic
// moment-equation oracle for self-similar measures.
//
// Conventions. Every moment curve is a function of a scale r and every slope
// is the least-squares slope of log(value) against -log(r), so for a
// self-similar measure the packing and integral slopes at exponent q estimate
// the root beta of  sum_i p_i^q c_i^beta = 1  (negative for q > 1, zero at
// q = 1, positive for q < 1). Finite data cannot separate limsup from liminf;
// the two extreme consecutive two-point slopes are reported as brackets.
//
// The integral and kernel moments evaluate ball masses and kernels at r/3,
// the radius that appears in their definitions; the constant factor drops
// out of every slope.

#include "mfproj/core.hpp"
#include "mfproj/measure.hpp"
#include "mfproj/parallel.hpp"
#include "mfproj/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mfp {

// Geometric grid of scales between r_min and r_max (inclusive).
struct ScaleRange {
  double r_min = 1e-3;
  double r_max = 1e-1;
  int count = 5;

  ScaleRange() = default;
  ScaleRange(double lo, double hi, int n) : r_min(lo), r_max(hi), count(n) { validate(); }

  void validate() const {
    require(r_min > 0.0 && r_min < r_max, "scale range needs 0 < r_min < r_max");
    require(count >= 3, "scale range needs at least 3 scales");
  }

  // Ascending radii r_min * (r_max / r_min)^(i / (count - 1)).
  std::vector<double> radii() const {
    validate();
    std::vector<double> out(static_cast<std::size_t>(count));
    const double step = std::log(r_max / r_min) / (count - 1);
    for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = r_min * std::exp(step * i);
    out.front() = r_min;
    out.back() = r_max;
    return out;
  }

  // base^-hi .. base^-lo in (hi - lo + 1) steps, e.g. triadic(3, 9).
  static ScaleRange powers(int base, int lo_exp, int hi_exp) {
    return ScaleRange(std::pow(static_cast<double>(base), -hi_exp),
                      std::pow(static_cast<double>(base), -lo_exp), hi_exp - lo_exp + 1);
  }
};

struct MomentEntry {
  double r = 0.0;
  double value = 0.0;
};

struct MomentCurve {
  double q = 0.0;
  std::optional<double> kernel_exponent;
  std::vector<MomentEntry> entries;
};

struct SpectrumEstimate {
  double q = 0.0;
  double slope = kNaN;
  double lower_bracket = kNaN;
  double upper_bracket = kNaN;
  double residual = kNaN;
  ScaleRange scales;
  std::size_t n_used = 0;
  // Scales whose value was non-positive or non-finite and left out of the fit.
  std::vector<double> excluded_r;
  std::string estimator;
  std::optional<double> kernel_exponent;
  MomentCurve curve;  // the moment values the fit was taken from
};

// Least-squares line through (x, y) plus the extreme consecutive two-point
// slopes (points ordered by x).
struct LineFit {
  double slope = kNaN;
  double intercept = kNaN;
  double lower = kNaN;
  double upper = kNaN;
  double residual = kNaN;
};

inline LineFit fit_line(std::vector<double> xs, std::vector<double> ys) {
  require(xs.size() == ys.size() && xs.size() >= 2, "fit_line: need at least 2 points");
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  require(sxx > 0.0, "fit_line: abscissae are all equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (fit.intercept + fit.slope * xs[i]);
    ss += e * e;
  }
  fit.residual = std::sqrt(ss / n);
  fit.lower = std::numeric_limits<double>::infinity();
  fit.upper = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < order.size(); ++i) {
    const double dx = xs[order[i]] - xs[order[i - 1]];
    if (dx <= 0.0) continue;
    const double s = (ys[order[i]] - ys[order[i - 1]]) / dx;
    fit.lower = std::min(fit.lower, s);
    fit.upper = std::max(fit.upper, s);
  }
  // The LS slope is a positive combination of consecutive slopes; clamp rounding.
  fit.lower = std::min(fit.lower, fit.slope);
  fit.upper = std::max(fit.upper, fit.slope);
  return fit;
}

inline SpectrumEstimate fit_tau(const MomentCurve& curve) {
  std::vector<double> xs, ys, excluded;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& e : curve.entries) {
    if (!(e.r > 0.0) || !std::isfinite(e.value) || !(e.value > 0.0)) {
      excluded.push_back(e.r);
      continue;
    }
    xs.push_back(-std::log(e.r));
    ys.push_back(std::log(e.value));
    lo = std::min(lo, e.r);
    hi = std::max(hi, e.r);
  }
  if (xs.size() < 3) {
    throw InvalidArgument("fit_tau: fewer than 3 usable scales (" + std::to_string(xs.size()) +
                          " of " + std::to_string(curve.entries.size()) + ")");
  }
  const LineFit fit = fit_line(xs, ys);
  SpectrumEstimate est;
  est.q = curve.q;
  est.kernel_exponent = curve.kernel_exponent;
  est.slope = fit.slope;
  est.lower_bracket = fit.lower;
  est.upper_bracket = fit.upper;
  est.residual = fit.residual;
  est.scales.r_min = lo;
  est.scales.r_max = hi;
  est.scales.count = static_cast<int>(xs.size());
  est.n_used = xs.size();
  est.excluded_r = std::move(excluded);
  est.curve = curve;
  return est;
}

// Packing (grid) moments ------------------------------------------------------

inline constexpr double kDefaultMassFloor = 1e-15;

struct MomentSum {
  double value = 0.0;
  double floor = 0.0;           // mass floor applied (q < 0 only, else 0)
  std::size_t cells_excluded = 0;
};

// Sum over non-empty cells of mass^q. For q < 0 cells below `floor` are left
// out and counted.
inline MomentSum packing_moment(const GridMeasure& grid, double q,
                                double floor = kDefaultMassFloor) {
  require(!grid.cells.empty(), "packing_moment: empty grid");
  MomentSum out;
  out.floor = q < 0.0 ? floor : 0.0;
  for (const auto& [idx, m] : grid.cells) {
    if (q < 0.0 && m < floor) {
      ++out.cells_excluded;
      continue;
    }
    out.value += q == 0.0 ? 1.0 : std::pow(m, q);
  }
  return out;
}

// Grids at every depth in [min_depth, finest.depth], coarsest first.
inline std::vector<GridMeasure> grid_sequence(const GridMeasure& finest, int min_depth) {
  require(min_depth >= 0 && min_depth <= finest.depth, "grid_sequence: bad minimum depth");
  std::vector<GridMeasure> out;
  for (int k = min_depth; k <= finest.depth; ++k) out.push_back(aggregate(finest, k));
  return out;
}

namespace detail {

// Grid depths whose cell side is closest to each requested scale.
inline std::vector<int> depths_for_scales(const GridMeasure& grid, const ScaleRange& scales) {
  std::set<int> depths;
  for (double r : scales.radii()) {
    const double k = std::log(grid.box_side / r) / std::log(static_cast<double>(grid.base));
    const int d = static_cast<int>(std::lround(k));
    if (d >= 0 && d <= grid.depth) depths.insert(d);
  }
  if (depths.size() < 3) {
    throw InvalidArgument("estimate_B: scale range [" + std::to_string(scales.r_min) + ", " +
                          std::to_string(scales.r_max) + "] covers fewer than 3 depths of a depth-" +
                          std::to_string(grid.depth) + " grid");
  }
  return {depths.begin(), depths.end()};
}

inline CellIndex parent_index(const CellIndex& idx, std::int64_t factor) {
  CellIndex p(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) p[i] = idx[i] / factor;
  return p;
}

inline std::int64_t ipow(std::int64_t b, int e) {
  std::int64_t out = 1;
  for (int i = 0; i < e; ++i) out *= b;
  return out;
}

}  // namespace detail

// Packing moment curve with r = cell side at each depth.
inline MomentCurve packing_curve(const GridMeasure& finest, double q, const std::vector<int>& depths,
                                 double floor = kDefaultMassFloor) {
  MomentCurve curve;
  curve.q = q;
  for (int k : depths) {
    const GridMeasure g = aggregate(finest, k);
    curve.entries.push_back({g.cell_side(), packing_moment(g, q, floor).value});
  }
  return curve;
}

// Integral moments -------------------------------------------------------------

// sum_i w_i mu(B(x_i, r/3))^(q-1) at every radius, using one tree traversal
// per point. `targets` optionally restricts the outer sum to a subset (the
// inner ball masses always use the whole measure).
inline MomentCurve integral_curve(const DiscreteMeasure& mu, const KdTree& tree, double q,
                                  const std::vector<double>& radii,
                                  const std::vector<std::size_t>* targets = nullptr) {
  require(q > 1.0, "integral_moment requires q > 1; use packing_moment for q <= 1");
  std::vector<double> shrunk(radii.size());
  for (std::size_t k = 0; k < radii.size(); ++k) {
    require(radii[k] > 0.0, "integral_moment: radius must be > 0");
    shrunk[k] = radii[k] / 3.0;
  }
  require(std::is_sorted(shrunk.begin(), shrunk.end()), "integral_curve: radii must be ascending");
  const std::size_t n = targets ? targets->size() : mu.size();
  const std::size_t K = radii.size();
  std::vector<double> per_point(n * K);
  parallel_for(n, [&](std::size_t t) {
    const std::size_t i = targets ? (*targets)[t] : t;
    std::span<double> out(per_point.data() + t * K, K);
    tree.ball_masses(mu.point(i), shrunk, out);
    for (double& v : out) v = q == 2.0 ? v : std::pow(v, q - 1.0);
  });
  MomentCurve curve;
  curve.q = q;
  for (std::size_t k = 0; k < K; ++k) {
    double total = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t i = targets ? (*targets)[t] : t;
      total += mu.weight(i) * per_point[t * K + k];
    }
    curve.entries.push_back({radii[k], total});
  }
  return curve;
}

inline MomentCurve integral_curve(const DiscreteMeasure& mu, double q, const std::vector<double>& radii) {
  require(q > 1.0, "integral_moment requires q > 1; use packing_moment for q <= 1");
  const KdTree tree(mu);
  return integral_curve(mu, tree, q, radii);
}

inline double integral_moment(const DiscreteMeasure& mu, double q, double r) {
  require(q > 1.0, "integral_moment requires q > 1; use packing_moment for q <= 1");
  require(r > 0.0, "integral_moment: radius must be > 0");
  return integral_curve(mu, q, {r}).entries.front().value;
}

// Kernel convolution -----------------------------------------------------------

inline void require_kernel_exponent(const DiscreteMeasure& mu, double s) {
  require(s >= 1.0 && s <= static_cast<double>(mu.dim()),
          "kernel exponent s must lie in [1, n] = [1, " + std::to_string(mu.dim()) + "], got " +
              std::to_string(s));
}

// mu * phi_r^s (x) = sum_j w_j min(1, r^s |x - y_j|^-s), evaluated exactly.
// Computed as ball_mass(x, r) plus the tail over |x - y| > r, so it dominates
// ball_mass(x, r) term by term.
inline double kernel_value(const DiscreteMeasure& mu, const Eigen::Ref<const Vector>& x, double r,
                           double s) {
  require_kernel_exponent(mu, s);
  require(r > 0.0, "kernel_value: radius must be > 0");
  require(x.size() == mu.dim(), "kernel_value: point dimension mismatch");
  const double inside = ball_mass(mu, x, r);
  const double r2 = r * r;
  double tail = 0.0;
  const Matrix& pts = mu.points();
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const double d2 = (pts.col(j) - x).squaredNorm();
    if (d2 > r2) tail += mu.weight(static_cast<std::size_t>(j)) * std::pow(r2 / d2, 0.5 * s);
  }
  return inside + tail;
}

inline constexpr double kKernelRelTol = 1e-3;

// sum_i w_i (mu * phi_{r/3}^s (x_i))^(q-1) at every radius. Kernel sums use
// the k-d tree far-field approximation (relative error <= rel_tol).
inline MomentCurve kernel_curve(const DiscreteMeasure& mu, const KdTree& tree, double q, double s,
                                const std::vector<double>& radii, double rel_tol = kKernelRelTol) {
  require(q > 1.0, "kernel_moment requires q > 1");
  require_kernel_exponent(mu, s);
  std::vector<double> shrunk(radii.size());
  for (std::size_t k = 0; k < radii.size(); ++k) {
    require(radii[k] > 0.0, "kernel_moment: radius must be > 0");
    shrunk[k] = radii[k] / 3.0;
  }
  require(std::is_sorted(shrunk.begin(), shrunk.end()), "kernel_curve: radii must be ascending");
  const std::size_t n = mu.size();
  const std::size_t K = radii.size();
  std::vector<double> per_point(n * K);
  parallel_for(n, [&](std::size_t i) {
    std::span<double> out(per_point.data() + i * K, K);
    tree.kernel_sums(mu.point(i), shrunk, s, rel_tol, out);
    for (double& v : out) v = q == 2.0 ? v : std::pow(v, q - 1.0);
  });
  MomentCurve curve;
  curve.q = q;
  curve.kernel_exponent = s;
  for (std::size_t k = 0; k < K; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += mu.weight(i) * per_point[i * K + k];
    curve.entries.push_back({radii[k], total});
  }
  return curve;
}

inline MomentCurve kernel_curve(const DiscreteMeasure& mu, double q, double s,
                                const std::vector<double>& radii, double rel_tol = kKernelRelTol) {
  require(q > 1.0, "kernel_moment requires q > 1");
  require_kernel_exponent(mu, s);
  const KdTree tree(mu);
  return kernel_curve(mu, tree, q, s, radii, rel_tol);
}

inline double kernel_moment(const DiscreteMeasure& mu, double q, double r, double s) {
  require(r > 0.0, "kernel_moment: radius must be > 0");
  return kernel_curve(mu, q, s, {r}).entries.front().value;
}

// Analytic oracle ----------------------------------------------------------------

// The unique beta with sum_i p_i^q c_i^beta = 1, by bisection on [-40, 40].
// Only meaningful under the open set condition, so it refuses IFSs without
// that assertion.
inline double analytic_B(const IFSMeasure& ifs, double q) {
  if (!ifs.osc_asserted) {
    throw InvalidArgument("analytic_B: the open set condition is not asserted for this IFS; "
                          "the moment equation is not a valid oracle");
  }
  require(std::isfinite(q), "analytic_B: q must be finite");
  if (q == 1.0) return 0.0;
  // log sum_i exp(q log p_i + beta log c_i); strictly decreasing in beta.
  auto log_sum = [&](double beta) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(ifs.size());
    for (std::size_t i = 0; i < ifs.size(); ++i) {
      terms[i] = q * std::log(ifs.probs[i]) + beta * std::log(ifs.maps[i].ratio);
      mx = std::max(mx, terms[i]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - mx);
    return mx + std::log(acc);
  };
  double lo = -40.0, hi = 40.0;
  if (log_sum(lo) < 0.0 || log_sum(hi) > 0.0) {
    throw InvalidArgument("analytic_B: root lies outside [-40, 40] for q = " + std::to_string(q));
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (log_sum(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  const double beta = 0.5 * (lo + hi);
  if (std::abs(std::expm1(log_sum(beta))) > 1e-12) {
    throw InvalidArgument("analytic_B: bisection did not reach |sum - 1| <= 1e-12");
  }
  return beta;
}

// Central difference of analytic_B.
inline double analytic_B_derivative(const IFSMeasure& ifs, double q, double step = 1e-4) {
  return (analytic_B(ifs, q + step) - analytic_B(ifs, q - step)) / (2.0 * step);
}

// Scaling-exponent estimates -----------------------------------------------------

struct EstimateOptions {
  bool refine = false;
  int refine_depth = 1;       // depth of the cells used as the cover when refining
  int base = 2;               // grid base when binning point clouds
  double mass_floor = kDefaultMassFloor;
};

namespace detail {

inline SpectrumEstimate tagged(SpectrumEstimate est, const char* name, const ScaleRange& scales) {
  est.estimator = name;
  if (est.excluded_r.empty()) est.scales = scales;
  return est;
}

}  // namespace detail

// Packing estimate from the finest grid of a sequence: slope of the grid
// moment sum over the depths that best match the scale range. With refine,
// the support is split into the cells at opts.refine_depth and the largest
// per-cell slope is returned, a one-level stand-in for the infimum over covers.
inline SpectrumEstimate estimate_B(const GridMeasure& grid, double q, const ScaleRange& scales,
                                   const EstimateOptions& opts = {}) {
  grid.validate();
  const std::vector<int> depths = detail::depths_for_scales(grid, scales);
  if (!opts.refine) {
    return detail::tagged(fit_tau(packing_curve(grid, q, depths, opts.mass_floor)), "packing", scales);
  }
  require(opts.refine_depth >= 0 && opts.refine_depth <= depths.front(),
          "estimate_B: refine depth must not exceed the coarsest fitted depth");
  // Per cover cell, per depth: sum of mass^q over the sub-cells.
  std::map<CellIndex, std::vector<double>> sums;
  for (std::size_t d = 0; d < depths.size(); ++d) {
    const GridMeasure g = aggregate(grid, depths[d]);
    const auto factor = detail::ipow(grid.base, depths[d] - opts.refine_depth);
    for (const auto& [idx, m] : g.cells) {
      auto& row = sums[detail::parent_index(idx, factor)];
      row.resize(depths.size(), 0.0);
      if (q < 0.0 && m < opts.mass_floor) continue;
      row[d] += q == 0.0 ? 1.0 : std::pow(m, q);
    }
  }
  std::optional<SpectrumEstimate> best;
  for (const auto& [cell, row] : sums) {
    MomentCurve curve;
    curve.q = q;
    for (std::size_t d = 0; d < depths.size(); ++d) {
      curve.entries.push_back({aggregate(grid, depths[d]).cell_side(), row[d]});
    }
    SpectrumEstimate est = fit_tau(curve);
    if (!best || est.slope > best->slope) best = std::move(est);
  }
  return detail::tagged(*best, "packing", scales);
}

// Point-cloud estimate. q > 1 uses the integral moment; q <= 1 bins the
// cloud on a grid fine enough for r_min and uses packing moments.
inline SpectrumEstimate estimate_B(const DiscreteMeasure& mu, double q, const ScaleRange& scales,
                                   const EstimateOptions& opts = {}) {
  if (q <= 1.0) {
    const double side = std::max(mu.bounding_box().max_side(), std::numeric_limits<double>::min());
    const int depth = std::max(
        0, static_cast<int>(std::ceil(std::log(side / scales.r_min) / std::log(double(opts.base)) - 1e-9)));
    return estimate_B(bin_points(mu, depth, opts.base), q, scales, opts);
  }
  const KdTree tree(mu);
  const std::vector<double> radii = scales.radii();
  if (!opts.refine) {
    return detail::tagged(fit_tau(integral_curve(mu, tree, q, radii)), "integral", scales);
  }
  const GridMeasure cover = bin_points(mu, opts.refine_depth, opts.base);
  std::map<CellIndex, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < mu.size(); ++i) members[cover.locate(mu.point(i))].push_back(i);
  std::optional<SpectrumEstimate> best;
  for (const auto& [cell, idx] : members) {
    SpectrumEstimate est = fit_tau(integral_curve(mu, tree, q, radii, &idx));
    if (!best || est.slope > best->slope) best = std::move(est);
  }
  return detail::tagged(*best, "integral", scales);
}

inline SpectrumEstimate kernel_spectrum(const DiscreteMeasure& mu, double q, double s,
                                        const ScaleRange& scales, double rel_tol = kKernelRelTol) {
  require(q > 1.0, "kernel_spectrum requires q > 1");
  require_kernel_exponent(mu, s);
  return detail::tagged(fit_tau(kernel_curve(mu, q, s, scales.radii(), rel_tol)), "kernel", scales);
}

// Legendre transform ---------------------------------------------------------------

struct QSample {
  double q = 0.0;
  double b = 0.0;
};

struct LegendreValue {
  double value = kNaN;
  double q_star = kNaN;
  // False when every minimizer sits at an end of the q grid; the value is
  // then only an upper bound for the infimum over all q.
  bool interior = false;
};

// min over the samples of q * alpha + B(q).
inline LegendreValue legendre(std::vector<QSample> samples, double alpha) {
  require(!samples.empty(), "legendre: empty sample list");
  require(samples.size() >= 2, "legendre: need at least 2 samples");
  require(alpha >= 0.0, "legendre: alpha must be >= 0");
  std::sort(samples.begin(), samples.end(), [](const QSample& a, const QSample& b) { return a.q < b.q; });
  LegendreValue out;
  std::size_t arg = 0;
  out.value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = samples[i].q * alpha + samples[i].b;
    if (v < out.value) {
      out.value = v;
      arg = i;
    }
  }
  out.q_star = samples[arg].q;
  const double tie = 1e-12 * (1.0 + std::abs(out.value));
  for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
    if (samples[i].q * alpha + samples[i].b <= out.value + tie) {
      out.interior = true;
      break;
    }
  }
  return out;
}

inline std::vector<QSample> sample_analytic_B(const IFSMeasure& ifs, double q_min, double q_max, int n) {
  require(n >= 2 && q_max > q_min, "sample_analytic_B: need n >= 2 and q_max > q_min");
  std::vector<QSample> out;
  for (int i = 0; i < n; ++i) {
    const double q = q_min + (q_max - q_min) * i / (n - 1);
    out.push_back({q, analytic_B(ifs, q)});
  }
  return out;
}

// Local dimension ------------------------------------------------------------------

// Slope of log mu(B(x, 3r)) against log r. Scales with zero ball mass are
// dropped and listed in excluded_r.
inline SpectrumEstimate local_dimension(const DiscreteMeasure& mu, const KdTree& tree,
                                        const Eigen::Ref<const Vector>& x, const ScaleRange& scales) {
  require(x.size() == mu.dim(), "local_dimension: point dimension mismatch");
  require(mu.bounding_box().inflated(scales.r_max).contains(x),
          "local_dimension: x lies outside the support box inflated by r_max");
  const std::vector<double> radii = scales.radii();
  std::vector<double> tripled(radii.size());
  for (std::size_t k = 0; k < radii.size(); ++k) tripled[k] = 3.0 * radii[k];
  std::vector<double> masses(radii.size());
  tree.ball_masses(x, tripled, masses);
  std::vector<double> xs, ys, excluded;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (!(masses[k] > 0.0)) {
      excluded.push_back(radii[k]);
      continue;
    }
    xs.push_back(std::log(radii[k]));
    ys.push_back(std::log(masses[k]));
  }
  if (xs.size() < 3) throw InvalidArgument("local_dimension: fewer than 3 scales with positive mass");
  const LineFit fit = fit_line(xs, ys);
  SpectrumEstimate est;
  est.slope = fit.slope;
  est.lower_bracket = fit.lower;
  est.upper_bracket = fit.upper;
  est.residual = fit.residual;
  est.scales = scales;
  est.n_used = xs.size();
  est.excluded_r = std::move(excluded);
  est.estimator = "local";
  return est;
}

inline SpectrumEstimate local_dimension(const DiscreteMeasure& mu, const Eigen::Ref<const Vector>& x,
                                        const ScaleRange& scales) {
  const KdTree tree(mu);
  return local_dimension(mu, tree, x, scales);
}

// Coarse (histogram) spectrum --------------------------------------------------------

struct AlphaBinning {
  double alpha_min = 0.0;
  double alpha_max = 2.0;
  int bins = 20;

  double width() const { return (alpha_max - alpha_min) / bins; }
  double center(int b) const { return alpha_min + (b + 0.5) * width(); }
  // Bin of alpha, or -1 outside [alpha_min, alpha_max].
  int bin_of(double alpha) const {
    // Absorb round-off at the ends, e.g. a unit mass summed to 1 + 1e-16.
    const double slack = 1e-9 * width();
    if (alpha < alpha_min - slack || alpha > alpha_max + slack) return -1;
    return std::clamp(static_cast<int>((alpha - alpha_min) / width()), 0, bins - 1);
  }
};

struct CoarsePoint {
  double alpha = 0.0;
  double f = kNaN;
  int n_depths = 0;     // depths at which the bin was occupied
  bool present = false; // false: the bin was empty at too many depths to fit
};

namespace detail {

// Coarse Hoelder exponent of a cell: log(mass) / log(relative side).
inline double cell_alpha(double mass, const GridMeasure& g) {
  return std::log(mass) / std::log(g.relative_side());
}

inline void require_grid_sequence(const std::vector<GridMeasure>& grids) {
  require(grids.size() >= 3, "coarse_spectrum: need at least 3 depths");
  for (const auto& g : grids) {
    require(g.depth >= 1, "coarse_spectrum: depth-0 grids carry no scaling information");
  }
}

}  // namespace detail

// For each alpha bin, f is the slope of log(number of cells whose coarse
// exponent falls in the bin) against -log(relative cell side) across the
// depths. Bins occupied at fewer than 2 depths are reported absent.
inline std::vector<CoarsePoint> coarse_spectrum(const std::vector<GridMeasure>& grids,
                                                const AlphaBinning& binning) {
  detail::require_grid_sequence(grids);
  require(binning.bins >= 1 && binning.alpha_max > binning.alpha_min, "coarse_spectrum: bad binning");
  const auto B = static_cast<std::size_t>(binning.bins);
  std::vector<std::vector<double>> counts(grids.size(), std::vector<double>(B, 0.0));
  for (std::size_t d = 0; d < grids.size(); ++d) {
    for (const auto& [idx, m] : grids[d].cells) {
      const int b = binning.bin_of(detail::cell_alpha(m, grids[d]));
      if (b >= 0) counts[d][static_cast<std::size_t>(b)] += 1.0;
    }
  }
  std::vector<CoarsePoint> out;
  for (std::size_t b = 0; b < B; ++b) {
    CoarsePoint pt;
    pt.alpha = binning.center(static_cast<int>(b));
    std::vector<double> xs, ys;
    for (std::size_t d = 0; d < grids.size(); ++d) {
      if (counts[d][b] > 0.0) {
        xs.push_back(-std::log(grids[d].relative_side()));
        ys.push_back(std::log(counts[d][b]));
      }
    }
    pt.n_depths = static_cast<int>(xs.size());
    if (xs.size() >= 2) {
      pt.f = fit_line(xs, ys).slope;
      pt.present = true;
    }
    out.push_back(pt);
  }
  return out;
}

struct CoarseTail {
  double alpha = 0.0;
  double f = kNaN;
  bool lower_tail = true;  // counted cells with exponent <= alpha (else >= alpha)
  int n_depths = 0;
  double residual = kNaN;
};

// f(alpha) from tail counts: the number of cells whose coarse exponent lies on
// the far side of alpha from the most populated exponent. Below the peak of the
// spectrum this count grows like side^-f(alpha), and unlike a narrow bin it does
// not depend on how the discrete exponent values fall relative to bin edges.
inline CoarseTail coarse_spectrum_at(const std::vector<GridMeasure>& grids, double alpha) {
  detail::require_grid_sequence(grids);
  // Locate the most populated exponent at the finest depth via a fine histogram.
  const GridMeasure& finest = grids.back();
  std::map<long, double> hist;
  for (const auto& [idx, m] : finest.cells) {
    hist[std::lround(detail::cell_alpha(m, finest) * 100.0)] += 1.0;
  }
  long mode = hist.begin()->first;
  double best = -1.0;
  for (const auto& [key, count] : hist) {
    if (count > best) {
      best = count;
      mode = key;
    }
  }
  CoarseTail out;
  out.alpha = alpha;
  out.lower_tail = alpha <= static_cast<double>(mode) / 100.0;
  std::vector<double> xs, ys;
  for (const auto& g : grids) {
    double count = 0.0;
    for (const auto& [idx, m] : g.cells) {
      const double a = detail::cell_alpha(m, g);
      if (out.lower_tail ? a <= alpha : a >= alpha) count += 1.0;
    }
    if (count > 0.0) {
      xs.push_back(-std::log(g.relative_side()));
      ys.push_back(std::log(count));
    }
  }
  out.n_depths = static_cast<int>(xs.size());
  if (xs.size() >= 2) {
    const LineFit fit = fit_line(xs, ys);
    out.f = fit.slope;
    out.residual = fit.residual;
  }
  return out;
}

}  // namespace mfp
