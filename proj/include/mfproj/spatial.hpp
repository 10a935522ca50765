#pragma once

// Weight-aggregated k-d tree over a DiscreteMeasure. Every node keeps its
// bounding box, total mass and weighted centroid, which gives
//
//   * closed-ball masses at many radii in one traversal (nodes entirely
//     inside a ball contribute their mass without visiting points), and
//   * kernel sums  sum_j w_j min(1, r^s |x - y_j|^-s)  with a multipole
//     (mass + second moments) far-field approximation whose relative error
//     per node is bounded.

#include "mfproj/core.hpp"
#include "mfproj/measure.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace mfp {

class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 12;

  explicit KdTree(const DiscreteMeasure& mu) : dim_(mu.dim()) {
    const std::size_t n = mu.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    nodes_.reserve(2 * n / kLeafSize + 2);
    build(mu, order, 0, n);
    // Store points in tree order so leaves are contiguous.
    points_.resize(dim_, static_cast<Eigen::Index>(n));
    weights_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      points_.col(static_cast<Eigen::Index>(i)) = mu.point(order[i]);
      weights_[i] = mu.weight(order[i]);
    }
    finalize(0);
  }

  int dim() const { return dim_; }
  std::size_t size() const { return weights_.size(); }

  // Closed-ball masses mu(B(x, radii[k])) for every k. `radii` must be sorted
  // ascending; `out` receives one value per radius.
  void ball_masses(const Eigen::Ref<const Vector>& x, std::span<const double> radii,
                   std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> r2(radii.size());
    for (std::size_t k = 0; k < radii.size(); ++k) r2[k] = radii[k] * radii[k];
    ball_rec(0, x, r2, 0, r2.size(), out);
  }

  double ball_mass(const Eigen::Ref<const Vector>& x, double r) const {
    double out = 0.0;
    const double radii[1] = {r};
    ball_masses(x, radii, std::span<double>(&out, 1));
    return out;
  }

  // Kernel sums sum_j w_j min(1, (radii[k] / |x - y_j|)^s) for all k in one
  // traversal. Nodes entirely inside a ball contribute their mass. Nodes
  // entirely outside every remaining ball are replaced by the expansion of
  // |x - y|^-s about their centroid through second order (the first-order term
  // vanishes at the centroid). With t = rho / d, rho the node radius about the
  // centroid and d the distance to it, the Gegenbauer coefficients of
  // |x - y|^-s are bounded by those of (1 - t)^-s, so the relative truncation
  // error is at most
  //   (1 - t)^-s - 1 - s t - s(s+1)/2 t^2,
  // and a node is accepted once this drops below `rel_tol`. The accepted terms
  // are positive up to that error, so the total carries the same bound.
  void kernel_sums(const Eigen::Ref<const Vector>& x, std::span<const double> radii, double s,
                   double rel_tol, std::span<double> out) const {
    const std::size_t K = radii.size();
    std::vector<double> inside(K, 0.0);
    std::vector<double> far(K, 0.0);
    KernelQuery q{x, radii, s, rel_tol, inside, far};
    kernel_rec(0, q);
    for (std::size_t k = 0; k < K; ++k) {
      out[k] = inside[k] + std::pow(radii[k], s) * far[k];
    }
  }

 private:
  struct Node {
    double mass = 0.0;
    double radius = 0.0;  // max distance from centroid to the box
    std::size_t begin = 0, end = 0;
    std::int32_t left = -1, right = -1;
    bool leaf() const { return left < 0; }
  };

  struct KernelQuery {
    const Eigen::Ref<const Vector>& x;
    std::span<const double> radii;
    double s;
    double rel_tol;
    std::vector<double>& inside;
    std::vector<double>& far;
  };

  std::int32_t build(const DiscreteMeasure& mu, std::vector<std::uint32_t>& order,
                     std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    Vector lo = Vector::Constant(dim_, std::numeric_limits<double>::infinity());
    Vector hi = Vector::Constant(dim_, -std::numeric_limits<double>::infinity());
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(mu.point(order[i]));
      hi = hi.cwiseMax(mu.point(order[i]));
    }
    for (int a = 0; a < dim_; ++a) {
      lo_.push_back(lo[a]);
      hi_.push_back(hi[a]);
      centroid_.push_back(0.0);
    }
    second_.resize(second_.size() + static_cast<std::size_t>(dim_ * dim_), 0.0);
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin > kLeafSize) {
      Eigen::Index axis = 0;
      (hi - lo).maxCoeff(&axis);
      if (hi[axis] > lo[axis]) {
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(mid),
                         order.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::uint32_t a, std::uint32_t b) {
                           return mu.point(a)[axis] < mu.point(b)[axis];
                         });
        const auto l = build(mu, order, begin, mid);
        const auto r = build(mu, order, mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
      }
    }
    return id;
  }

  void finalize(std::int32_t id) {
    const auto nd = static_cast<std::size_t>(dim_);
    Node& node = nodes_[id];
    double* c = &centroid_[static_cast<std::size_t>(id) * nd];
    double mass = 0.0;
    if (node.leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        mass += weights_[i];
        for (std::size_t a = 0; a < nd; ++a) {
          c[a] += weights_[i] * points_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i));
        }
      }
    } else {
      finalize(node.left);
      finalize(node.right);
      const double ml = nodes_[node.left].mass;
      const double mr = nodes_[node.right].mass;
      const double* cl = &centroid_[static_cast<std::size_t>(node.left) * nd];
      const double* cr = &centroid_[static_cast<std::size_t>(node.right) * nd];
      mass = ml + mr;
      for (std::size_t a = 0; a < nd; ++a) c[a] = ml * cl[a] + mr * cr[a];
    }
    node.mass = mass;
    for (std::size_t a = 0; a < nd; ++a) c[a] = mass > 0.0 ? c[a] / mass : c[a];
    double* m2 = &second_[static_cast<std::size_t>(id) * nd * nd];
    if (node.leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        for (std::size_t a = 0; a < nd; ++a) {
          const double ua = points_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) - c[a];
          for (std::size_t b = 0; b < nd; ++b) {
            const double ub = points_(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) - c[b];
            m2[a * nd + b] += weights_[i] * ua * ub;
          }
        }
      }
    } else {
      for (const std::int32_t child : {node.left, node.right}) {
        const double mc = nodes_[child].mass;
        const double* cc = &centroid_[static_cast<std::size_t>(child) * nd];
        const double* qc = &second_[static_cast<std::size_t>(child) * nd * nd];
        for (std::size_t a = 0; a < nd; ++a) {
          for (std::size_t b = 0; b < nd; ++b) {
            m2[a * nd + b] += qc[a * nd + b] + mc * (cc[a] - c[a]) * (cc[b] - c[b]);
          }
        }
      }
    }
    const double* lo = &lo_[static_cast<std::size_t>(id) * nd];
    const double* hi = &hi_[static_cast<std::size_t>(id) * nd];
    double r2 = 0.0;
    for (std::size_t a = 0; a < nd; ++a) {
      if (!(mass > 0.0)) c[a] = 0.5 * (lo[a] + hi[a]);
      const double e = std::max(std::abs(c[a] - lo[a]), std::abs(c[a] - hi[a]));
      r2 += e * e;
    }
    node.radius = std::sqrt(r2);
  }

  void box_distances(std::int32_t id, const Eigen::Ref<const Vector>& x, double& dmin2,
                     double& dmax2) const {
    const double* lo = &lo_[static_cast<std::size_t>(id) * static_cast<std::size_t>(dim_)];
    const double* hi = &hi_[static_cast<std::size_t>(id) * static_cast<std::size_t>(dim_)];
    dmin2 = 0.0;
    dmax2 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double a = lo[i] - x[i];
      const double b = x[i] - hi[i];
      const double d = std::max({a, b, 0.0});
      dmin2 += d * d;
      const double e = std::max(std::abs(a), std::abs(b));
      dmax2 += e * e;
    }
  }

  void ball_rec(std::int32_t id, const Eigen::Ref<const Vector>& x, const std::vector<double>& r2,
                std::size_t k_begin, std::size_t k_end, std::span<double> out) const {
    const Node& node = nodes_[id];
    double dmin2 = 0.0, dmax2 = 0.0;
    box_distances(id, x, dmin2, dmax2);
    // First radius that reaches the box at all, and first that swallows it.
    std::size_t first_touch = k_end, first_full = k_end;
    for (std::size_t k = k_begin; k < k_end; ++k) {
      if (first_touch == k_end && r2[k] >= dmin2) first_touch = k;
      if (r2[k] >= dmax2) {
        first_full = k;
        break;
      }
    }
    for (std::size_t k = first_full; k < k_end; ++k) out[k] += node.mass;
    if (first_touch >= first_full) return;
    if (node.leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const double d2 = (points_.col(static_cast<Eigen::Index>(i)) - x).squaredNorm();
        for (std::size_t k = first_touch; k < first_full; ++k) {
          if (d2 <= r2[k]) out[k] += weights_[i];
        }
      }
      return;
    }
    // Children only need the partially covered radii.
    ball_rec(node.left, x, r2, first_touch, first_full, out);
    ball_rec(node.right, x, r2, first_touch, first_full, out);
  }

  // (1 - t)^-s - 1 - s t - s(s+1)/2 t^2
  static double truncation_bound(double t, double s) {
    if (s == 1.0) return t * t * t / (1.0 - t);
    return std::pow(1.0 - t, -s) - 1.0 - s * t - 0.5 * s * (s + 1.0) * t * t;
  }

  static double inverse_power(double d, double s) {
    if (s == 1.0) return 1.0 / d;
    if (s == 2.0) return 1.0 / (d * d);
    return std::pow(d, -s);
  }

  void kernel_rec(std::int32_t id, KernelQuery& q) const {
    const Node& node = nodes_[id];
    if (node.mass == 0.0) return;
    double dmin2 = 0.0, dmax2 = 0.0;
    box_distances(id, q.x, dmin2, dmax2);
    const double dmin = std::sqrt(dmin2);
    const double dmax = std::sqrt(dmax2);
    const std::size_t K = q.radii.size();
    bool mixed = false;
    bool any_outside = false;
    for (std::size_t k = 0; k < K; ++k) {
      const double r = q.radii[k];
      if (r >= dmax) continue;
      if (r < dmin) any_outside = true;
      else mixed = true;
    }
    if (!mixed) {
      if (!any_outside) {
        for (std::size_t k = 0; k < K; ++k) q.inside[k] += node.mass;
        return;
      }
      const auto nd = static_cast<std::size_t>(dim_);
      const double* c = &centroid_[static_cast<std::size_t>(id) * nd];
      double dc2 = 0.0;
      for (std::size_t a = 0; a < nd; ++a) dc2 += (c[a] - q.x[static_cast<Eigen::Index>(a)]) * (c[a] - q.x[static_cast<Eigen::Index>(a)]);
      const double dc = std::sqrt(dc2);
      const double t = node.radius / dc;
      if (t < 1.0 && truncation_bound(t, q.s) <= q.rel_tol) {
        // mass * d^-s + 1/2 sum_ab M2_ab H_ab with H the Hessian of |u|^-s at u = c - x.
        const double* m2 = &second_[static_cast<std::size_t>(id) * nd * nd];
        double quad = 0.0, trace = 0.0;
        for (std::size_t a = 0; a < nd; ++a) {
          const double ua = c[a] - q.x[static_cast<Eigen::Index>(a)];
          trace += m2[a * nd + a];
          for (std::size_t b = 0; b < nd; ++b) {
            quad += m2[a * nd + b] * ua * (c[b] - q.x[static_cast<Eigen::Index>(b)]);
          }
        }
        const double base = inverse_power(dc, q.s);
        const double pot =
            node.mass * base + 0.5 * q.s * base / dc2 * ((q.s + 2.0) * quad / dc2 - trace);
        for (std::size_t k = 0; k < K; ++k) {
          if (q.radii[k] >= dmax) q.inside[k] += node.mass;
          else q.far[k] += pot;
        }
        return;
      }
    }
    if (node.leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const double w = weights_[i];
        const double d = (points_.col(static_cast<Eigen::Index>(i)) - q.x).norm();
        const double pot = d > 0.0 ? w * inverse_power(d, q.s) : 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          if (d <= q.radii[k]) q.inside[k] += w;
          else q.far[k] += pot;
        }
      }
      return;
    }
    kernel_rec(node.left, q);
    kernel_rec(node.right, q);
  }

  int dim_;
  std::vector<Node> nodes_;
  std::vector<double> lo_, hi_, centroid_;  // dim_ entries per node
  std::vector<double> second_;              // dim_ x dim_ second moments about the centroid
  Matrix points_;
  std::vector<double> weights_;
};

}  // namespace mfp
