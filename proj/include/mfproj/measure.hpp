#pragma once

// Compactly supported probability measures in three representations:
//
//   IFSMeasure      - similitudes plus probabilities; exact generative form,
//                     the only one that carries analytic oracles.
//   DiscreteMeasure - weighted point cloud, the substrate of ball and kernel
//                     sums.
//   GridMeasure     - b-adic coarse-graining at a fixed depth, the substrate
//                     of box moment sums.

#include "mfproj/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mfp {

// Similitude x -> ratio * rotation * x + translation.
struct Similitude {
  double ratio = 0.5;
  Matrix rotation;
  Vector translation;

  Similitude() = default;
  Similitude(double r, Matrix rot, Vector t)
      : ratio(r), rotation(std::move(rot)), translation(std::move(t)) {
    validate();
  }

  int dim() const { return static_cast<int>(translation.size()); }

  void validate() const {
    require(ratio > 0.0 && ratio < 1.0,
            "similitude ratio must lie in (0,1), got " + std::to_string(ratio));
    require(rotation.rows() == translation.size() && rotation.cols() == translation.size(),
            "similitude rotation must be square and match the translation dimension");
    const Matrix gram = rotation.transpose() * rotation;
    const double err = (gram - Matrix::Identity(dim(), dim())).cwiseAbs().maxCoeff();
    require(err <= 1e-10, "similitude rotation is not orthogonal (max |RtR - I| = " +
                              std::to_string(err) + ")");
  }

  Vector apply(const Vector& x) const { return ratio * (rotation * x) + translation; }

  Vector fixed_point() const {
    const Matrix a = Matrix::Identity(dim(), dim()) - ratio * rotation;
    return a.partialPivLu().solve(translation);
  }

  static Similitude scaling(double r, Vector t) {
    const auto n = t.size();
    return Similitude(r, Matrix::Identity(n, n), std::move(t));
  }
};

namespace detail {

inline bool is_power_of(double ratio, int base) {
  const double k = std::log(1.0 / ratio) / std::log(static_cast<double>(base));
  return k >= 0.5 && std::abs(k - std::round(k)) < 1e-9;
}

}  // namespace detail

// Grid base aligned with the maps: 3 when every ratio is a power of 1/3,
// otherwise 2.
inline int default_grid_base(const std::vector<Similitude>& maps) {
  const bool triadic = !maps.empty() && std::all_of(maps.begin(), maps.end(), [](const Similitude& s) {
    return detail::is_power_of(s.ratio, 3);
  });
  return triadic ? 3 : 2;
}

// Self-similar measure: the invariant measure of (maps, probs).
struct IFSMeasure {
  std::vector<Similitude> maps;
  std::vector<double> probs;
  int ambient_dim = 1;
  // Set by the author of the IFS when the open set condition holds; analytic
  // oracles refuse to run without it.
  bool osc_asserted = false;
  int grid_base = 2;
  std::string name;

  IFSMeasure() = default;
  IFSMeasure(std::vector<Similitude> m, std::vector<double> p, bool osc, int base = 0,
             std::string label = {})
      : maps(std::move(m)), probs(std::move(p)), osc_asserted(osc), name(std::move(label)) {
    require(!maps.empty(), "IFS must have at least one map");
    ambient_dim = maps.front().dim();
    grid_base = base > 0 ? base : default_grid_base(maps);
    validate();
  }

  void validate() const {
    require(!maps.empty(), "IFS must have at least one map");
    require(maps.size() == probs.size(), "IFS needs one probability per map");
    require(grid_base >= 2, "grid base must be at least 2");
    double total = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      maps[i].validate();
      require(maps[i].dim() == ambient_dim, "all IFS maps must share the ambient dimension");
      require(std::isfinite(probs[i]) && probs[i] > 0.0,
              "IFS probability " + std::to_string(i) +
                  " must be > 0 (zero branches change the support and are rejected)");
      total += probs[i];
    }
    require(std::abs(total - 1.0) <= 1e-12, "IFS probabilities must sum to 1 within 1e-12");
  }

  std::size_t size() const { return maps.size(); }

  double max_ratio() const {
    double r = 0.0;
    for (const auto& m : maps) r = std::max(r, m.ratio);
    return r;
  }

  // A box containing the attractor. Starts from the invariant-ball bound
  // |f_i(c) - c| + r_i R <= R and shrinks it by iterating the image of the box
  // under the maps; every iterate still contains the attractor.
  Box bounding_box() const {
    const int n = ambient_dim;
    Vector center = Vector::Zero(n);
    for (const auto& m : maps) center += m.fixed_point();
    center /= static_cast<double>(maps.size());
    double radius = 0.0;
    for (const auto& m : maps) {
      radius = std::max(radius, (m.apply(center) - center).norm() / (1.0 - m.ratio));
    }
    Box box{center.array() - radius, center.array() + radius};
    for (int iter = 0; iter < 500; ++iter) {
      const Vector mid = 0.5 * (box.lo + box.hi);
      const Vector half = 0.5 * (box.hi - box.lo);
      Box next{Vector::Constant(n, std::numeric_limits<double>::infinity()),
               Vector::Constant(n, -std::numeric_limits<double>::infinity())};
      for (const auto& m : maps) {
        const Vector c = m.apply(mid);
        const Vector h = m.ratio * (m.rotation.cwiseAbs() * half);
        next.lo = next.lo.cwiseMin(c - h);
        next.hi = next.hi.cwiseMax(c + h);
      }
      // Keep the running intersection so rounding never lets the box grow.
      next.lo = next.lo.cwiseMax(box.lo);
      next.hi = next.hi.cwiseMin(box.hi);
      const double change = std::max((next.lo - box.lo).cwiseAbs().maxCoeff(),
                                     (next.hi - box.hi).cwiseAbs().maxCoeff());
      box = std::move(next);
      if (change == 0.0) break;
    }
    return box;
  }
};

// Weighted point cloud. Points are stored one per column.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;

  DiscreteMeasure(Matrix points, std::vector<double> weights)
      : points_(std::move(points)), weights_(std::move(weights)) {
    require(points_.cols() > 0, "discrete measure needs at least one point");
    box_ = Box::of_columns(points_);
    validate();
  }

  DiscreteMeasure(Matrix points, std::vector<double> weights, Box box)
      : points_(std::move(points)), weights_(std::move(weights)), box_(std::move(box)) {
    require(points_.cols() > 0, "discrete measure needs at least one point");
    validate();
  }

  static DiscreteMeasure uniform_weights(Matrix points) {
    const auto n = static_cast<std::size_t>(points.cols());
    return DiscreteMeasure(std::move(points), std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  int dim() const { return static_cast<int>(points_.rows()); }
  std::size_t size() const { return weights_.size(); }
  const Matrix& points() const { return points_; }
  auto point(std::size_t i) const { return points_.col(static_cast<Eigen::Index>(i)); }
  const std::vector<double>& weights() const { return weights_; }
  double weight(std::size_t i) const { return weights_[i]; }
  const Box& bounding_box() const { return box_; }

  double total_mass() const { return std::accumulate(weights_.begin(), weights_.end(), 0.0); }

 private:
  void validate() const {
    require(static_cast<std::size_t>(points_.cols()) == weights_.size(),
            "discrete measure needs one weight per point");
    require(box_.dim() == points_.rows(), "bounding box dimension mismatch");
    double total = 0.0;
    for (double w : weights_) {
      require(std::isfinite(w) && w >= 0.0, "discrete measure weights must be finite and >= 0");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-9, "discrete measure weights must sum to 1 within 1e-9");
    const double slack = 1e-9 * (1.0 + box_.diagonal());
    for (Eigen::Index i = 0; i < points_.cols(); ++i) {
      require(points_.col(i).allFinite(), "discrete measure has a non-finite coordinate");
      require(box_.contains(points_.col(i), slack), "point lies outside the bounding box");
    }
  }

  Matrix points_;
  std::vector<double> weights_;
  Box box_;
};

using CellIndex = std::vector<std::int64_t>;

// b-adic coarse-graining of a measure inside the cube [origin, origin + box_side]^n.
// Cells at depth k have side box_side * base^-k; only non-empty cells are stored.
struct GridMeasure {
  int depth = 0;
  int base = 2;
  Vector origin;
  double box_side = 1.0;
  std::map<CellIndex, double> cells;

  int dim() const { return static_cast<int>(origin.size()); }
  double cell_side() const { return box_side * std::pow(static_cast<double>(base), -depth); }
  // Cell side in units of the box side, base^-depth.
  double relative_side() const { return std::pow(static_cast<double>(base), -depth); }
  std::int64_t cells_per_axis() const {
    std::int64_t c = 1;
    for (int i = 0; i < depth; ++i) c *= base;
    return c;
  }

  Box cell_box(const CellIndex& idx) const {
    const double side = cell_side();
    Box b{origin, origin};
    for (int i = 0; i < dim(); ++i) {
      b.lo[i] = origin[i] + side * static_cast<double>(idx[i]);
      b.hi[i] = b.lo[i] + side;
    }
    return b;
  }

  CellIndex locate(const Eigen::Ref<const Vector>& x) const {
    const double side = cell_side();
    const std::int64_t last = cells_per_axis() - 1;
    CellIndex idx(static_cast<std::size_t>(dim()));
    for (int i = 0; i < dim(); ++i) {
      const auto k = static_cast<std::int64_t>(std::floor((x[i] - origin[i]) / side));
      idx[static_cast<std::size_t>(i)] = std::clamp<std::int64_t>(k, 0, last);
    }
    return idx;
  }

  double total_mass() const {
    double t = 0.0;
    for (const auto& [idx, m] : cells) t += m;
    return t;
  }

  void validate() const {
    require(depth >= 0, "grid depth must be >= 0");
    require(base >= 2, "grid base must be >= 2");
    require(box_side > 0.0, "grid box side must be > 0");
    require(!cells.empty(), "grid measure must have at least one non-empty cell");
    for (const auto& [idx, m] : cells) {
      require(m > 0.0, "grid cells must have positive mass (empty cells are absent)");
      require(static_cast<int>(idx.size()) == dim(), "grid cell index dimension mismatch");
    }
    require(std::abs(total_mass() - 1.0) <= 1e-9, "grid masses must sum to 1 within 1e-9");
  }
};

// Re-aggregates a grid to a coarser depth by merging base^(depth - new_depth)
// cells per axis.
inline GridMeasure aggregate(const GridMeasure& grid, int new_depth) {
  require(new_depth >= 0 && new_depth <= grid.depth,
          "aggregate: target depth must lie in [0, grid depth]");
  GridMeasure out{new_depth, grid.base, grid.origin, grid.box_side, {}};
  std::int64_t factor = 1;
  for (int i = new_depth; i < grid.depth; ++i) factor *= grid.base;
  for (const auto& [idx, m] : grid.cells) {
    CellIndex parent(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) parent[i] = idx[i] / factor;
    out.cells[parent] += m;
  }
  return out;
}

namespace detail {

// Cube of side max_side sharing the lower corner of the box; degenerate
// (single-point) supports get a unit cube.
inline std::pair<Vector, double> grid_frame(const Box& box) {
  double side = box.max_side();
  if (!(side > 0.0)) side = 1.0;
  return {box.lo, side};
}

}  // namespace detail

struct CoarseGrainOptions {
  int base = 0;                              // 0: use the IFS grid base
  double word_budget = 16777216.0;           // 2^24
  int extra_levels = 8;                      // subdivisions allowed past the nominal word length
};

// Exact pushforward of cylinder masses onto the depth-k grid. Words are
// expanded to the nominal length L, the smallest with max_ratio^L <= base^-depth,
// and further while the image of the bounding box under the word straddles a
// cell boundary (at most extra_levels more). A word whose image fits in one
// cell deposits p_{i1}...p_{iL} there, so the result at depth k equals the
// depth k+1 result aggregated. Words still straddling after the extra levels
// deposit at the midpoint of their image.
inline GridMeasure coarse_grain(const IFSMeasure& ifs, int depth, CoarseGrainOptions opts = {}) {
  require(depth >= 0, "coarse_grain: depth must be >= 0");
  require(opts.extra_levels >= 0, "coarse_grain: extra_levels must be >= 0");
  const int base = opts.base > 0 ? opts.base : ifs.grid_base;
  require(base >= 2, "coarse_grain: base must be >= 2");
  const Box box = ifs.bounding_box();
  const auto [origin, side] = detail::grid_frame(box);

  int word_length = 0;
  if (depth > 0) {
    const double need = depth * std::log(static_cast<double>(base)) / std::log(1.0 / ifs.max_ratio());
    word_length = static_cast<int>(std::ceil(need - 1e-9));
  }
  auto over_budget = [&](double words) {
    return ResourceError("coarse_grain: depth " + std::to_string(depth) + " needs " + std::to_string(words) +
                         " words, above the budget of " + std::to_string(opts.word_budget));
  };
  if (std::pow(static_cast<double>(ifs.size()), word_length) > opts.word_budget) {
    throw over_budget(std::pow(static_cast<double>(ifs.size()), word_length));
  }

  GridMeasure grid{depth, base, origin, side, {}};
  const int n = ifs.ambient_dim;
  const Vector center = 0.5 * (box.lo + box.hi);
  const Vector half = 0.5 * (box.hi - box.lo);
  const double inset = 1e-9 * grid.cell_side();
  const int max_length = word_length + opts.extra_levels;
  double words = 0.0;

  // linear, offset: the composition f_{w1} o ... o f_{wj} for the current word.
  std::function<void(int, const Matrix&, const Vector&, double)> expand =
      [&](int level, const Matrix& linear, const Vector& offset, double mass) {
        if (level >= word_length) {
          const Vector mid = linear * center + offset;
          const Vector reach = linear.cwiseAbs() * half;
          const Vector lo = ((mid - reach).array() + inset).matrix().cwiseMin(mid);
          const Vector hi = ((mid + reach).array() - inset).matrix().cwiseMax(mid);
          const CellIndex cell = grid.locate(lo);
          if (cell == grid.locate(hi)) {
            grid.cells[cell] += mass;
            return;
          }
          if (level >= max_length) {
            grid.cells[grid.locate(mid)] += mass;
            return;
          }
        }
        words += static_cast<double>(ifs.size());
        if (words > opts.word_budget) throw over_budget(words);
        for (std::size_t i = 0; i < ifs.size(); ++i) {
          const auto& f = ifs.maps[i];
          expand(level + 1, linear * (f.ratio * f.rotation), linear * f.translation + offset, mass * ifs.probs[i]);
        }
      };
  expand(0, Matrix::Identity(n, n), Vector::Zero(n), 1.0);
  grid.validate();
  return grid;
}

// Bins a point cloud into the depth-k grid over the cube spanned by its
// bounding box.
inline GridMeasure bin_points(const DiscreteMeasure& mu, int depth, int base = 2) {
  require(depth >= 0, "bin_points: depth must be >= 0");
  require(base >= 2, "bin_points: base must be >= 2");
  const auto [origin, side] = detail::grid_frame(mu.bounding_box());
  GridMeasure grid{depth, base, origin, side, {}};
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu.weight(i) > 0.0) grid.cells[grid.locate(mu.point(i))] += mu.weight(i);
  }
  grid.validate();
  return grid;
}

// Random iteration: x_{t+1} = f_{i_t}(x_t) with i_t ~ probs, starting from the
// fixed point of the first map. Every visited point lies on the attractor.
inline DiscreteMeasure chaos_game_sample(const IFSMeasure& ifs, std::size_t n_points,
                                         std::size_t burn_in, std::uint64_t seed) {
  require(n_points >= 1, "chaos_game_sample: n_points must be >= 1");
  require(ifs.max_ratio() < 1.0, "chaos_game_sample: IFS is not contractive (max ratio >= 1)");
  ifs.validate();
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(ifs.probs.begin(), ifs.probs.end());

  // Precompose ratio * rotation once.
  std::vector<Matrix> linear;
  linear.reserve(ifs.size());
  for (const auto& m : ifs.maps) linear.push_back(m.ratio * m.rotation);

  Vector x = ifs.maps.front().fixed_point();
  for (std::size_t t = 0; t < burn_in; ++t) {
    const auto i = pick(rng);
    x = linear[i] * x + ifs.maps[i].translation;
  }
  Matrix pts(ifs.ambient_dim, static_cast<Eigen::Index>(n_points));
  for (std::size_t t = 0; t < n_points; ++t) {
    const auto i = pick(rng);
    x = linear[i] * x + ifs.maps[i].translation;
    pts.col(static_cast<Eigen::Index>(t)) = x;
  }
  Box box = ifs.bounding_box();
  box = box.inflated(1e-12 * (1.0 + box.diagonal()));
  std::vector<double> w(n_points, 1.0 / static_cast<double>(n_points));
  return DiscreteMeasure(std::move(pts), std::move(w), std::move(box));
}

// Closed Euclidean ball mass, exact on the point cloud.
inline double ball_mass(const DiscreteMeasure& mu, const Eigen::Ref<const Vector>& x, double r) {
  require(r > 0.0, "ball_mass: radius must be > 0");
  require(x.size() == mu.dim(), "ball_mass: point dimension mismatch");
  const double r2 = r * r;
  const Matrix& pts = mu.points();
  double total = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    if ((pts.col(i) - x).squaredNorm() <= r2) total += mu.weight(static_cast<std::size_t>(i));
  }
  return total;
}

// Upper estimate on a grid: total mass of the cells whose closed box meets the ball.
inline double ball_mass(const GridMeasure& grid, const Eigen::Ref<const Vector>& x, double r) {
  require(r > 0.0, "ball_mass: radius must be > 0");
  require(x.size() == grid.dim(), "ball_mass: point dimension mismatch");
  double total = 0.0;
  const Vector xv = x;
  for (const auto& [idx, m] : grid.cells) {
    if (grid.cell_box(idx).min_distance(xv) <= r) total += m;
  }
  return total;
}

// Homogeneous product: all pairs (f_i, g_j) with probabilities p_i q_j,
// acting block-diagonally on R^{n_a + n_b}.
inline IFSMeasure product_measure(const IFSMeasure& a, const IFSMeasure& b) {
  const double c = a.maps.front().ratio;
  for (const auto* ifs : {&a, &b}) {
    for (const auto& m : ifs->maps) {
      if (std::abs(m.ratio - c) > 1e-12) {
        throw InvalidArgument(
            "product_measure: all contraction ratios of both factors must be equal (got " +
            std::to_string(c) + " and " + std::to_string(m.ratio) +
            "); unequal ratios do not give a self-similar product");
      }
    }
  }
  const int na = a.ambient_dim;
  const int nb = b.ambient_dim;
  std::vector<Similitude> maps;
  std::vector<double> probs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      Matrix rot = Matrix::Zero(na + nb, na + nb);
      rot.topLeftCorner(na, na) = a.maps[i].rotation;
      rot.bottomRightCorner(nb, nb) = b.maps[j].rotation;
      Vector t(na + nb);
      t << a.maps[i].translation, b.maps[j].translation;
      maps.emplace_back(c, std::move(rot), std::move(t));
      probs.push_back(a.probs[i] * b.probs[j]);
    }
  }
  const std::string label = a.name.empty() || b.name.empty() ? std::string{} : a.name + "*" + b.name;
  return IFSMeasure(std::move(maps), std::move(probs), a.osc_asserted && b.osc_asserted,
                    a.grid_base, label);
}

// Conjugates every map by the orthogonal matrix q: the result is the image
// of the measure under x -> q x.
inline IFSMeasure rotate(const IFSMeasure& ifs, const Matrix& q) {
  require(q.rows() == ifs.ambient_dim && q.cols() == ifs.ambient_dim,
          "rotate: matrix must be n x n");
  std::vector<Similitude> maps;
  for (const auto& m : ifs.maps) {
    maps.emplace_back(m.ratio, q * m.rotation * q.transpose(), q * m.translation);
  }
  return IFSMeasure(std::move(maps), ifs.probs, ifs.osc_asserted, ifs.grid_base, ifs.name);
}

// Embeds an IFS on R^k into R^n (n >= k) through the first k coordinates.
inline IFSMeasure embed(const IFSMeasure& ifs, int n) {
  const int k = ifs.ambient_dim;
  require(n >= k, "embed: target dimension must be >= source dimension");
  std::vector<Similitude> maps;
  for (const auto& m : ifs.maps) {
    Matrix rot = Matrix::Identity(n, n);
    rot.topLeftCorner(k, k) = m.rotation;
    Vector t = Vector::Zero(n);
    t.head(k) = m.translation;
    maps.emplace_back(m.ratio, std::move(rot), std::move(t));
  }
  return IFSMeasure(std::move(maps), ifs.probs, ifs.osc_asserted, ifs.grid_base, ifs.name);
}

inline Matrix rotation_2d(double radians) {
  Matrix r(2, 2);
  r << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
  return r;
}

// Image of a point cloud under x -> q x (q orthogonal).
inline DiscreteMeasure rotate(const DiscreteMeasure& mu, const Matrix& q) {
  require(q.rows() == mu.dim() && q.cols() == mu.dim(), "rotate: matrix must be n x n");
  return DiscreteMeasure(q * mu.points(), mu.weights());
}

}  // namespace mfp
