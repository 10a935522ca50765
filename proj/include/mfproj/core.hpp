#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Errors ---------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A configured budget (word count, memory) would be exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// A structured configuration or file-format error; `path` names the offending
// field, e.g. "maps[2].ratio".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

// Axis-aligned box -----------------------------------------------------------

struct Box {
  Vector lo;
  Vector hi;

  int dim() const { return static_cast<int>(lo.size()); }

  bool contains(const Vector& x, double slack = 0.0) const {
    for (int i = 0; i < dim(); ++i) {
      if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
    }
    return true;
  }

  double diagonal() const { return (hi - lo).norm(); }

  double max_side() const { return (hi - lo).maxCoeff(); }

  Box inflated(double amount) const {
    return Box{lo.array() - amount, hi.array() + amount};
  }

  // Euclidean distance from x to the nearest and farthest points of the box.
  double min_distance(const Vector& x) const {
    double acc = 0.0;
    for (int i = 0; i < dim(); ++i) {
      double d = 0.0;
      if (x[i] < lo[i]) d = lo[i] - x[i];
      else if (x[i] > hi[i]) d = x[i] - hi[i];
      acc += d * d;
    }
    return std::sqrt(acc);
  }

  double max_distance(const Vector& x) const {
    double acc = 0.0;
    for (int i = 0; i < dim(); ++i) {
      const double d = std::max(std::abs(x[i] - lo[i]), std::abs(x[i] - hi[i]));
      acc += d * d;
    }
    return std::sqrt(acc);
  }

  static Box of_columns(const Matrix& pts) {
    require(pts.cols() > 0, "Box::of_columns: empty point set");
    return Box{pts.rowwise().minCoeff(), pts.rowwise().maxCoeff()};
  }
};

// Deterministic seed derivation ----------------------------------------------

// splitmix64 finalizer; used to derive independent sub-seeds from a master seed
// in counter mode so that per-item streams do not depend on evaluation order.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t counter = 0) noexcept {
  return mix_seed(mix_seed(master ^ mix_seed(stream + 0x632be59bd9b4e019ULL)) + counter);
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace mfp
