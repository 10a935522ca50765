#pragma once

// Bundled self-similar test measures. Each carries the open set condition
// and a grid base aligned with its contraction ratios.

#include "mfproj/measure.hpp"

#include <numbers>
#include <string>
#include <vector>

namespace mfp::library {

// Two-map Cantor measure on [0,1]: x/3 and x/3 + 2/3 with weights (p, 1-p).
inline IFSMeasure cantor(double p = 0.5, std::string name = "uniform-cantor") {
  std::vector<Similitude> maps{Similitude::scaling(1.0 / 3.0, Vector::Constant(1, 0.0)),
                               Similitude::scaling(1.0 / 3.0, Vector::Constant(1, 2.0 / 3.0))};
  return IFSMeasure(std::move(maps), {p, 1.0 - p}, true, 3, std::move(name));
}

inline IFSMeasure uniform_cantor() { return cantor(0.5, "uniform-cantor"); }
inline IFSMeasure binomial_cantor() { return cantor(0.3, "binomial-cantor"); }

// Lebesgue measure on [0,1] as the invariant measure of x/2, x/2 + 1/2.
inline IFSMeasure uniform_interval() {
  std::vector<Similitude> maps{Similitude::scaling(0.5, Vector::Constant(1, 0.0)),
                               Similitude::scaling(0.5, Vector::Constant(1, 0.5))};
  return IFSMeasure(std::move(maps), {0.5, 0.5}, true, 2, "uniform-interval");
}

// Dirac mass at the origin.
inline IFSMeasure atom(int n = 1) {
  std::vector<Similitude> maps{Similitude::scaling(0.5, Vector::Zero(n))};
  return IFSMeasure(std::move(maps), {1.0}, true, 2, "atom");
}

// Uniform Cantor x Uniform Cantor in the unit square (4 maps, ratio 1/3).
inline IFSMeasure product_cantor() {
  IFSMeasure m = product_measure(uniform_cantor(), uniform_cantor());
  m.name = "product-cantor";
  return m;
}

// Two maps of ratio 1/9 in the plane, the second composed with a quarter
// turn so the attractor does not lie on a line. The images of the attractor
// are far apart, so the open set condition holds.
inline IFSMeasure planar_cantor_9() {
  Vector t(2);
  t << 8.0 / 9.0, 8.0 / 9.0;
  std::vector<Similitude> maps{Similitude::scaling(1.0 / 9.0, Vector::Zero(2)),
                               Similitude(1.0 / 9.0, rotation_2d(std::numbers::pi / 2.0), t)};
  return IFSMeasure(std::move(maps), {0.5, 0.5}, true, 3, "planar-cantor-9");
}

// Right-angled Sierpinski gasket: x/2 + {(0,0), (1/2,0), (0,1/2)}, equal weights.
inline IFSMeasure sierpinski() {
  std::vector<Similitude> maps;
  for (const auto& [a, b] : std::vector<std::pair<double, double>>{{0.0, 0.0}, {0.5, 0.0}, {0.0, 0.5}}) {
    Vector t(2);
    t << a, b;
    maps.push_back(Similitude::scaling(0.5, t));
  }
  return IFSMeasure(std::move(maps), {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, true, 2, "sierpinski");
}

// A one-dimensional measure placed on the line through the origin at `degrees`.
inline IFSMeasure on_line(const IFSMeasure& ifs1d, double degrees, std::string name) {
  require(ifs1d.ambient_dim == 1, "on_line: source measure must live on R");
  IFSMeasure m = rotate(embed(ifs1d, 2), rotation_2d(degrees * std::numbers::pi / 180.0));
  m.name = std::move(name);
  return m;
}

inline IFSMeasure cantor_x_axis() { return on_line(uniform_cantor(), 0.0, "cantor-x-axis"); }
inline IFSMeasure cantor_line_30() { return on_line(uniform_cantor(), 30.0, "cantor-line-30"); }
inline IFSMeasure binomial_cantor_line() {
  return on_line(binomial_cantor(), 30.0, "binomial-cantor-line");
}

inline std::vector<std::string> names() {
  return {"uniform-cantor",  "binomial-cantor", "product-cantor",       "planar-cantor-9",
          "sierpinski",      "uniform-interval", "atom",                "cantor-x-axis",
          "cantor-line-30",  "binomial-cantor-line"};
}

inline bool has(const std::string& name) {
  for (const auto& n : names()) {
    if (n == name) return true;
  }
  return false;
}

inline IFSMeasure by_name(const std::string& name) {
  if (name == "uniform-cantor") return uniform_cantor();
  if (name == "binomial-cantor") return binomial_cantor();
  if (name == "product-cantor") return product_cantor();
  if (name == "planar-cantor-9") return planar_cantor_9();
  if (name == "sierpinski") return sierpinski();
  if (name == "uniform-interval") return uniform_interval();
  if (name == "atom") return atom();
  if (name == "cantor-x-axis") return cantor_x_axis();
  if (name == "cantor-line-30") return cantor_line_30();
  if (name == "binomial-cantor-line") return binomial_cantor_line();
  throw InvalidArgument("unknown bundled measure '" + name + "'");
}

}  // namespace mfp::library
