#pragma once

// File formats:
//   * measure description JSON (strict: unknown fields are rejected),
//   * point-cloud CSV  `x1,...,xn,weight`,
//   * spectrum CSV, moment-curve CSV, projection report CSV, frame dump CSV.
// Numbers are written with %.17g so files round-trip and are byte-stable.

#include "mfproj/measure.hpp"
#include "mfproj/projections.hpp"
#include "mfproj/spectra.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mfp::io {

using json = nlohmann::json;

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string{}; }

// JSON helpers ---------------------------------------------------------------

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(path.empty() ? key : path + "." + key, "unknown field");
    }
  }
}

inline const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) throw ConfigError(path.empty() ? key : path + "." + key, "missing required field");
  return obj.at(key);
}

inline double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

inline long get_integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
  return v.get<long>();
}

inline std::vector<double> get_numbers(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_number(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Measure description --------------------------------------------------------
//
// {
//   "name": "uniform-cantor",            (optional)
//   "ambient_dim": 1,
//   "maps": [ {"ratio": 0.333, "translation": [0]},
//             {"ratio": 0.333, "rotation_degrees": 90, "translation": [..]},   (2-D only)
//             {"ratio": 0.333, "rotation": [[..],[..]], "translation": [..]} ],
//   "probs": [0.5, 0.5],
//   "grid_base": 3,                       (optional, default from the ratios)
//   "osc_asserted": true                  (optional, default false)
// }

inline IFSMeasure measure_from_json(const json& j, const std::string& path = "") {
  reject_unknown(j, {"name", "ambient_dim", "maps", "probs", "grid_base", "osc_asserted"}, path);
  const long n = get_integer(field(j, "ambient_dim", path), join(path, "ambient_dim"));
  if (n < 1) throw ConfigError(join(path, "ambient_dim"), "must be >= 1");
  const json& jm = field(j, "maps", path);
  if (!jm.is_array() || jm.empty()) throw ConfigError(join(path, "maps"), "expected a non-empty array");
  std::vector<Similitude> maps;
  for (std::size_t i = 0; i < jm.size(); ++i) {
    const std::string mp = join(path, "maps") + "[" + std::to_string(i) + "]";
    reject_unknown(jm[i], {"ratio", "rotation_degrees", "rotation", "translation"}, mp);
    const double ratio = get_number(field(jm[i], "ratio", mp), mp + ".ratio");
    const std::vector<double> t = get_numbers(field(jm[i], "translation", mp), mp + ".translation");
    if (static_cast<long>(t.size()) != n) throw ConfigError(mp + ".translation", "length must equal ambient_dim");
    Matrix rot = Matrix::Identity(n, n);
    if (jm[i].contains("rotation_degrees") && jm[i].contains("rotation")) {
      throw ConfigError(mp, "give either rotation_degrees or rotation, not both");
    }
    if (jm[i].contains("rotation_degrees")) {
      if (n != 2) throw ConfigError(mp + ".rotation_degrees", "only valid when ambient_dim = 2");
      const double deg = get_number(jm[i]["rotation_degrees"], mp + ".rotation_degrees");
      rot = rotation_2d(deg * std::numbers::pi / 180.0);
    } else if (jm[i].contains("rotation")) {
      const json& jr = jm[i]["rotation"];
      if (!jr.is_array() || static_cast<long>(jr.size()) != n) {
        throw ConfigError(mp + ".rotation", "expected an ambient_dim x ambient_dim array of rows");
      }
      for (long r = 0; r < n; ++r) {
        const auto row = get_numbers(jr[static_cast<std::size_t>(r)], mp + ".rotation[" + std::to_string(r) + "]");
        if (static_cast<long>(row.size()) != n) throw ConfigError(mp + ".rotation", "row length must equal ambient_dim");
        for (long c = 0; c < n; ++c) rot(r, c) = row[static_cast<std::size_t>(c)];
      }
    }
    Eigen::Map<const Vector> tv(t.data(), n);
    try {
      maps.emplace_back(ratio, rot, Vector(tv));
    } catch (const InvalidArgument& e) {
      throw ConfigError(mp, e.what());
    }
  }
  const std::vector<double> probs = get_numbers(field(j, "probs", path), join(path, "probs"));
  int base = 0;
  if (j.contains("grid_base")) {
    base = static_cast<int>(get_integer(j["grid_base"], join(path, "grid_base")));
    if (base < 2) throw ConfigError(join(path, "grid_base"), "must be >= 2");
  }
  bool osc = false;
  if (j.contains("osc_asserted")) {
    if (!j["osc_asserted"].is_boolean()) throw ConfigError(join(path, "osc_asserted"), "expected a boolean");
    osc = j["osc_asserted"].get<bool>();
  }
  std::string name;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ConfigError(join(path, "name"), "expected a string");
    name = j["name"].get<std::string>();
  }
  try {
    return IFSMeasure(std::move(maps), probs, osc, base, name);
  } catch (const InvalidArgument& e) {
    throw ConfigError(path, e.what());
  }
}

inline json measure_to_json(const IFSMeasure& ifs) {
  json j;
  if (!ifs.name.empty()) j["name"] = ifs.name;
  j["ambient_dim"] = ifs.ambient_dim;
  j["maps"] = json::array();
  for (const auto& m : ifs.maps) {
    json jm;
    jm["ratio"] = m.ratio;
    if (!m.rotation.isIdentity(0.0)) {
      json rows = json::array();
      for (Eigen::Index r = 0; r < m.rotation.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.rotation.cols(); ++c) row.push_back(m.rotation(r, c));
        rows.push_back(row);
      }
      jm["rotation"] = rows;
    }
    jm["translation"] = std::vector<double>(m.translation.data(), m.translation.data() + m.translation.size());
    j["maps"].push_back(jm);
  }
  j["probs"] = ifs.probs;
  j["grid_base"] = ifs.grid_base;
  j["osc_asserted"] = ifs.osc_asserted;
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
}

inline IFSMeasure load_measure(const std::string& path) { return measure_from_json(read_json_file(path)); }

// Point clouds ---------------------------------------------------------------

inline std::string cloud_header(int n) {
  std::string h;
  for (int i = 1; i <= n; ++i) h += "x" + std::to_string(i) + ",";
  return h + "weight";
}

inline void write_cloud(std::ostream& out, const DiscreteMeasure& mu) {
  out << cloud_header(mu.dim()) << '\n';
  for (std::size_t i = 0; i < mu.size(); ++i) {
    for (int a = 0; a < mu.dim(); ++a) out << fmt(mu.point(i)[a]) << ',';
    out << fmt(mu.weight(i)) << '\n';
  }
}

inline DiscreteMeasure read_cloud(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(source, "empty point-cloud file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  int n = 0;
  {
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    if (cols.size() < 2 || cols.back() != "weight") {
      throw ConfigError(source + ":1", "header must be x1,...,xn,weight");
    }
    n = static_cast<int>(cols.size()) - 1;
    if (line != cloud_header(n)) throw ConfigError(source + ":1", "header must be x1,...,xn,weight");
  }
  std::vector<double> coords, weights;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError(source + ":" + std::to_string(lineno), "not a number: '" + tok + "'");
      }
    }
    if (static_cast<int>(vals.size()) != n + 1) {
      throw ConfigError(source + ":" + std::to_string(lineno), "expected " + std::to_string(n + 1) + " columns");
    }
    coords.insert(coords.end(), vals.begin(), vals.end() - 1);
    weights.push_back(vals.back());
  }
  if (weights.empty()) throw ConfigError(source, "point-cloud file has no rows");
  Matrix pts = Eigen::Map<const Matrix>(coords.data(), n, static_cast<Eigen::Index>(weights.size()));
  try {
    return DiscreteMeasure(std::move(pts), std::move(weights));
  } catch (const InvalidArgument& e) {
    throw ConfigError(source, e.what());
  }
}

inline DiscreteMeasure load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  return read_cloud(in, path);
}

// Spectra and curves -----------------------------------------------------------

inline constexpr const char* kSpectrumHeader =
    "q,s,slope,lower_bracket,upper_bracket,residual,r_min,r_max,n_scales,estimator";
inline constexpr const char* kCurveHeader = "q,s,r,value";
inline constexpr const char* kReportHeader =
    "subspace_id,q,m,slope,lower_bracket,upper_bracket,prediction,abs_dev";

inline void write_spectrum_row(std::ostream& out, const SpectrumEstimate& e) {
  out << fmt(e.q) << ',' << fmt(e.kernel_exponent) << ',' << fmt(e.slope) << ',' << fmt(e.lower_bracket)
      << ',' << fmt(e.upper_bracket) << ',' << fmt(e.residual) << ',' << fmt(e.scales.r_min) << ','
      << fmt(e.scales.r_max) << ',' << e.n_used << ',' << e.estimator << '\n';
}

inline void write_curve_rows(std::ostream& out, const MomentCurve& c) {
  for (const auto& e : c.entries) {
    out << fmt(c.q) << ',' << fmt(c.kernel_exponent) << ',' << fmt(e.r) << ',' << fmt(e.value) << '\n';
  }
}

// One row per subspace plus a `summary` row holding the median. When the
// q > 2 hypothesis is unmet the summary's prediction is empty and abs_dev
// carries the flag `hypothesis-unmet`.
inline void write_report_rows(std::ostream& out, const ProjectionReport& r) {
  const auto pred = r.analytic_prediction;
  for (const auto& s : r.per_subspace) {
    const std::string id = s.user_supplied ? "user-" + std::to_string(s.id) : std::to_string(s.id);
    out << id << ',' << fmt(r.q) << ',' << r.m << ',' << fmt(s.estimate.slope) << ','
        << fmt(s.estimate.lower_bracket) << ',' << fmt(s.estimate.upper_bracket) << ',' << fmt(pred) << ','
        << (pred ? fmt(std::abs(s.estimate.slope - *pred)) : std::string{}) << '\n';
  }
  out << "summary," << fmt(r.q) << ',' << r.m << ',' << fmt(r.median_slope) << ",,," << fmt(pred) << ','
      << (r.deviation ? fmt(*r.deviation) : std::string("hypothesis-unmet")) << '\n';
}

inline void write_frames(std::ostream& out, const ProjectionReport& r) {
  if (r.per_subspace.empty()) return;
  const int m = r.per_subspace.front().subspace.m();
  out << "subspace_id,row";
  for (int c = 1; c <= m; ++c) out << ",c" << c;
  out << '\n';
  for (const auto& s : r.per_subspace) {
    for (Eigen::Index row = 0; row < s.subspace.frame.rows(); ++row) {
      out << s.id << ',' << row;
      for (Eigen::Index c = 0; c < s.subspace.frame.cols(); ++c) out << ',' << fmt(s.subspace.frame(row, c));
      out << '\n';
    }
  }
}

}  // namespace mfp::io
