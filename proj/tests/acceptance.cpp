// Acceptance gate: one PASS/FAIL line per criterion, tolerances and runtime
// limits fixed below. Exit status is non-zero if any criterion fails.

#include "mfproj/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace mfp;

namespace {

constexpr std::uint64_t kSeed = 1;
constexpr std::size_t kPoints = 100000;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Detail {
 public:
  Detail& operator<<(const std::string& s) {
    out_ << s;
    return *this;
  }
  Detail& operator<<(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    out_ << buf;
    return *this;
  }
  Detail& operator<<(int v) {
    out_ << v;
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

const DiscreteMeasure& cloud(const std::string& name) {
  static std::map<std::string, DiscreteMeasure> cache;
  auto it = cache.find(name);
  if (it == cache.end()) {
    it = cache.emplace(name, chaos_game_sample(library::by_name(name), kPoints, 64,
                                               derive_seed(kSeed, mfp::detail::kCloudStream)))
             .first;
  }
  return it->second;
}

const ScaleRange kTriadic = ScaleRange::powers(3, 3, 8);

// 1. Ambient oracle agreement on the uniform Cantor measure.
Outcome ambient_oracle() {
  Outcome o;
  Detail d;
  const IFSMeasure ifs = library::uniform_cantor();
  const GridMeasure grid = coarse_grain(ifs, 9);
  const ScaleRange depths_3_to_9 = ScaleRange::powers(3, 3, 9);
  for (double q : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) {
    const double est = estimate_B(grid, q, depths_3_to_9).slope;
    const double dev = std::abs(est - analytic_B(ifs, q));
    const bool ok = dev <= 0.05 && (q != 1.0 || std::abs(est) <= 0.02);
    o.pass &= ok;
    d << " q=" << q << ":" << est << (ok ? "" : "(!)");
  }
  o.detail = d.str();
  return o;
}

// 2. Packing and integral slopes agree on point clouds.
Outcome slope_equivalence() {
  Outcome o;
  Detail d;
  for (const std::string name : {"uniform-cantor", "binomial-cantor"}) {
    const DiscreteMeasure& mu = cloud(name);
    const GridMeasure grid = bin_points(mu, 9, 3);
    const KdTree tree(mu);
    for (double q : {1.5, 2.0, 3.0}) {
      const double packing = estimate_B(grid, q, kTriadic).slope;
      const double integral = fit_tau(integral_curve(mu, tree, q, kTriadic.radii())).slope;
      const double diff = std::abs(packing - integral);
      o.pass &= diff <= 0.05;
      d << " " << name << "@" << q << ":|" << packing << "-" << integral << "|=" << diff;
    }
  }
  o.detail = d.str();
  return o;
}

// 3. Ball mass never exceeds the full-dimensional kernel value.
Outcome ball_below_kernel() {
  Outcome o;
  std::size_t checked = 0, violations = 0;
  for (const std::string name : {"uniform-cantor", "product-cantor", "sierpinski", "planar-cantor-9"}) {
    const DiscreteMeasure& mu = cloud(name);
    for (std::size_t i = 0; i < mu.size(); i += 2500) {
      for (double r : ScaleRange(1e-5, 1.0, 11).radii()) {
        ++checked;
        violations += !(ball_mass(mu, mu.point(i), r) <= kernel_value(mu, mu.point(i), r, mu.dim()));
      }
    }
  }
  o.pass = violations == 0;
  o.detail = " " + std::to_string(checked) + " (x, r) pairs, " + std::to_string(violations) + " violations";
  return o;
}

// 4. kernel_value(x, r, m) >= (r / D)^m for r <= D, D the support diameter.
// Compared against total_mass * (r/D)^m with 1e-12 relative slack for rounding.
Outcome kernel_lower_bound() {
  Outcome o;
  std::size_t checked = 0, violations = 0;
  for (const std::string name : {"product-cantor", "sierpinski", "planar-cantor-9", "cantor-line-30"}) {
    const DiscreteMeasure mu = chaos_game_sample(library::by_name(name), 4000, 64, kSeed);
    double diam = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      diam = std::max(diam, (mu.points().colwise() - mu.point(i)).colwise().norm().maxCoeff());
    }
    const double total = mu.total_mass();
    for (int m = 1; m <= mu.dim(); ++m) {
      for (std::size_t i = 0; i < mu.size(); i += 97) {
        for (double r : ScaleRange(1e-4 * diam, diam, 9).radii()) {
          ++checked;
          const double bound = total * std::pow(r / diam, m);
          violations += kernel_value(mu, mu.point(i), r, m) < bound * (1.0 - 1e-12);
        }
      }
    }
  }
  o.pass = violations == 0;
  o.detail = " " + std::to_string(checked) + " (x, r, m) triples, " + std::to_string(violations) + " violations";
  return o;
}

// 5. Kernel slope = max(m(1 - q), B(q)).
Outcome kernel_max_formula() {
  Outcome o;
  Detail d;
  for (const std::string name : {"product-cantor", "planar-cantor-9"}) {
    const double q = 2.0;
    const double prediction = std::max(1.0 - q, analytic_B(library::by_name(name), q));
    const double est = kernel_spectrum(cloud(name), q, 1.0, kTriadic).slope;
    o.pass &= std::abs(est - prediction) <= 0.07;
    d << " " << name << ": " << est << " vs " << prediction;
  }
  o.detail = d.str();
  return o;
}

std::map<std::pair<std::string, double>, ProjectionReport>& reports() {
  static std::map<std::pair<std::string, double>, ProjectionReport> cache;
  return cache;
}

const ProjectionReport& report(const std::string& name, double q) {
  auto& cache = reports();
  const auto key = std::make_pair(name, q);
  auto it = cache.find(key);
  if (it == cache.end()) {
    VerifyOptions opts;
    opts.n_points = kPoints;
    opts.compute_kernel = true;
    it = cache.emplace(key, verify_projection_theorem(library::by_name(name), q, 1, 20, kTriadic, kSeed, opts)).first;
  }
  return it->second;
}

// 6. Projected spectrum on the product Cantor measure, cutoff branch.
Outcome projection_low_q() {
  Outcome o;
  Detail d;
  for (double q : {1.5, 2.0}) {
    const ProjectionReport& r = report("product-cantor", q);
    const bool ok = r.analytic_prediction && *r.deviation <= 0.1 && r.fraction_within >= 0.7;
    o.pass &= ok;
    d << " q=" << q << ": median " << r.median_slope << " vs " << *r.analytic_prediction << ", within 0.15: "
      << r.fraction_within;
  }
  o.detail = d.str();
  return o;
}

// 7. q > 2 branch: prediction when B(q) >= -m, flag otherwise.
Outcome projection_high_q() {
  Outcome o;
  Detail d;
  const ProjectionReport& met = report("planar-cantor-9", 3.0);
  o.pass &= met.analytic_prediction.has_value() && *met.deviation <= 0.1;
  d << " planar-cantor-9: median " << met.median_slope << " vs " << met.analytic_b;
  const ProjectionReport& unmet = report("product-cantor", 3.0);
  o.pass &= !unmet.analytic_prediction && !unmet.deviation && !unmet.hypothesis_met &&
            unmet.flag == "hypothesis unmet - no prediction";
  d << "; product-cantor: flag '" << unmet.flag << "'";
  o.detail = d.str();
  return o;
}

// 8. Every sampled subspace: projected slope >= kernel slope - 0.05.
Outcome projection_lower_bound() {
  Outcome o;
  Detail d;
  double worst = std::numeric_limits<double>::infinity();
  int n = 0;
  for (const auto& [key, r] : reports()) {
    for (const auto& s : r.per_subspace) {
      worst = std::min(worst, s.estimate.slope - *r.kernel_slope);
      ++n;
    }
  }
  o.pass = n > 0 && worst >= -0.05;
  d << " " << n << " subspace estimates, min(projected - kernel) = " << worst;
  o.detail = d.str();
  return o;
}

// 9. alpha = -B'(2), B*(alpha), and the projected coarse spectrum at alpha.
Outcome formalism() {
  Outcome o;
  Detail d;
  harness::ExperimentConfig c;
  c.kind = harness::Kind::Formalism;
  c.measure = harness::MeasureSpec::from_json("binomial-cantor-line");
  c.q_grid = {2.0};
  c.m = 1;
  c.n_subspaces = 10;
  c.n_points = kPoints;
  c.depth = 11;
  c.min_depth = 4;
  c.seed = kSeed;
  const IFSMeasure ifs = c.measure.ifs();
  const harness::FormalismRow row = harness::formalism_row(ifs, harness::detail::cloud_of(c), 2.0, c);
  o.pass &= std::abs(row.alpha - 0.444326) <= 1e-3;
  o.pass &= std::abs(row.legendre.value - 0.392804) <= 1e-3;
  o.pass &= row.legendre.interior;
  o.pass &= std::abs(row.projected_median - row.legendre.value) <= 0.15;
  d << " alpha " << row.alpha << ", B*(alpha) " << row.legendre.value << ", projected median f "
    << row.projected_median;
  o.detail = d.str();
  return o;
}

// 10. Same config and seed: byte-identical CSVs, any worker count.
Outcome determinism() {
  Outcome o;
  const std::vector<std::string> configs = {
      R"({"kind":"spectrum","measure":"binomial-cantor","q_grid":[0,0.5,1,2,3]})",
      R"({"kind":"kernel-spectrum","measure":"product-cantor","q_grid":[2],"n_points":30000})",
      R"({"kind":"project-verify","measure":"product-cantor","q_grid":[2,3],"n_subspaces":4,"n_points":30000})",
      R"({"kind":"local-dim","measure":"sierpinski","q_grid":[1],"n_points":30000,"probes":50})",
      R"({"kind":"coarse-spectrum","measure":"binomial-cantor","q_grid":[1],"depth":10})",
      R"({"kind":"formalism","measure":"binomial-cantor-line","q_grid":[2],"n_subspaces":3,"n_points":30000,
          "depth":10,"min_depth":4})"};
  const auto root = std::filesystem::temp_directory_path() / "mfproj-acceptance";
  int identical = 0;
  for (const auto& text : configs) {
    harness::ExperimentConfig c = harness::config_from_json(nlohmann::json::parse(text));
    std::vector<std::map<std::string, std::string>> sums;
    for (const char* threads : {"1", "4", "1"}) {
      setenv("MFP_THREADS", threads, 1);
      c.output_dir = (root / threads).string();
      std::filesystem::remove_all(c.output_dir);
      std::map<std::string, std::string> s;
      for (const auto& f : harness::run(c).files) {
        if (f.path != "config.json") s[f.path] = f.sha256;
      }
      sums.push_back(std::move(s));
    }
    unsetenv("MFP_THREADS");
    const bool same = sums[0] == sums[1] && sums[0] == sums[2];
    identical += same;
    o.pass &= same;
  }
  std::filesystem::remove_all(root);
  o.detail = " " + std::to_string(identical) + "/" + std::to_string(configs.size()) +
             " experiments byte-identical across reruns and MFP_THREADS=1,4";
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;  // <= 0: no limit
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "ambient oracle, uniform Cantor", 10.0, ambient_oracle},
      {2, "packing vs integral slopes", 60.0, slope_equivalence},
      {3, "ball mass <= kernel value (s = n)", 0.0, ball_below_kernel},
      {4, "kernel value >= (r/D)^m", 0.0, kernel_lower_bound},
      {5, "kernel slope max formula", 120.0, kernel_max_formula},
      {6, "projected spectrum, 1 < q <= 2", 300.0, projection_low_q},
      {7, "projected spectrum, q > 2", 300.0, projection_high_q},
      {8, "projected slope >= kernel slope - 0.05", 0.0, projection_lower_bound},
      {9, "formalism chain at q = 2", 300.0, formalism},
      {10, "determinism", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string(" exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_seconds <= 0.0 || secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s criterion %d: %s |%s | %.1fs%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : " (over time limit)");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
