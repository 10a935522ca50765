// mfproj command-line front end.
//
// Exit codes: 0 pass (or no prediction to check), 1 experiment failure or a
// tolerance miss, 2 usage error.

#include "mfproj/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace mfp;
using harness::ExperimentConfig;
using harness::Kind;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
};

// Flags shared by the experiment subcommands. Every flag left unset keeps
// the value from --config (or the built-in default).
struct Overrides {
  std::string config;
  std::string measure;
  std::string cloud;
  std::vector<double> q;
  std::optional<int> m;
  std::optional<double> s;
  std::optional<double> r_min, r_max;
  std::optional<int> count;
  std::optional<int> subspaces;
  std::optional<std::size_t> points;
  std::optional<std::size_t> burn_in;
  std::optional<int> depth, min_depth;
  std::optional<int> probes;
  bool refine = false;
  bool kernel_bound = false;
  std::optional<double> tolerance;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--measure", measure, "bundled measure name or measure JSON file");
    app->add_option("--cloud", cloud, "point-cloud CSV (x1,...,xn,weight)")->check(CLI::ExistingFile);
    app->add_option("--q", q, "moment orders")->delimiter(',');
    app->add_option("--m", m, "projection dimension");
    app->add_option("--s", s, "kernel exponent (defaults to m)");
    app->add_option("--r-min", r_min, "smallest scale");
    app->add_option("--r-max", r_max, "largest scale");
    app->add_option("--count", count, "number of scales");
    app->add_option("--subspaces", subspaces, "number of random subspaces");
    app->add_option("--points", points, "chaos-game sample size");
    app->add_option("--burn-in", burn_in, "chaos-game burn-in steps");
    app->add_option("--depth", depth, "finest grid depth");
    app->add_option("--min-depth", min_depth, "coarsest grid depth");
    app->add_option("--probes", probes, "probe points for local-dim");
    app->add_flag("--refine", refine, "per-cover-cell refinement (spectrum)");
    app->add_flag("--kernel-bound", kernel_bound, "also check projected slope >= kernel slope");
    app->add_option("--tolerance", tolerance, "acceptance tolerance for this experiment kind");
  }

  ExperimentConfig build(Kind kind, const Globals& g) const {
    ExperimentConfig c;
    bool have_q = false;
    if (!config.empty()) {
      c = harness::load_config(config);
      have_q = true;
    }
    c.kind = kind;
    if (!measure.empty()) {
      c.measure = harness::MeasureSpec::from_json(library::has(measure) ? nlohmann::json(measure)
                                                                       : nlohmann::json{{"file", measure}},
                                                  "--measure");
    }
    if (!cloud.empty()) c.measure = harness::MeasureSpec::from_json(nlohmann::json{{"cloud", cloud}}, "--cloud");
    if (!q.empty()) {
      c.q_grid = q;
      have_q = true;
    }
    if (!have_q) throw ConfigError("q_grid", "give --q or a --config with q_grid");
    if (m) c.m = *m;
    if (s) c.s = *s;
    if (r_min || r_max || count) {
      try {
        c.scales = ScaleRange(r_min.value_or(c.scales.r_min), r_max.value_or(c.scales.r_max),
                              count.value_or(c.scales.count));
      } catch (const InvalidArgument& e) {
        throw ConfigError("scales", e.what());
      }
    }
    if (subspaces) c.n_subspaces = *subspaces;
    if (points) c.n_points = *points;
    if (burn_in) c.burn_in = *burn_in;
    if (depth) c.depth = *depth;
    if (min_depth) c.min_depth = *min_depth;
    if (probes) c.probes = *probes;
    if (refine) c.refine = true;
    if (kernel_bound) c.check_kernel_bound = true;
    if (tolerance) {
      switch (kind) {
        case Kind::Spectrum:
        case Kind::LocalDim:
        case Kind::CoarseSpectrum: c.tolerance.ambient = *tolerance; break;
        case Kind::KernelSpectrum: c.tolerance.kernel = *tolerance; break;
        case Kind::ProjectVerify: c.tolerance.projected = *tolerance; break;
        case Kind::Formalism: c.tolerance.formalism = *tolerance; break;
        case Kind::Legendre: break;
      }
    }
    if (g.seed) c.seed = *g.seed;
    if (g.out) c.output_dir = *g.out;
    // Re-validate the merged result through the same parser as config files.
    return harness::config_from_json(harness::config_to_json(c));
  }
};

IFSMeasure resolve_measure(const std::string& ref) {
  if (library::has(ref)) return library::by_name(ref);
  return io::load_measure(ref);
}

int run_experiment(const Overrides& o, Kind kind, const Globals& g) {
  const ExperimentConfig cfg = o.build(kind, g);
  const harness::RunManifest man = harness::run(cfg, g.quiet);
  if (!g.quiet) {
    std::cout << "wrote " << man.files.size() << " files + manifest.json to " << cfg.output_dir << '\n';
  }
  return man.passed.value_or(true) ? 0 : 1;
}

void inspect(const IFSMeasure& ifs) {
  std::cout << "name: " << ifs.name << '\n'
            << "ambient_dim: " << ifs.ambient_dim << '\n'
            << "maps: " << ifs.size() << '\n'
            << "grid_base: " << ifs.grid_base << '\n'
            << "osc_asserted: " << (ifs.osc_asserted ? "true" : "false") << '\n';
  const Box box = ifs.bounding_box();
  std::cout << "bounding_box:";
  for (int a = 0; a < ifs.ambient_dim; ++a) std::cout << " [" << io::fmt(box.lo[a]) << ", " << io::fmt(box.hi[a]) << "]";
  std::cout << '\n';
  if (ifs.osc_asserted) {
    for (double q : {0.0, 2.0, 3.0}) std::cout << "B(" << q << "): " << io::fmt(analytic_B(ifs, q)) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfproj: moment exponents of sampled measures and their projections"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master seed")->check(CLI::NonNegativeNumber);
  app.add_option("--out", g.out, "output directory (or file for measure export/build)");
  app.add_flag("--quiet", g.quiet, "suppress progress output");
  app.set_version_flag("--version", harness::kToolVersion);

  // measure build | inspect | export
  auto* measure = app.add_subcommand("measure", "build, inspect or export a measure");
  measure->require_subcommand(1);
  std::string ref;
  std::size_t build_points = 10000;
  std::size_t build_burn = 64;
  auto* m_build = measure->add_subcommand("build", "sample a chaos-game point cloud to CSV");
  m_build->add_option("measure", ref, "bundled name or measure JSON file")->required();
  m_build->add_option("--points", build_points, "sample size");
  m_build->add_option("--burn-in", build_burn, "burn-in steps");
  auto* m_inspect = measure->add_subcommand("inspect", "print a summary");
  m_inspect->add_option("measure", ref, "bundled name or measure JSON file")->required();
  auto* m_export = measure->add_subcommand("export", "write the measure description JSON");
  m_export->add_option("measure", ref, "bundled name or measure JSON file")->required();
  auto* m_list = measure->add_subcommand("list", "list bundled measures");

  std::vector<std::pair<CLI::App*, Kind>> experiments;
  std::vector<Overrides> overrides(8);
  auto add = [&](const char* name, const char* help, Kind kind, std::size_t slot) {
    auto* sub = app.add_subcommand(name, help);
    overrides[slot].attach(sub);
    experiments.emplace_back(sub, kind);
    return sub;
  };
  add("spectrum", "moment exponent B(q) by packing or integral sums", Kind::Spectrum, 0);
  add("kernel-spectrum", "kernel moment exponent", Kind::KernelSpectrum, 1);
  add("verify-projection", "projection-theorem check over random subspaces", Kind::ProjectVerify, 2);
  add("legendre", "Legendre transform of the analytic B", Kind::Legendre, 3);
  add("local-dim", "local dimensions at sampled points", Kind::LocalDim, 4);
  add("coarse-spectrum", "coarse multifractal spectrum", Kind::CoarseSpectrum, 5);
  add("formalism", "alpha = -B'(q), B*(alpha) and the projected coarse spectrum", Kind::Formalism, 6);

  // project: write one projected cloud and its frame.
  auto* project = app.add_subcommand("project", "project a sampled measure onto a random subspace");
  std::string p_measure = "product-cantor";
  int p_m = 1;
  std::size_t p_points = 100000;
  project->add_option("--measure", p_measure, "bundled name or measure JSON file");
  project->add_option("--m", p_m, "subspace dimension");
  project->add_option("--points", p_points, "chaos-game sample size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (argc <= 1 || e.get_exit_code() != 0) std::cerr << app.help();
    return 2;
  }

  try {
    const std::uint64_t seed = g.seed.value_or(0);
    if (*m_list) {
      for (const auto& n : library::names()) std::cout << n << '\n';
      return 0;
    }
    if (*m_inspect) {
      inspect(resolve_measure(ref));
      return 0;
    }
    if (*m_export) {
      const std::string text = io::measure_to_json(resolve_measure(ref)).dump(2) + "\n";
      if (g.out) {
        std::ofstream(*g.out) << text;
      } else {
        std::cout << text;
      }
      return 0;
    }
    if (*m_build) {
      const IFSMeasure ifs = resolve_measure(ref);
      const DiscreteMeasure cloud =
          chaos_game_sample(ifs, build_points, build_burn, derive_seed(seed, mfp::detail::kCloudStream));
      if (g.out) {
        std::ofstream out(*g.out);
        io::write_cloud(out, cloud);
      } else {
        io::write_cloud(std::cout, cloud);
      }
      return 0;
    }
    if (*project) {
      const IFSMeasure ifs = resolve_measure(p_measure);
      const DiscreteMeasure cloud =
          chaos_game_sample(ifs, p_points, 64, derive_seed(seed, mfp::detail::kCloudStream));
      const Subspace v = sample_grassmann(ifs.ambient_dim, p_m, derive_seed(seed, 0));
      const std::string dir = g.out.value_or("mfp-project");
      std::filesystem::create_directories(dir);
      std::ofstream pc(std::filesystem::path(dir) / "projected.csv");
      io::write_cloud(pc, project_measure(cloud, v));
      std::ofstream fr(std::filesystem::path(dir) / "frame.csv");
      fr << "row";
      for (int j = 1; j <= v.m(); ++j) fr << ",c" << j;
      fr << '\n';
      for (int i = 0; i < v.n(); ++i) {
        fr << i;
        for (int j = 0; j < v.m(); ++j) fr << ',' << io::fmt(v.frame(i, j));
        fr << '\n';
      }
      if (!g.quiet) std::cout << "wrote projected.csv and frame.csv to " << dir << '\n';
      return 0;
    }
    for (std::size_t k = 0; k < experiments.size(); ++k) {
      if (*experiments[k].first) return run_experiment(overrides[k], experiments[k].second, g);
    }
    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
