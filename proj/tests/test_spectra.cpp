#include "mfproj/library.hpp"
#include "mfproj/spectra.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mfp;

namespace {

const double kLog2Log3 = std::log(2.0) / std::log(3.0);

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

const DiscreteMeasure& cantor_cloud() {
  static const DiscreteMeasure mu = chaos_game_sample(library::uniform_cantor(), 100000, 64, 21);
  return mu;
}

DiscreteMeasure uniform_interval_cloud(std::size_t n) {
  // Evenly spaced points: a deterministic stand-in for Lebesgue measure on [0, 1].
  Matrix pts(1, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) pts(0, static_cast<Eigen::Index>(i)) = (i + 0.5) / static_cast<double>(n);
  return DiscreteMeasure::uniform_weights(pts);
}

}  // namespace

TEST(ScaleRange, Validation) {
  EXPECT_THROW(ScaleRange(0.1, 0.01, 5), InvalidArgument);
  EXPECT_THROW(ScaleRange(0.0, 0.1, 5), InvalidArgument);
  EXPECT_THROW(ScaleRange(0.01, 0.1, 2), InvalidArgument);
  const auto r = ScaleRange::powers(3, 3, 8).radii();
  ASSERT_EQ(r.size(), 6u);
  EXPECT_DOUBLE_EQ(r.front(), std::pow(3.0, -8));
  EXPECT_DOUBLE_EQ(r.back(), std::pow(3.0, -3));
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_NEAR(r[i] / r[i - 1], 3.0, 1e-12);
}

TEST(FitTau, ExactPowerLaw) {
  MomentCurve c{0.0, std::nullopt, {}};
  for (double r : {1e-4, 1e-3, 1e-2, 1e-1}) c.entries.push_back({r, std::sqrt(r)});
  const SpectrumEstimate e = fit_tau(c);
  // Slope is against -log r, so value = r^0.5 has slope -0.5 in that frame
  // and +0.5 in log r.
  EXPECT_NEAR(-e.slope, 0.5, 1e-12);
  EXPECT_NEAR(e.lower_bracket, e.upper_bracket, 1e-12);
  EXPECT_NEAR(e.residual, 0.0, 1e-12);
}

TEST(FitTau, ConstantHasZeroSlope) {
  MomentCurve c{1.0, std::nullopt, {{1e-3, 1.0}, {1e-2, 1.0}, {1e-1, 1.0}}};
  EXPECT_NEAR(fit_tau(c).slope, 0.0, 1e-15);
}

TEST(FitTau, ExcludesNonPositiveAndNeedsThree) {
  MomentCurve c{2.0, std::nullopt, {{1e-4, 0.0}, {1e-3, 1e-3}, {1e-2, 1e-2}, {1e-1, 1e-1}}};
  const SpectrumEstimate e = fit_tau(c);
  ASSERT_EQ(e.excluded_r.size(), 1u);
  EXPECT_DOUBLE_EQ(e.excluded_r[0], 1e-4);
  EXPECT_EQ(e.n_used, 3u);
  c.entries[1].value = std::nan("");
  EXPECT_THROW(fit_tau(c), InvalidArgument);
}

TEST(PackingMoment, CantorClosedForms) {
  for (int k = 1; k <= 8; ++k) {
    const GridMeasure g = coarse_grain(library::uniform_cantor(), k);
    EXPECT_NEAR(packing_moment(g, 1.0).value, 1.0, 1e-12);
    EXPECT_NEAR(packing_moment(g, 0.0).value, std::pow(2.0, k), 1e-9);
    EXPECT_NEAR(packing_moment(g, 2.0).value, std::pow(2.0, -k), 1e-15);
  }
}

TEST(PackingCurve, CantorSlopeIsExact) {
  const GridMeasure g = coarse_grain(library::uniform_cantor(), 9);
  const SpectrumEstimate e = fit_tau(packing_curve(g, 2.0, {3, 4, 5, 6, 7, 8, 9}));
  EXPECT_NEAR(e.slope, -kLog2Log3, 1e-6);
}

TEST(IntegralMoment, Examples) {
  Matrix one = Matrix::Zero(1, 1);
  const DiscreteMeasure atom(one, {1.0});
  for (double q : {1.5, 2.0, 4.0}) EXPECT_NEAR(integral_moment(atom, q, 0.1), 1.0, 1e-15);

  Matrix two(1, 2);
  two << 0.0, 1.0;
  const DiscreteMeasure pair(two, {0.5, 0.5});
  // Each ball holds only its own atom: 1/2 * 1/2 + 1/2 * 1/2.
  EXPECT_NEAR(integral_moment(pair, 2.0, 0.3), 0.5, 1e-15);
  EXPECT_THROW(integral_moment(pair, 1.0, 0.3), InvalidArgument);
  EXPECT_THROW(integral_moment(pair, 0.5, 0.3), InvalidArgument);
}

TEST(IntegralMoment, CantorSlope) {
  const SpectrumEstimate e = fit_tau(integral_curve(cantor_cloud(), 2.0, ScaleRange::powers(3, 3, 8).radii()));
  EXPECT_NEAR(e.slope, -kLog2Log3, 0.05);
}

TEST(KernelValue, Examples) {
  Matrix one = Matrix::Zero(1, 1);
  const DiscreteMeasure atom(one, {1.0});
  EXPECT_DOUBLE_EQ(kernel_value(atom, vec({0.0}), 0.1, 1.0), 1.0);
  for (double d : {0.1, 0.5, 2.0}) EXPECT_NEAR(kernel_value(atom, vec({d}), 0.1, 1.0), 0.1 / d, 1e-15);
  EXPECT_THROW(kernel_value(atom, vec({0.0}), 0.1, 2.0), InvalidArgument);
  EXPECT_THROW(kernel_value(atom, vec({0.0}), 0.1, 0.5), InvalidArgument);
}

TEST(KernelValue, UniformIntervalClosedForm) {
  const DiscreteMeasure mu = uniform_interval_cloud(100000);
  const double r = 1e-3;
  const double exact = 2.0 * r * (1.0 + std::log(0.5 / r));
  EXPECT_NEAR(kernel_value(mu, vec({0.5}), r, 1.0), exact, 0.02 * exact);
}

TEST(KernelValue, MonotoneInRadiusAndExponent) {
  const DiscreteMeasure mu = chaos_game_sample(library::product_cantor(), 3000, 16, 6);
  const Vector x = mu.point(17);
  double prev = 0.0;
  for (double r = 1e-3; r < 2.0; r *= 2.0) {
    const double v = kernel_value(mu, x, r, 1.0);
    EXPECT_GE(v, prev);
    EXPECT_GE(v + 1e-15, kernel_value(mu, x, r, 2.0));
    prev = v;
  }
}

TEST(KernelSums, TreeMatchesDirectWithinTolerance) {
  for (const auto& name : {"product-cantor", "sierpinski", "planar-cantor-9"}) {
    const DiscreteMeasure mu = chaos_game_sample(library::by_name(name), 20000, 16, 12);
    const KdTree tree(mu);
    const std::vector<double> radii{1e-4, 1e-3, 1e-2, 1e-1};
    for (double s : {1.0, 1.5, 2.0}) {
      for (std::size_t i = 0; i < mu.size(); i += 1999) {
        std::vector<double> out(radii.size());
        tree.kernel_sums(mu.point(i), radii, s, kKernelRelTol, out);
        for (std::size_t k = 0; k < radii.size(); ++k) {
          const double exact = kernel_value(mu, mu.point(i), radii[k], s);
          EXPECT_NEAR(out[k], exact, 1e-3 * exact) << name << " s=" << s << " r=" << radii[k];
        }
      }
    }
  }
}

TEST(KernelMoment, AtomAndDomination) {
  Matrix one = Matrix::Zero(2, 1);
  const DiscreteMeasure atom(one, {1.0});
  EXPECT_NEAR(kernel_moment(atom, 2.0, 0.1, 1.0), 1.0, 1e-12);
  const DiscreteMeasure mu = chaos_game_sample(library::sierpinski(), 5000, 16, 2);
  for (double q : {1.5, 2.0, 3.0}) {
    for (double r : {1e-2, 1e-1}) EXPECT_GE(kernel_moment(mu, q, r, 2.0), integral_moment(mu, q, r));
  }
}

TEST(KernelSpectrum, PlanarCantorQ3) {
  const DiscreteMeasure mu = chaos_game_sample(library::planar_cantor_9(), 100000, 64, 3);
  const SpectrumEstimate e = kernel_spectrum(mu, 3.0, 1.0, ScaleRange::powers(3, 3, 8));
  EXPECT_NEAR(e.slope, -2.0 * std::log(2.0) / std::log(9.0), 0.07);
  EXPECT_EQ(e.estimator, "kernel");
}

TEST(KernelSpectrum, LowerBoundFromExponent) {
  const DiscreteMeasure mu = chaos_game_sample(library::sierpinski(), 30000, 64, 8);
  for (double q : {1.5, 2.0, 3.0}) {
    const SpectrumEstimate e = kernel_spectrum(mu, q, 1.0, ScaleRange::powers(3, 2, 6));
    EXPECT_GE(e.slope, 1.0 * (1.0 - q) - 0.05) << q;
  }
}

TEST(AnalyticB, Examples) {
  for (const auto& name : library::names()) EXPECT_EQ(analytic_B(library::by_name(name), 1.0), 0.0) << name;
  EXPECT_NEAR(analytic_B(library::uniform_cantor(), 2.0), -kLog2Log3, 1e-12);
  EXPECT_NEAR(analytic_B(library::binomial_cantor(), 2.0), std::log(0.58) / std::log(3.0), 1e-12);
  // Quoted rounded value of the binomial case.
  EXPECT_NEAR(analytic_B(library::binomial_cantor(), 2.0), -0.495846, 1e-4);
  EXPECT_NEAR(analytic_B(library::uniform_interval(), 3.0), -2.0, 1e-12);
}

TEST(AnalyticB, RequiresOpenSetCondition) {
  IFSMeasure ifs = library::uniform_cantor();
  ifs.osc_asserted = false;
  EXPECT_THROW(analytic_B(ifs, 2.0), InvalidArgument);
}

TEST(AnalyticB, ProductIsAdditive) {
  const IFSMeasure a = library::binomial_cantor();
  const IFSMeasure b = library::uniform_cantor();
  for (double q : {0.0, 0.5, 2.0, 3.0}) {
    EXPECT_NEAR(analytic_B(product_measure(a, b), q), analytic_B(a, q) + analytic_B(b, q), 1e-10);
  }
}

TEST(AnalyticB, ConvexAndDecreasing) {
  for (const auto& name : {"binomial-cantor", "sierpinski", "product-cantor", "planar-cantor-9"}) {
    const auto s = sample_analytic_B(library::by_name(name), -5.0, 5.0, 101);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i].b, s[i - 1].b) << name;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      EXPECT_GE(s[i - 1].b - 2.0 * s[i].b + s[i + 1].b, -1e-10) << name;
    }
  }
}

TEST(AnalyticB, DerivativeMatchesClosedForm) {
  // -B'(q) = sum p^q log p / (sum p^q log(1/3)) for the binomial Cantor measure.
  const double q = 2.0;
  const double s = 0.09 + 0.49;
  const double closed = -(0.09 * std::log(0.3) + 0.49 * std::log(0.7)) / s / std::log(3.0);
  EXPECT_NEAR(-analytic_B_derivative(library::binomial_cantor(), q), closed, 1e-8);
}

TEST(EstimateB, CantorGrid) {
  const GridMeasure g = coarse_grain(library::uniform_cantor(), 9);
  const ScaleRange scales = ScaleRange::powers(3, 3, 8);
  EXPECT_NEAR(estimate_B(g, 2.0, scales).slope, -kLog2Log3, 0.02);
  EXPECT_NEAR(estimate_B(g, 1.0, scales).slope, 0.0, 0.02);
  EXPECT_EQ(estimate_B(g, 2.0, scales).estimator, "packing");
}

TEST(EstimateB, RefineChangesLittleOnSelfSimilar) {
  const ScaleRange scales = ScaleRange::powers(3, 3, 8);
  EstimateOptions opts;
  opts.refine = true;
  for (const auto& name : {"uniform-cantor", "binomial-cantor"}) {
    const GridMeasure g = coarse_grain(library::by_name(name), 9);
    for (double q : {0.5, 2.0, 3.0}) {
      EXPECT_NEAR(estimate_B(g, q, scales, opts).slope, estimate_B(g, q, scales).slope, 0.02) << name << q;
    }
  }
}

TEST(EstimateB, SignLaws) {
  const ScaleRange scales = ScaleRange::powers(3, 3, 8);
  for (const auto& name : {"uniform-cantor", "binomial-cantor", "product-cantor", "sierpinski"}) {
    const IFSMeasure ifs = library::by_name(name);
    const GridMeasure g = coarse_grain(ifs, ifs.grid_base == 3 ? 9 : 12);
    const ScaleRange sc = ifs.grid_base == 3 ? scales : ScaleRange::powers(2, 4, 11);
    EXPECT_LE(estimate_B(g, 2.0, sc).slope, 0.02) << name;
    EXPECT_GE(estimate_B(g, 0.5, sc).slope, -0.02) << name;
    EXPECT_NEAR(estimate_B(g, 1.0, sc).slope, 0.0, 0.02) << name;
  }
}

TEST(EstimateB, PointCloudPaths) {
  const ScaleRange scales = ScaleRange::powers(3, 3, 8);
  const SpectrumEstimate hi = estimate_B(cantor_cloud(), 2.0, scales);
  EXPECT_EQ(hi.estimator, "integral");
  EXPECT_NEAR(hi.slope, -kLog2Log3, 0.05);
  const SpectrumEstimate lo = estimate_B(cantor_cloud(), 0.5, scales);
  EXPECT_EQ(lo.estimator, "packing");
  EXPECT_NEAR(lo.slope, 0.5 * kLog2Log3, 0.05);
}

TEST(Legendre, LinearSpectrum) {
  const double d = 0.7;
  std::vector<QSample> s;
  for (int i = 0; i <= 30; ++i) s.push_back({i * 0.1, (1.0 - i * 0.1) * d});
  const LegendreValue v = legendre(s, d);
  EXPECT_NEAR(v.value, d, 1e-12);
  EXPECT_TRUE(v.interior);
  EXPECT_THROW(legendre({}, 0.5), InvalidArgument);
}

TEST(Legendre, BinomialCantor) {
  const IFSMeasure ifs = library::binomial_cantor();
  const double alpha = -analytic_B_derivative(ifs, 2.0);
  const LegendreValue v = legendre(sample_analytic_B(ifs, -10.0, 10.0, 20001), alpha);
  EXPECT_NEAR(v.value, 2.0 * alpha + analytic_B(ifs, 2.0), 1e-6);
  EXPECT_NEAR(v.value, 0.392804, 1e-3);
  EXPECT_NEAR(alpha, 0.444326, 1e-3);
  EXPECT_TRUE(v.interior);
  EXPECT_NEAR(v.q_star, 2.0, 1e-2);
}

TEST(Legendre, UniformCantorCollapses) {
  const auto s = sample_analytic_B(library::uniform_cantor(), -5.0, 5.0, 101);
  EXPECT_NEAR(legendre(s, kLog2Log3).value, kLog2Log3, 1e-9);
  // Away from the single point the transform runs off to the grid boundary.
  const LegendreValue off = legendre(s, 0.3);
  EXPECT_FALSE(off.interior);
  EXPECT_LT(off.value, 0.0);
}

TEST(LocalDimension, Atom) {
  Matrix one = Matrix::Zero(1, 1);
  const DiscreteMeasure atom(one, {1.0});
  EXPECT_NEAR(local_dimension(atom, vec({0.0}), ScaleRange(1e-4, 1e-1, 5)).slope, 0.0, 1e-12);
}

TEST(LocalDimension, UniformInterval) {
  const DiscreteMeasure mu = uniform_interval_cloud(100000);
  for (double x : {0.3, 0.5, 0.71}) {
    EXPECT_NEAR(local_dimension(mu, vec({x}), ScaleRange(1e-3, 3e-2, 6)).slope, 1.0, 0.02);
  }
}

TEST(LocalDimension, UniformCantorTypicalPoints) {
  const DiscreteMeasure& mu = cantor_cloud();
  const KdTree tree(mu);
  const ScaleRange scales = ScaleRange::powers(3, 3, 8);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> pick(0, mu.size() - 1);
  int good = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    good += std::abs(local_dimension(mu, tree, mu.point(pick(rng)), scales).slope - kLog2Log3) <= 0.05;
  }
  EXPECT_GE(good, trials * 9 / 10);
}

TEST(LocalDimension, OutsideBoxAndZeroMass) {
  const DiscreteMeasure& mu = cantor_cloud();
  EXPECT_THROW(local_dimension(mu, vec({5.0}), ScaleRange(1e-3, 1e-1, 5)), InvalidArgument);
  // In the middle gap the smallest balls are empty and get dropped.
  const SpectrumEstimate e = local_dimension(mu, vec({0.5}), ScaleRange(1e-3, 1.0, 8));
  EXPECT_FALSE(e.excluded_r.empty());
}

TEST(CoarseSpectrum, UniformCantorSingleBin) {
  const auto grids = grid_sequence(coarse_grain(library::uniform_cantor(), 9), 3);
  const auto pts = coarse_spectrum(grids, {0.0, 2.0, 40});
  int present = 0;
  for (const auto& p : pts) {
    if (!p.present) continue;
    ++present;
    EXPECT_NEAR(p.alpha, kLog2Log3, 0.05);
    EXPECT_NEAR(p.f, kLog2Log3, 1e-9);
  }
  EXPECT_EQ(present, 1);
}

TEST(CoarseSpectrum, BinomialCantorConcave) {
  const auto grids = grid_sequence(coarse_grain(library::binomial_cantor(), 12), 4);
  const auto pts = coarse_spectrum(grids, {0.0, 2.0, 40});
  double best = -1.0;
  for (const auto& p : pts) {
    if (p.present) best = std::max(best, p.f);
  }
  EXPECT_NEAR(best, kLog2Log3, 0.05);
  const CoarseTail t = coarse_spectrum_at(grids, 0.444335);
  EXPECT_NEAR(t.f, 0.392838, 0.05);
  EXPECT_TRUE(t.lower_tail);
}

TEST(CoarseSpectrum, AtomHasZeroDimension) {
  const auto grids = grid_sequence(bin_points(chaos_game_sample(library::atom(), 100, 0, 1), 8, 2), 3);
  const auto pts = coarse_spectrum(grids, {0.0, 1.0, 10});
  ASSERT_TRUE(pts[0].present);
  EXPECT_NEAR(pts[0].f, 0.0, 1e-12);
}

TEST(CoarseSpectrum, NeedsThreeDepths) {
  const auto grids = grid_sequence(coarse_grain(library::uniform_cantor(), 4), 3);
  EXPECT_THROW(coarse_spectrum(grids, {0.0, 2.0, 10}), InvalidArgument);
}
