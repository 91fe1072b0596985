#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "qtb/errors.hpp"
#include "qtb/inference.hpp"
#include "qtb/sim.hpp"

using namespace qtb;

namespace {

CdfBoundProcess flat_process(const std::vector<double>& ys) {
  return CdfBoundProcess(ThresholdGrid(ys), {SensitivityPair(1.5, 1.2)});
}

void fill_path(CdfBoundProcess& p, int a, Side side, const std::vector<double>& v) {
  for (std::size_t g = 0; g < v.size(); ++g) p.at(a, side, 0, g) = v[g];
}

// random process with lower <= upper and nondecreasing paths
CdfBoundProcess random_process(std::mt19937_64& rng, std::size_t ng) {
  std::vector<double> ys(ng);
  for (std::size_t g = 0; g < ng; ++g) ys[g] = static_cast<double>(g);
  CdfBoundProcess p = flat_process(ys);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int a = 0; a < 2; ++a) {
    std::vector<double> base(ng);
    for (auto& b : base) b = unif(rng);
    std::sort(base.begin(), base.end());
    base.back() = 1.0;
    for (std::size_t g = 0; g < ng; ++g) {
      p.at(a, Side::Lower, 0, g) = 0.7 * base[g];
      p.at(a, Side::Upper, 0, g) = std::min(1.0, 0.3 + 0.7 * base[g]);
    }
    p.at(a, Side::Lower, 0, ng - 1) = 1.0;
  }
  return p;
}

}  // namespace

TEST(Critical, UpperQuantileOrderStatistic) {
  std::vector<double> d(100);
  for (int k = 0; k < 100; ++k) d[k] = k + 1;
  std::shuffle(d.begin(), d.end(), std::mt19937_64(1));
  EXPECT_EQ(upper_quantile(d, 0.05), 95.0);
  EXPECT_EQ(upper_quantile({3.0}, 0.05), 3.0);
  EXPECT_THROW(upper_quantile({}, 0.05), DomainError);
}

TEST(Multiplier, ZeroInfluenceGivesZero) {
  const std::vector<double> phi(50 * 4, 0.0);
  EXPECT_EQ(multiplier_critical(phi, 50, 4, 0.05, 99, 1), 0.0);
}

TEST(Multiplier, SingleNormalColumnNearNormalQuantile) {
  const std::size_t n = 4000;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> phi(n);
  double m = 0.0;
  for (auto& v : phi) m += (v = z(rng));
  m /= n;
  double var = 0.0;
  for (auto& v : phi) var += (v - m) * (v - m);
  for (auto& v : phi) v = (v - m) / std::sqrt(var / n);
  EXPECT_NEAR(multiplier_critical(phi, n, 1, 0.05, 4000, 3), 1.96, 0.1);
}

TEST(Multiplier, DeterministicUnderSeed) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> phi(300 * 7);
  for (auto& v : phi) v = z(rng);
  std::vector<int> strata(300);
  for (std::size_t i = 0; i < strata.size(); ++i) strata[i] = i % 3 == 0;
  const double c1 = multiplier_critical(phi, 300, 7, 0.05, 199, 11, &strata);
  const double c2 = multiplier_critical(phi, 300, 7, 0.05, 199, 11, &strata);
  EXPECT_EQ(c1, c2);
  const double sub = multiplier_critical(phi, 300, 7, 0.05, 199, 11, &strata, {2, 5});
  EXPECT_LE(sub, c1 + 1e-12);
}

TEST(Subsample, SizeAndValidation) {
  EXPECT_EQ(subsample_size(10000, 0.5), 100u);
  EXPECT_EQ(subsample_size(1000, 0.7), 125u);
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  const auto data = dgp.sample(60, 90, 5);
  SubsampleOptions opt;
  opt.m = data.size();
  const Pipeline pipe = [](const TwoSampleData& d) { return std::vector<double>{static_cast<double>(d.n1())}; };
  EXPECT_THROW(subsample_critical(data, pipe, {60.0}, opt), DomainError);
}

TEST(Subsample, AgreesWithMultiplierOnRegularDgp) {
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  const auto data = dgp.sample(2000, 3000, 6);
  const std::vector<SensitivityPair> s{SensitivityPair(1.6, 1.4)};
  NuisanceOptions nopt;
  nopt.seed = 7;
  const CrossFitNuisance cf = estimate_nuisances(data, dgp.grid(), nopt);
  const OneStepResult os = one_step_estimate(data, cf, s, Variant::Full, true);
  const double c_mult = multiplier_critical(os.eif, 0.05, 999, 8, &data.r);

  SubsampleOptions so;
  so.m = subsample_size(data.size(), 0.8);
  so.n_draws = 199;
  so.seed = 9;
  const Pipeline pipe = [&](const TwoSampleData& d) {
    NuisanceOptions o = nopt;
    return one_step_estimate(d, estimate_nuisances(d, dgp.grid(), o), s, Variant::Full, false).psi.values();
  };
  const auto res = subsample_critical(data, pipe, os.psi.values(), so);
  const double c_sub = res.critical.front();
  EXPECT_NEAR(c_sub / c_mult, 1.0, 0.25) << "subsample " << c_sub << " multiplier " << c_mult;

  const auto again = subsample_critical(data, pipe, os.psi.values(), so);
  EXPECT_EQ(again.critical.front(), c_sub);
}

TEST(Bands, MonotoneEnvelopeOfLowerBand) {
  CdfBoundProcess p = flat_process({0.0, 1.0, 2.0});
  fill_path(p, 0, Side::Lower, {0.2, 0.1, 0.3});
  fill_path(p, 0, Side::Upper, {0.5, 0.4, 0.9});
  const BandSet b = build_bands(p, 0.0, 100.0, 0.05);
  const double* lo = b.lower.path(0, Side::Lower, 0);
  EXPECT_EQ(lo[0], 0.2);
  EXPECT_EQ(lo[1], 0.2);
  EXPECT_EQ(lo[2], 0.3);
  const double* up = b.upper.path(0, Side::Upper, 0);
  EXPECT_EQ(up[0], 0.4);
  EXPECT_EQ(up[1], 0.4);
  EXPECT_EQ(up[2], 0.9);
}

TEST(Bands, ZeroCriticalCollapsesOnMonotonePaths) {
  std::mt19937_64 rng(10);
  const CdfBoundProcess p = random_process(rng, 30);
  const BandSet b = build_bands(p, 0.0, 500.0, 0.05);
  for (std::size_t k = 0; k < p.values().size(); ++k) {
    EXPECT_EQ(b.lower.values()[k], p.values()[k]);
    EXPECT_EQ(b.upper.values()[k], p.values()[k]);
  }
  EXPECT_THROW(build_bands(p, -1.0, 500.0, 0.05), DomainError);
}

TEST(Bands, OrderedAndContainMonotoneTruth) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const CdfBoundProcess p = random_process(rng, 25);
    const BandSet b = build_bands(p, 1.5, 400.0, 0.05);
    for (std::size_t k = 0; k < p.values().size(); ++k) {
      EXPECT_LE(b.lower.values()[k], b.upper.values()[k]);
      // p itself is monotone and inside the raw band, so inside the envelope too
      EXPECT_LE(b.lower.values()[k], p.values()[k] + 1e-15);
      EXPECT_GE(b.upper.values()[k], p.values()[k] - 1e-15);
      EXPECT_GE(b.lower.values()[k], b.lower_raw.values()[k]);
      EXPECT_LE(b.upper.values()[k], b.upper_raw.values()[k]);
    }
  }
}

TEST(Inversion, OneJumpBandsGiveDegenerateIntervals) {
  CdfBoundProcess p = flat_process({0.0, 1.0, 2.0, 3.0});
  for (int a = 0; a < 2; ++a)
    for (Side side : kSides) fill_path(p, a, side, {0.0, 0.0, 1.0, 1.0});
  const BandSet b = build_bands(p, 0.0, 100.0, 0.05);
  for (double tau : {0.1, 0.5, 0.9}) {
    const auto ci = invert_bands(b, tau, 1, 0);
    EXPECT_EQ(ci.minus.lo, 2.0);
    EXPECT_EQ(ci.minus.hi, 2.0);
    EXPECT_EQ(ci.plus.lo, 2.0);
    EXPECT_EQ(ci.plus.hi, 2.0);
    EXPECT_FALSE(ci.plus.tail);
  }
  const auto arm1 = invert_bands(b, 0.5, 1, 0), arm0 = invert_bands(b, 0.5, 0, 0);
  const auto [lo, hi] = qte_outer_band(arm1, arm0);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 0.0);
  EXPECT_THROW(invert_bands(b, 1.0, 0, 0), DomainError);
}

TEST(Inversion, OrderedAndContainPlugInHull) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const CdfBoundProcess p = random_process(rng, 40);
    const BandSet b = build_bands(p, 0.8, 300.0, 0.05);
    for (double tau : {0.25, 0.5, 0.75}) {
      QuantileBandCis ci[2];
      for (int a = 0; a < 2; ++a) {
        ci[a] = invert_bands(b, tau, a, 0);
        EXPECT_LE(ci[a].minus.lo, ci[a].minus.hi);
        EXPECT_LE(ci[a].plus.lo, ci[a].plus.hi);
        EXPECT_LE(ci[a].minus.lo, ci[a].plus.lo);
        EXPECT_LE(ci[a].minus.hi, ci[a].plus.hi);
      }
      const QteHull h = qte_hull(p, tau, 0);
      const auto [lo, hi] = qte_outer_band(ci[1], ci[0]);
      EXPECT_LE(lo, h.delta_lo);
      EXPECT_GE(hi, h.delta_hi);
    }
  }
}

TEST(Inversion, TailFlagWhenBandNeverReachesTau) {
  CdfBoundProcess p = flat_process({0.0, 1.0, 2.0});
  for (int a = 0; a < 2; ++a)
    for (Side side : kSides) fill_path(p, a, side, {0.1, 0.2, 0.4});
  const BandSet b = build_bands(p, 0.0, 100.0, 0.05);
  const auto ci = invert_bands(b, 0.9, 0, 0);
  EXPECT_TRUE(ci.plus.tail);
  EXPECT_EQ(ci.plus.hi, 2.0);
}

TEST(Wald, DensityFloorAndInterval) {
  const std::size_t ng = 101;
  std::vector<double> ys(ng);
  for (std::size_t g = 0; g < ng; ++g) ys[g] = -5.0 + 0.1 * g;
  CdfBoundProcess p = flat_process(ys);
  for (int a = 0; a < 2; ++a)
    for (Side side : kSides)
      for (std::size_t g = 0; g < ng; ++g) p.at(a, side, 0, g) = 0.5 * std::erfc(-ys[g] / std::sqrt(2.0));
  EifEvaluation eif;
  eif.n_obs = 400;
  eif.n_index = p.n_index();
  eif.phi.assign(eif.n_obs * eif.n_index, 0.0);
  for (std::size_t i = 0; i < eif.n_obs; ++i)
    for (std::size_t k = 0; k < eif.n_index; ++k) eif.phi[i * eif.n_index + k] = i % 2 ? 0.5 : -0.5;
  const WaldCi ci = wald_quantile_ci(p, eif, 0.5, 1, 0, Side::Lower, 0.05, 0.2);
  EXPECT_NEAR(ci.estimate, 0.0, 1e-9);
  EXPECT_NEAR(ci.density, 1.0 / std::sqrt(2.0 * M_PI), 0.01);
  const double se = 0.5 / ci.density / 20.0;
  EXPECT_NEAR(ci.hi - ci.lo, 2.0 * 1.959963985 * se, 1e-6);
  // density 0.4 sits below a floor of 1
  EXPECT_THROW(wald_quantile_ci(p, eif, 0.5, 1, 0, Side::Lower, 0.05, 0.2, 1.0), DensityFloorError);
}

TEST(Frontier, ZeroCriticalGivesEqualSets) {
  FrontierGrid fg = FrontierGrid::mesh(SRect{}, 11, 9);
  fg.kappa.resize(fg.n_gamma() * fg.n_lambda());
  for (std::size_t i = 0; i < fg.n_gamma(); ++i)
    for (std::size_t j = 0; j < fg.n_lambda(); ++j) fg.kappa[fg.node(i, j)] = fg.gammas[i] - 2.05;
  const FrontierSets sets = frontier_confidence(fg, 0.0, 100.0);
  EXPECT_EQ(sets.inner, sets.outer);
  ASSERT_FALSE(sets.outer_zero_level.empty());
  for (const auto& [g, l] : sets.outer_zero_level) EXPECT_NEAR(g, 2.05, 1e-12);
  EXPECT_EQ(sets.outer_zero_level.size(), fg.n_lambda());
}

TEST(Frontier, InnerInsideOuter) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> z(0.0, 0.3);
  FrontierGrid fg = FrontierGrid::mesh(SRect{}, 15, 15);
  fg.kappa.resize(fg.n_gamma() * fg.n_lambda());
  for (auto& k : fg.kappa) k = z(rng);
  const FrontierSets sets = frontier_confidence(fg, 2.0, 200.0);
  for (std::size_t k = 0; k < fg.kappa.size(); ++k) EXPECT_LE(fg.inner[k], fg.outer[k]);
  EXPECT_LE(sets.inner.size(), sets.outer.size());
  EXPECT_THROW(frontier_confidence(fg, -1.0, 200.0), DomainError);
}

TEST(Hausdorff, SimpleSets) {
  const std::vector<PlanePoint> a{{1.0, 1.0}}, b{{2.0, 1.0}};
  EXPECT_EQ(hausdorff(a, a), 0.0);
  EXPECT_EQ(hausdorff(a, b), 1.0);
  const std::vector<PlanePoint> c{{0.0, 0.0}, {3.0, 4.0}};
  EXPECT_DOUBLE_EQ(hausdorff({{0.0, 0.0}}, c), 5.0);
  EXPECT_THROW(hausdorff({}, a), EmptySetError);
}
