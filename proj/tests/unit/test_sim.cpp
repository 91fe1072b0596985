#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "qtb/errors.hpp"
#include "qtb/sim.hpp"

using namespace qtb;

namespace {

const std::vector<double> kTaus = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

}  // namespace

TEST(AuditCells, ReproducibleAndNormalized) {
  const auto a = gen_audit_cells(5, {2, 3, 5, 8}, 200);
  const auto b = gen_audit_cells(5, {2, 3, 5, 8}, 200);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].e, b[k].e);
    EXPECT_EQ(a[k].threshold, b[k].threshold);
    EXPECT_EQ(a[k].s.gamma(), b[k].s.gamma());
    double total = 0.0;
    for (double m : a[k].dist.masses()) {
      EXPECT_GE(m, 0.0);
      total += m;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_GT(a[k].e, 0.0);
    EXPECT_LT(a[k].e, 1.0);
  }
  EXPECT_NE(gen_audit_cells(6, {2, 3, 5, 8}, 1)[0].e, a[0].e);
}

TEST(PathAudit, TiltsAttainEnvelope) {
  const PathAuditReport r = run_path_audit(3, 300);
  EXPECT_EQ(r.cases, 300u);
  EXPECT_LT(r.max_envelope_violation, 1e-10);
  EXPECT_LT(r.max_range_violation, 1e-10);
  EXPECT_LT(r.max_normalization_error, 1e-10);
  EXPECT_LT(r.max_order_violation, 1e-10);
}

TEST(RegularDgp, TruthInsideHullAtTrueSensitivity) {
  const DgpSpec spec = experiment2_spec();
  const Dgp dgp = gen_regular_dgp(spec);
  const std::vector<SensitivityPair> s{SensitivityPair(1.15, 1.10), spec.s0};
  const CdfBoundProcess oracle = dgp.oracle_process(s);
  const auto qte = dgp.true_qte(kTaus);
  bool under_excludes = false;
  for (std::size_t t = 0; t < kTaus.size(); ++t) {
    const QteHull h = qte_hull(oracle, kTaus[t], 1);
    EXPECT_GE(qte[t], h.delta_lo - 1e-9);
    EXPECT_LE(qte[t], h.delta_hi + 1e-9);
    const QteHull u = qte_hull(oracle, kTaus[t], 0);
    if (qte[t] < u.delta_lo - 1e-9 || qte[t] > u.delta_hi + 1e-9) under_excludes = true;
  }
  EXPECT_TRUE(under_excludes);
}

TEST(RegularDgp, TargetCdfIsOracleEndpoint) {
  const DgpSpec spec = experiment2_spec();
  const Dgp dgp = gen_regular_dgp(spec);
  const CdfBoundProcess oracle = dgp.oracle_process({spec.s0});
  const auto f1 = dgp.target_cdf(1), f0 = dgp.target_cdf(0);
  for (std::size_t g = 0; g < f1.size(); ++g) {
    EXPECT_NEAR(f1[g], oracle.at(1, Side::Lower, 0, g), 1e-12);
    EXPECT_NEAR(f0[g], oracle.at(0, Side::Upper, 0, g), 1e-12);
  }
  EXPECT_NEAR(f1.back(), 1.0, 1e-12);
}

TEST(RegularDgp, PopulationWidths) {
  const DgpSpec spec = experiment2_spec();
  const Dgp dense(spec, spec.dense_grid_size);
  EXPECT_NEAR(population_hull_width(dense, SensitivityPair(1.15, 1.10), kTaus), 0.465, 0.05);
  EXPECT_NEAR(population_hull_width(dense, spec.s0, kTaus), 1.579, 0.05);
  EXPECT_NEAR(population_hull_width(dense, SensitivityPair(2.20, 1.80), kTaus), 2.689, 0.05);
}

TEST(RegularDgp, SampleSizesAndDeterminism) {
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  const auto a = dgp.sample(300, 450, 17), b = dgp.sample(300, 450, 17);
  EXPECT_EQ(a.n1(), 300u);
  EXPECT_EQ(a.n0(), 450u);
  EXPECT_EQ(a.y.size(), b.y.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.x[i], b.x[i]);
    if (a.r[i] == 1) EXPECT_EQ(a.y[i], b.y[i]);
  }
}

TEST(ZeroInflatedDgp, TargetLawsCarryAtomAtZero) {
  const DgpSpec spec = experiment4_spec();
  const Dgp dgp = gen_nonregular_dgp(spec);
  const auto& grid = dgp.grid();
  std::size_t g0 = 0;
  for (std::size_t g = 0; g < grid.size(); ++g)
    if (std::abs(grid[g]) < 1e-12) g0 = g;
  ASSERT_GT(g0, 0u);
  for (int a = 0; a < 2; ++a) {
    const auto f = dgp.target_cdf(a);
    EXPECT_GT(f[g0] - f[g0 - 1], 0.1);
  }
  // the atom is wide enough that some quantile of each arm sits on it
  std::size_t at_zero = 0;
  for (int a = 0; a < 2; ++a) {
    const auto f = dgp.target_cdf(a);
    for (double t : kTaus) at_zero += grid[grid_quantile_index(f.data(), f.size(), t)] == 0.0;
  }
  EXPECT_GE(at_zero, 2u);
  EXPECT_THROW(gen_regular_dgp(spec), ConfigError);
  EXPECT_THROW(gen_nonregular_dgp(experiment2_spec()), ConfigError);
}

TEST(Spec, ValidationRejectsBadFields) {
  DgpSpec s = experiment2_spec();
  EXPECT_NO_THROW(s.validate());
  s.e1[0] = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = experiment2_spec();
  s.sd[1].pop_back();
  EXPECT_THROW(s.validate(), ConfigError);
  s = experiment4_spec();
  s.lo = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_NO_THROW(propensity_stress_spec().validate());
}

TEST(Study, SmallExperimentIsDeterministic) {
  StudyOptions opt;
  opt.experiment = 2;
  opt.sizes = {200};
  opt.replications = 3;
  opt.draws = 49;
  opt.folds = 2;
  const MetricsReport a = run_study(opt), b = run_study(opt);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  ASSERT_FALSE(a.rows.empty());
  for (std::size_t r = 0; r < a.rows.size(); ++r)
    for (std::size_t k = 0; k < a.rows[r].values.size(); ++k) {
      const double x = a.rows[r].values[k].second, y = b.rows[r].values[k].second;
      if (std::isnan(x)) EXPECT_TRUE(std::isnan(y));
      else EXPECT_EQ(x, y);
    }
  EXPECT_NEAR(mc_standard_error(0.95, 100), std::sqrt(0.95 * 0.05 / 100), 1e-15);
}
