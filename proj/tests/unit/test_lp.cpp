#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "qtb/envelope.hpp"
#include "qtb/errors.hpp"
#include "qtb/lp.hpp"
#include "qtb/sim.hpp"

using namespace qtb;

namespace {

FiniteDist random_dist(std::mt19937_64& rng, int k) {
  std::gamma_distribution<double> g2(2.0, 1.0);
  std::vector<double> atoms(k), masses(k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    atoms[i] = i;
    masses[i] = g2(rng);
    total += masses[i];
  }
  for (double& m : masses) m /= total;
  return FiniteDist(atoms, masses);
}

}  // namespace

TEST(BinaryEvent, HandValues) {
  auto [lo, hi] = binary_event_interval(0.7, 0.55, 1.9);
  EXPECT_NEAR(lo, 0.43, 1e-12);
  EXPECT_NEAR(hi, 0.835, 1e-12);
  auto [lo0, hi0] = binary_event_interval(0.0, 0.3, 4.0);
  EXPECT_EQ(lo0, 0.0);
  EXPECT_EQ(hi0, 0.0);
  auto [l1, h1] = binary_event_interval(0.5, 1.0, 1.0);
  EXPECT_NEAR(l1, 0.5, 1e-15);
  EXPECT_NEAR(h1, 0.5, 1e-15);
}

TEST(BoundedSimplex, SmallProblem) {
  // min -x1 - 2 x2  s.t. x1 + x2 + s = 4, 0 <= x1 <= 3, 0 <= x2 <= 2, s >= 0
  BoundedLp lp;
  lp.a = {{1.0, 1.0, 1.0}};
  lp.b = {4.0};
  lp.c = {-1.0, -2.0, 0.0};
  lp.lo = {0.0, 0.0, 0.0};
  lp.hi = {3.0, 2.0, kInf};
  const auto r = solve_bounded_lp(lp);
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_NEAR(r.objective, -6.0, 1e-12);
  EXPECT_NEAR(r.x[0], 2.0, 1e-12);
  EXPECT_NEAR(r.x[1], 2.0, 1e-12);
}

TEST(BoundedSimplex, DetectsInfeasibility) {
  BoundedLp lp;
  lp.a = {{1.0, 1.0}};
  lp.b = {5.0};
  lp.c = {1.0, 1.0};
  lp.lo = {0.0, 0.0};
  lp.hi = {1.0, 1.0};
  EXPECT_EQ(solve_bounded_lp(lp).status, LpStatus::Infeasible);
}

TEST(TwoLayer, TwoAtomCase) {
  const FiniteDist d({0.0, 1.0}, {0.3, 0.7});
  const SensitivityPair s(2.0, 1.5);
  const auto sol = solve_two_layer(d, 0.0, 0.1, s, Side::Lower);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.value, g_nested(0.3, 0.1, s, Side::Lower), 1e-9);
}

TEST(TwoLayer, UnitSensitivityReturnsP) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const FiniteDist d = random_dist(rng, 2 + k % 7);
    const double thr = static_cast<double>(rng() % d.size());
    for (Side side : kSides) {
      const auto sol = solve_two_layer(d, thr, 0.37, SensitivityPair(1.0, 1.0), side);
      EXPECT_NEAR(sol.value, d.cdf(thr), 1e-12);
    }
  }
}

TEST(TwoLayer, FiveAtomUpper) {
  // five atoms whose first three carry exactly half the mass
  const FiniteDist d({0, 1, 2, 3, 4}, {0.1, 0.15, 0.25, 0.3, 0.2});
  const SensitivityPair s(3.0, 2.0);
  const auto sol = solve_two_layer(d, 2.0, 0.2, s, Side::Upper);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.value, g_nested(0.5, 0.2, s, Side::Upper), 1e-9);
  EXPECT_NEAR(greedy_two_layer(d, 2.0, 0.2, s, Side::Upper).value, sol.value, 1e-12);
}

TEST(SingleLayer, MatchesBinaryInterval) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const FiniteDist d = random_dist(rng, 2 + k % 10);
    const double thr = static_cast<double>(rng() % d.size());
    const double ell = 0.2 + 0.8 * unif(rng), u = 1.0 + 4.0 * unif(rng);
    const auto [lo, hi] = binary_event_interval(d.cdf(thr), ell, u);
    EXPECT_NEAR(solve_single_layer(d, thr, ell, u, Side::Lower).value, lo, 1e-9);
    EXPECT_NEAR(solve_single_layer(d, thr, ell, u, Side::Upper).value, hi, 1e-9);
  }
  const FiniteDist d({0.0, 1.0, 2.0}, {0.2, 0.5, 0.3});
  EXPECT_NEAR(solve_single_layer(d, 1.0, 1.0, 1.0, Side::Lower).value, 0.7, 1e-12);
}

TEST(SingleLayer, ProductBoundsReproduceRelaxation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < 300; ++k) {
    const FiniteDist d = random_dist(rng, 3 + k % 8);
    const double thr = static_cast<double>(rng() % d.size());
    const double e = 0.05 + 0.9 * unif(rng);
    const SensitivityPair s(1.0 + 4.0 * unif(rng), 1.0 + 2.0 * unif(rng));
    const auto [ell, u] = ell_u_gamma(e, s.gamma());
    for (Side side : kSides) {
      const double lp = solve_single_layer(d, thr, ell / s.lambda(), u * s.lambda(), side).value;
      EXPECT_NEAR(lp, product_relaxation(d.cdf(thr), e, s, side), 1e-9);
    }
  }
}

TEST(Audit, RandomCasesAgreeWithClosedForm) {
  const auto cases = gen_audit_cells(17, {2, 3, 5, 8, 12, 20}, 600);
  ASSERT_EQ(cases.size(), 600u);
  const AuditReport r = run_lp_audit(cases);
  EXPECT_EQ(r.cases, 600);
  EXPECT_LT(r.max_discrepancy_lower, 1e-8);
  EXPECT_LT(r.max_discrepancy_upper, 1e-8);
  EXPECT_LT(r.max_greedy_discrepancy, 1e-8);
  EXPECT_EQ(r.dominance_violations, 0);
  EXPECT_GT(r.strict_share_nontrivial, 0.1);
}

TEST(FiniteDistTest, CdfAndValidation) {
  const FiniteDist d({1.0, 2.0, 5.0}, {0.2, 0.3, 0.5});
  EXPECT_DOUBLE_EQ(d.cdf(0.5), 0.0);
  EXPECT_DOUBLE_EQ(d.cdf(2.0), 0.5);
  EXPECT_DOUBLE_EQ(d.cdf(9.0), 1.0);
  EXPECT_EQ(d.cdf_at_atoms().back(), 1.0);
  EXPECT_THROW(FiniteDist({1.0, 2.0}, {0.5, 0.6}), DomainError);
  EXPECT_THROW(FiniteDist({2.0, 1.0}, {0.5, 0.5}), DomainError);
}
