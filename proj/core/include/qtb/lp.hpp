#pragma once

// Finite-support linear programs used as an exact, closed-form-independent
// oracle for the envelope maps.

#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "qtb/envelope.hpp"

namespace qtb {

class FiniteDist {
 public:
  FiniteDist(std::vector<double> atoms, std::vector<double> masses);

  const std::vector<double>& atoms() const noexcept { return atoms_; }
  const std::vector<double>& masses() const noexcept { return masses_; }
  std::size_t size() const noexcept { return atoms_.size(); }

  /// Mass at or below y.
  double cdf(double y) const;
  /// Cumulative masses F(y_k), k = 0..K-1. The last entry is exactly 1.
  std::vector<double> cdf_at_atoms() const;

 private:
  std::vector<double> atoms_;
  std::vector<double> masses_;
};

enum class LpStatus { Optimal, Infeasible };

struct LpSolution {
  double value = 0.0;
  std::vector<double> q_vars;
  std::vector<double> t_vars;
  LpStatus status = LpStatus::Infeasible;
};

// Dense bounded-variable simplex: minimize c'x subject to A x = b, lo <= x <= hi.
// Row-major A with rows.size() == b.size(). hi may be +infinity.
struct BoundedLp {
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  std::vector<double> c;
  std::vector<double> lo;
  std::vector<double> hi;
};

struct BoundedLpResult {
  LpStatus status = LpStatus::Infeasible;
  double objective = 0.0;
  std::vector<double> x;
  int iterations = 0;
};

inline constexpr double kLpFeasTol = 1e-9;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

BoundedLpResult solve_bounded_lp(const BoundedLp& lp);

std::pair<double, double> binary_event_interval(UnitProb p, double ell, double u);

LpSolution solve_two_layer(const FiniteDist& dist, double threshold, UnitProb e,
                           const SensitivityPair& s, Side side);

LpSolution solve_single_layer(const FiniteDist& dist, double threshold, double ell, double u,
                              Side side);

/// Two-stage fractional greedy for the two-layer program; returns the same
/// optimum by a different route, used to cross-check the simplex.
LpSolution greedy_two_layer(const FiniteDist& dist, double threshold, UnitProb e,
                            const SensitivityPair& s, Side side);

struct AuditCase {
  FiniteDist dist;
  double threshold;
  double e;
  SensitivityPair s;
};

struct AuditReport {
  std::int64_t cases = 0;
  std::int64_t lp_solves = 0;
  double max_discrepancy_lower = 0.0;
  double max_discrepancy_upper = 0.0;
  double boundary_max_discrepancy = 0.0;
  double max_greedy_discrepancy = 0.0;
  std::int64_t dominance_violations = 0;
  double mean_product_overwidth = 0.0;
  double strict_share = 0.0;
  double strict_share_nontrivial = 0.0;
  std::int64_t nontrivial_cases = 0;
  double elapsed_seconds = 0.0;
};

/// Runs the nested and product programs on every case and compares them to
/// the closed forms.
AuditReport run_lp_audit(const std::vector<AuditCase>& cases);

}  // namespace qtb
