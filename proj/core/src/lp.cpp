#include "qtb/lp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/parallel.hpp"

namespace qtb {

FiniteDist::FiniteDist(std::vector<double> atoms, std::vector<double> masses)
    : atoms_(std::move(atoms)), masses_(std::move(masses)) {
  if (atoms_.empty() || atoms_.size() != masses_.size())
    throw DomainError("finite distribution needs matching, nonempty atoms and masses");
  double total = 0.0;
  for (std::size_t k = 0; k < atoms_.size(); ++k) {
    if (!(masses_[k] > 0.0) || !std::isfinite(masses_[k]))
      throw DomainError("finite distribution masses must be positive");
    if (k > 0 && !(atoms_[k] > atoms_[k - 1]))
      throw DomainError("finite distribution atoms must be strictly ascending");
    total += masses_[k];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "finite distribution masses sum to " << total;
    throw DomainError(os.str());
  }
}

double FiniteDist::cdf(double y) const {
  double acc = 0.0;
  for (std::size_t k = 0; k < atoms_.size() && atoms_[k] <= y; ++k) acc += masses_[k];
  if (y >= atoms_.back()) return 1.0;
  return std::min(acc, 1.0);
}

std::vector<double> FiniteDist::cdf_at_atoms() const {
  std::vector<double> f(masses_.size());
  std::partial_sum(masses_.begin(), masses_.end(), f.begin());
  f.back() = 1.0;
  for (auto& v : f) v = std::min(v, 1.0);
  return f;
}

// ---------------------------------------------------------------------------
// bounded simplex

namespace {

constexpr double kReducedCostTol = 1e-10;
constexpr double kPivotTol = 1e-11;
constexpr int kMaxIterations = 50000;

struct Tableau {
  int m = 0;
  int n = 0;  // columns including artificials
  std::vector<double> t;  // m x n, B^{-1} A
  std::vector<double> x;
  std::vector<double> lo, hi;
  std::vector<int> basis;
  std::vector<int> pos;  // row of a basic column, -1 otherwise

  double& at(int i, int j) { return t[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return t[static_cast<std::size_t>(i) * n + j]; }

  void pivot(int r, int j) {
    const double pv = at(r, j);
    for (int k = 0; k < n; ++k) at(r, k) /= pv;
    for (int i = 0; i < m; ++i) {
      if (i == r) continue;
      const double f = at(i, j);
      if (f == 0.0) continue;
      for (int k = 0; k < n; ++k) at(i, k) -= f * at(r, k);
      at(i, j) = 0.0;
    }
    at(r, j) = 1.0;
  }

  // Returns false when no entering column remains (optimal for this cost).
  bool step(const std::vector<double>& cost) {
    int enter = -1;
    double dir = 0.0;
    for (int j = 0; j < n && enter < 0; ++j) {
      if (pos[j] >= 0) continue;
      if (hi[j] - lo[j] <= kLpFeasTol) continue;
      double d = cost[j];
      for (int i = 0; i < m; ++i) d -= cost[basis[i]] * at(i, j);
      const bool at_lower = x[j] <= lo[j];
      if (at_lower && d < -kReducedCostTol) {
        enter = j;
        dir = 1.0;
      } else if (!at_lower && d > kReducedCostTol) {
        enter = j;
        dir = -1.0;
      }
    }
    if (enter < 0) return false;

    // Bland: among tied blocking rows take the smallest basic index.
    int leave = -1;
    double best = kInf;
    for (int i = 0; i < m; ++i) {
      const double alpha = at(i, enter) * dir;
      const int bi = basis[i];
      double lim;
      if (alpha > kPivotTol)
        lim = (x[bi] - lo[bi]) / alpha;
      else if (alpha < -kPivotTol)
        lim = (hi[bi] - x[bi]) / (-alpha);
      else
        continue;
      lim = std::max(lim, 0.0);
      if (leave < 0 || lim < best - 1e-12 ||
          (std::abs(lim - best) <= 1e-12 && bi < basis[leave])) {
        best = std::min(best, lim);
        leave = i;
      }
    }
    const double flip = hi[enter] - lo[enter];
    double theta = best;
    if (flip < best - 1e-12) {
      theta = flip;
      leave = -1;
    }
    if (!std::isfinite(theta)) throw SolverError("linear program is unbounded");

    for (int i = 0; i < m; ++i) x[basis[i]] -= at(i, enter) * dir * theta;
    x[enter] += dir * theta;

    if (leave < 0) {
      x[enter] = dir > 0 ? hi[enter] : lo[enter];
      return true;
    }
    const int out = basis[leave];
    const double alpha = at(leave, enter) * dir;
    x[out] = alpha > 0 ? lo[out] : hi[out];
    pivot(leave, enter);
    pos[out] = -1;
    basis[leave] = enter;
    pos[enter] = leave;
    return true;
  }
};

}  // namespace

BoundedLpResult solve_bounded_lp(const BoundedLp& lp) {
  const int m = static_cast<int>(lp.b.size());
  const int ns = static_cast<int>(lp.c.size());
  if (static_cast<int>(lp.a.size()) != m || static_cast<int>(lp.lo.size()) != ns ||
      static_cast<int>(lp.hi.size()) != ns)
    throw SolverError("inconsistent linear program dimensions");

  Tableau tab;
  tab.m = m;
  tab.n = ns + m;
  tab.t.assign(static_cast<std::size_t>(m) * tab.n, 0.0);
  tab.x.assign(tab.n, 0.0);
  tab.lo.assign(tab.n, 0.0);
  tab.hi.assign(tab.n, kInf);
  tab.basis.resize(m);
  tab.pos.assign(tab.n, -1);

  for (int j = 0; j < ns; ++j) {
    if (!(lp.lo[j] <= lp.hi[j])) return {};
    tab.lo[j] = lp.lo[j];
    tab.hi[j] = lp.hi[j];
    if (std::isfinite(lp.lo[j]))
      tab.x[j] = lp.lo[j];
    else if (std::isfinite(lp.hi[j]))
      tab.x[j] = lp.hi[j];
    else
      throw SolverError("free variables are not supported");
  }

  std::vector<double> sign(m, 1.0);
  for (int i = 0; i < m; ++i) {
    if (static_cast<int>(lp.a[i].size()) != ns) throw SolverError("ragged constraint row");
    double res = lp.b[i];
    for (int j = 0; j < ns; ++j) res -= lp.a[i][j] * tab.x[j];
    sign[i] = res >= 0 ? 1.0 : -1.0;
    for (int j = 0; j < ns; ++j) tab.at(i, j) = sign[i] * lp.a[i][j];
    tab.at(i, ns + i) = 1.0;
    tab.x[ns + i] = std::abs(res);
    tab.basis[i] = ns + i;
    tab.pos[ns + i] = i;
  }

  BoundedLpResult out;
  std::vector<double> cost1(tab.n, 0.0);
  for (int i = 0; i < m; ++i) cost1[ns + i] = 1.0;
  int iters = 0;
  while (tab.step(cost1)) {
    if (++iters > kMaxIterations) throw SolverError("simplex iteration cap reached (phase I)");
  }
  double infeas = 0.0;
  for (int i = 0; i < m; ++i) infeas += tab.x[ns + i];
  if (infeas > kLpFeasTol * std::max(1, m)) {
    out.status = LpStatus::Infeasible;
    out.iterations = iters;
    return out;
  }
  for (int i = 0; i < m; ++i) {
    tab.hi[ns + i] = 0.0;
    if (tab.pos[ns + i] < 0) tab.x[ns + i] = 0.0;
  }

  std::vector<double> cost2(tab.n, 0.0);
  std::copy(lp.c.begin(), lp.c.end(), cost2.begin());
  while (tab.step(cost2)) {
    if (++iters > kMaxIterations) throw SolverError("simplex iteration cap reached (phase II)");
  }

  // Recompute the basic values from the original data to shed accumulated
  // pivoting error.
  Eigen::MatrixXd bmat(m, m);
  Eigen::VectorXd rhs(m);
  for (int i = 0; i < m; ++i) {
    rhs(i) = lp.b[i];
    for (int j = 0; j < tab.n; ++j) {
      if (tab.pos[j] >= 0) continue;
      const double aij = j < ns ? lp.a[i][j] : (j - ns == i ? sign[i] : 0.0);
      rhs(i) -= aij * tab.x[j];
    }
    for (int r = 0; r < m; ++r) {
      const int j = tab.basis[r];
      bmat(i, r) = j < ns ? lp.a[i][j] : (j - ns == i ? sign[i] : 0.0);
    }
  }
  if (m > 0) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(bmat);
    const Eigen::VectorXd xb = lu.solve(rhs);
    if (xb.allFinite()) {
      for (int r = 0; r < m; ++r) {
        const int j = tab.basis[r];
        tab.x[j] = std::clamp(xb(r), tab.lo[j], tab.hi[j]);
      }
    }
  }

  out.status = LpStatus::Optimal;
  out.iterations = iters;
  out.x.assign(tab.x.begin(), tab.x.begin() + ns);
  out.objective = 0.0;
  for (int j = 0; j < ns; ++j) out.objective += lp.c[j] * out.x[j];
  return out;
}

// ---------------------------------------------------------------------------

std::pair<double, double> binary_event_interval(UnitProb p, double ell, double u) {
  if (!(ell > 0.0) || ell > 1.0 + 1e-15 || u < 1.0 - 1e-15)
    throw DomainError("binary event interval needs 0 < ell <= 1 <= u");
  const double pv = p.value();
  const double lo = std::max(ell * pv, 1.0 - u * (1.0 - pv));
  const double hi = std::min(u * pv, 1.0 - ell * (1.0 - pv));
  return {std::clamp(lo, 0.0, 1.0), std::clamp(hi, 0.0, 1.0)};
}

namespace {

std::vector<char> event_mask(const FiniteDist& dist, double threshold) {
  std::vector<char> in(dist.size());
  for (std::size_t j = 0; j < dist.size(); ++j) in[j] = dist.atoms()[j] <= threshold;
  return in;
}

void check_ratio_bounds(double ell, double u) {
  if (!(ell > 0.0) || ell > 1.0 + 1e-15 || u < 1.0 - 1e-15)
    throw DomainError("likelihood-ratio bounds need 0 < ell <= 1 <= u");
}

}  // namespace

LpSolution solve_two_layer(const FiniteDist& dist, double threshold, UnitProb e,
                           const SensitivityPair& s, Side side) {
  const auto [ell, u] = ell_u_gamma(e, s.gamma());
  const double lam = s.lambda();
  const int k = static_cast<int>(dist.size());
  const auto in = event_mask(dist, threshold);
  const auto& r = dist.masses();

  // columns: q (k), t (k), slack t <= lam q (k), slack q/lam <= t (k)
  const int nv = 4 * k;
  BoundedLp lp;
  lp.c.assign(nv, 0.0);
  lp.lo.assign(nv, 0.0);
  lp.hi.assign(nv, kInf);
  const double sgn = side == Side::Lower ? 1.0 : -1.0;
  for (int j = 0; j < k; ++j) {
    lp.lo[j] = ell * r[j];
    lp.hi[j] = u * r[j];
    lp.hi[k + j] = 1.0;
    if (in[j]) lp.c[k + j] = sgn;
  }
  std::vector<double> row(nv, 0.0);
  for (int j = 0; j < k; ++j) row[j] = 1.0;
  lp.a.push_back(row);
  lp.b.push_back(1.0);
  std::fill(row.begin(), row.end(), 0.0);
  for (int j = 0; j < k; ++j) row[k + j] = 1.0;
  lp.a.push_back(row);
  lp.b.push_back(1.0);
  for (int j = 0; j < k; ++j) {
    std::vector<double> r1(nv, 0.0);
    r1[k + j] = 1.0;
    r1[j] = -lam;
    r1[2 * k + j] = 1.0;
    lp.a.push_back(std::move(r1));
    lp.b.push_back(0.0);
    std::vector<double> r2(nv, 0.0);
    r2[j] = 1.0 / lam;
    r2[k + j] = -1.0;
    r2[3 * k + j] = 1.0;
    lp.a.push_back(std::move(r2));
    lp.b.push_back(0.0);
  }

  const BoundedLpResult res = solve_bounded_lp(lp);
  if (res.status != LpStatus::Optimal) throw SolverError("two-layer program reported infeasible");
  LpSolution sol;
  sol.status = LpStatus::Optimal;
  sol.q_vars.assign(res.x.begin(), res.x.begin() + k);
  sol.t_vars.assign(res.x.begin() + k, res.x.begin() + 2 * k);
  for (int j = 0; j < k; ++j)
    if (in[j]) sol.value += sol.t_vars[j];
  return sol;
}

LpSolution solve_single_layer(const FiniteDist& dist, double threshold, double ell, double u,
                              Side side) {
  check_ratio_bounds(ell, u);
  const int k = static_cast<int>(dist.size());
  const auto in = event_mask(dist, threshold);
  const auto& r = dist.masses();
  BoundedLp lp;
  lp.c.assign(k, 0.0);
  lp.lo.resize(k);
  lp.hi.resize(k);
  const double sgn = side == Side::Lower ? 1.0 : -1.0;
  for (int j = 0; j < k; ++j) {
    lp.lo[j] = ell * r[j];
    lp.hi[j] = u * r[j];
    if (in[j]) lp.c[j] = sgn;
  }
  lp.a.emplace_back(k, 1.0);
  lp.b.push_back(1.0);
  const BoundedLpResult res = solve_bounded_lp(lp);
  if (res.status != LpStatus::Optimal) throw SolverError("single-layer program reported infeasible");
  LpSolution sol;
  sol.status = LpStatus::Optimal;
  sol.t_vars = res.x;
  for (int j = 0; j < k; ++j)
    if (in[j]) sol.value += sol.t_vars[j];
  return sol;
}

namespace {

// Distribute mass within [lo*w, hi*w] summing to one, pushing mass out of
// (minimize) or into (maximize) the event first.
std::vector<double> greedy_stage(const std::vector<double>& w, double lo, double hi,
                                 const std::vector<char>& in, bool minimize) {
  std::vector<double> x(w.size());
  double budget = 1.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    x[j] = lo * w[j];
    budget -= x[j];
  }
  for (int pass = 0; pass < 2; ++pass) {
    const bool want_in = minimize ? pass == 1 : pass == 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (static_cast<bool>(in[j]) != want_in) continue;
      const double add = std::min(budget, (hi - lo) * w[j]);
      if (add <= 0.0) continue;
      x[j] += add;
      budget -= add;
    }
  }
  return x;
}

}  // namespace

LpSolution greedy_two_layer(const FiniteDist& dist, double threshold, UnitProb e,
                            const SensitivityPair& s, Side side) {
  const auto [ell, u] = ell_u_gamma(e, s.gamma());
  const auto in = event_mask(dist, threshold);
  const bool minimize = side == Side::Lower;
  LpSolution sol;
  sol.status = LpStatus::Optimal;
  sol.q_vars = greedy_stage(dist.masses(), ell, u, in, minimize);
  sol.t_vars = greedy_stage(sol.q_vars, 1.0 / s.lambda(), s.lambda(), in, minimize);
  for (std::size_t j = 0; j < in.size(); ++j)
    if (in[j]) sol.value += sol.t_vars[j];
  return sol;
}

AuditReport run_lp_audit(const std::vector<AuditCase>& cases) {
  const auto t0 = std::chrono::steady_clock::now();
  struct Row {
    double d_lo, d_hi, d_greedy, overwidth;
    bool boundary, violation, strict, nontrivial;
  };
  std::vector<Row> rows(cases.size());

  parallel_for(cases.size(), [&](std::size_t i) {
    const AuditCase& c = cases[i];
    const double p = c.dist.cdf(c.threshold);
    const auto [ell, u] = ell_u_gamma(c.e, c.s.gamma());
    const double lam = c.s.lambda();

    const double cf_lo = g_nested(p, c.e, c.s, Side::Lower);
    const double cf_hi = g_nested(p, c.e, c.s, Side::Upper);
    const double lp_lo = solve_two_layer(c.dist, c.threshold, c.e, c.s, Side::Lower).value;
    const double lp_hi = solve_two_layer(c.dist, c.threshold, c.e, c.s, Side::Upper).value;
    const double gr_lo = greedy_two_layer(c.dist, c.threshold, c.e, c.s, Side::Lower).value;
    const double gr_hi = greedy_two_layer(c.dist, c.threshold, c.e, c.s, Side::Upper).value;
    const double pr_lo = solve_single_layer(c.dist, c.threshold, ell / lam, u * lam, Side::Lower).value;
    const double pr_hi = solve_single_layer(c.dist, c.threshold, ell / lam, u * lam, Side::Upper).value;

    Row& row = rows[i];
    row.d_lo = std::abs(cf_lo - lp_lo);
    row.d_hi = std::abs(cf_hi - lp_hi);
    row.d_greedy = std::max(std::abs(gr_lo - lp_lo), std::abs(gr_hi - lp_hi));
    const double w_nest = lp_hi - lp_lo;
    const double w_prod = pr_hi - pr_lo;
    row.overwidth = w_prod - w_nest;
    row.boundary = p <= 0.0 || p >= 1.0;
    row.violation = pr_lo > lp_lo + 1e-9 || lp_hi > pr_hi + 1e-9;
    row.strict = w_prod > w_nest + 1e-10;
    row.nontrivial = c.s.gamma() > 1.0 && lam > 1.0 && p > 0.0 && p < 1.0 && w_nest > 1e-10;
  });

  AuditReport rep;
  rep.cases = static_cast<std::int64_t>(cases.size());
  rep.lp_solves = 4 * rep.cases;
  std::int64_t strict = 0, strict_nt = 0;
  double over = 0.0;
  for (const Row& row : rows) {
    rep.max_discrepancy_lower = std::max(rep.max_discrepancy_lower, row.d_lo);
    rep.max_discrepancy_upper = std::max(rep.max_discrepancy_upper, row.d_hi);
    rep.max_greedy_discrepancy = std::max(rep.max_greedy_discrepancy, row.d_greedy);
    if (row.boundary)
      rep.boundary_max_discrepancy = std::max({rep.boundary_max_discrepancy, row.d_lo, row.d_hi});
    rep.dominance_violations += row.violation ? 1 : 0;
    over += row.overwidth;
    strict += row.strict ? 1 : 0;
    if (row.nontrivial) {
      ++rep.nontrivial_cases;
      strict_nt += row.strict ? 1 : 0;
    }
  }
  if (rep.cases > 0) {
    rep.mean_product_overwidth = over / static_cast<double>(rep.cases);
    rep.strict_share = static_cast<double>(strict) / static_cast<double>(rep.cases);
  }
  if (rep.nontrivial_cases > 0)
    rep.strict_share_nontrivial =
        static_cast<double>(strict_nt) / static_cast<double>(rep.nontrivial_cases);
  rep.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace qtb
