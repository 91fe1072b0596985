#include "qtb/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "qtb/errors.hpp"

namespace qtb {

std::size_t TwoSampleData::n0() const {
  return static_cast<std::size_t>(std::count(r.begin(), r.end(), 0));
}

std::size_t TwoSampleData::n1() const {
  return static_cast<std::size_t>(std::count(r.begin(), r.end(), 1));
}

void TwoSampleData::push_source(int cell, int arm, double outcome) {
  r.push_back(1);
  x.push_back(cell);
  a.push_back(arm);
  y.push_back(outcome);
}

void TwoSampleData::push_target(int cell) {
  r.push_back(0);
  x.push_back(cell);
  a.push_back(-1);
  y.push_back(std::numeric_limits<double>::quiet_NaN());
}

void TwoSampleData::validate() const {
  const std::size_t n = r.size();
  if (x.size() != n || a.size() != n || y.size() != n)
    throw SchemaError("two-sample columns differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (r[i] != 0 && r[i] != 1) throw SchemaError("r must be 0 or 1");
    if (x[i] < 0 || static_cast<std::size_t>(x[i]) >= n_cells)
      throw SchemaError("covariate cell id out of range");
    if (r[i] == 1 && ((a[i] != 0 && a[i] != 1) || !std::isfinite(y[i]))) {
      std::ostringstream os;
      os << "source row " << i << " lacks a valid treatment or outcome";
      throw SchemaError(os.str());
    }
  }
  if (n0() == 0) throw EmptyArmError("target sample is empty");
  if (n1() == 0) throw EmptyArmError("source sample is empty");
}

TwoSampleData TwoSampleData::subset(const std::vector<std::size_t>& rows) const {
  TwoSampleData out;
  out.n_cells = n_cells;
  out.r.reserve(rows.size());
  out.x.reserve(rows.size());
  out.a.reserve(rows.size());
  out.y.reserve(rows.size());
  for (std::size_t i : rows) {
    out.r.push_back(r[i]);
    out.x.push_back(x[i]);
    out.a.push_back(a[i]);
    out.y.push_back(y[i]);
  }
  return out;
}

namespace {

// Counts sufficient for every finite-support nuisance.
struct CellStats {
  std::size_t nx = 0, ng = 0;
  std::vector<double> n_target;  // [x]
  std::vector<double> n_source;  // [x]
  std::vector<double> n_arm;     // [x*2+a]
  std::vector<double> cum;       // [(x*2+a)*ng+g], count of A=a, Y<=grid[g]

  CellStats(std::size_t nx_, std::size_t ng_)
      : nx(nx_), ng(ng_), n_target(nx_, 0.0), n_source(nx_, 0.0), n_arm(2 * nx_, 0.0),
        cum(2 * nx_ * ng_, 0.0) {}

  double n0() const { return std::accumulate(n_target.begin(), n_target.end(), 0.0); }
  double n1() const { return std::accumulate(n_source.begin(), n_source.end(), 0.0); }

  void subtract(const CellStats& o) {
    for (std::size_t i = 0; i < n_target.size(); ++i) n_target[i] -= o.n_target[i];
    for (std::size_t i = 0; i < n_source.size(); ++i) n_source[i] -= o.n_source[i];
    for (std::size_t i = 0; i < n_arm.size(); ++i) n_arm[i] -= o.n_arm[i];
    for (std::size_t i = 0; i < cum.size(); ++i) cum[i] -= o.cum[i];
  }
};

std::vector<std::size_t> outcome_indices(const TwoSampleData& data, const ThresholdGrid& grid) {
  std::vector<std::size_t> idx(data.size(), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.r[i] != 1) continue;
    idx[i] = grid.index_at_or_above(data.y[i]);
    if (idx[i] >= grid.size()) {
      std::ostringstream os;
      os << "outcome " << data.y[i] << " lies above the threshold grid";
      throw DomainError(os.str());
    }
  }
  return idx;
}

// stats[k] for each fold plus the total in the last slot.
std::vector<CellStats> fold_stats(const TwoSampleData& data, const std::vector<std::size_t>& yidx,
                                  const std::vector<int>& fold, int k_folds, std::size_t ng) {
  std::vector<CellStats> st(k_folds + 1, CellStats(data.n_cells, ng));
  std::vector<std::vector<double>> hist(k_folds, std::vector<double>(2 * data.n_cells * ng, 0.0));
  for (std::size_t i = 0; i < data.size(); ++i) {
    CellStats& s = st[fold[i]];
    const std::size_t x = static_cast<std::size_t>(data.x[i]);
    if (data.r[i] == 0) {
      s.n_target[x] += 1.0;
    } else {
      s.n_source[x] += 1.0;
      const std::size_t xa = x * 2 + static_cast<std::size_t>(data.a[i]);
      s.n_arm[xa] += 1.0;
      hist[fold[i]][xa * ng + yidx[i]] += 1.0;
    }
  }
  for (int k = 0; k < k_folds; ++k) {
    for (std::size_t xa = 0; xa < 2 * data.n_cells; ++xa) {
      double acc = 0.0;
      for (std::size_t g = 0; g < ng; ++g) {
        acc += hist[k][xa * ng + g];
        st[k].cum[xa * ng + g] = acc;
      }
    }
  }
  CellStats& tot = st[k_folds];
  for (int k = 0; k < k_folds; ++k) {
    for (std::size_t i = 0; i < tot.n_target.size(); ++i) tot.n_target[i] += st[k].n_target[i];
    for (std::size_t i = 0; i < tot.n_source.size(); ++i) tot.n_source[i] += st[k].n_source[i];
    for (std::size_t i = 0; i < tot.n_arm.size(); ++i) tot.n_arm[i] += st[k].n_arm[i];
    for (std::size_t i = 0; i < tot.cum.size(); ++i) tot.cum[i] += st[k].cum[i];
  }
  return st;
}

// Builds nuisances from training counts. When `fallback` is non-null, empty
// strata borrow from it; otherwise they raise.
NuisanceSet nuisances_from_stats(const CellStats& st, const CellStats* fallback,
                                 const ThresholdGrid& grid, const NuisanceOptions& opt,
                                 double pi0, std::vector<std::string>* warnings,
                                 const std::string& label) {
  const std::size_t nx = st.nx, ng = st.ng;
  NuisanceSet ns;
  ns.grid = grid;
  ns.pi0 = pi0;
  ns.pi1 = 1.0 - pi0;
  const double n0 = st.n0(), n1 = st.n1();
  const double fb_n1 = fallback ? fallback->n1() : 0.0;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(label + ": " + msg);
  };

  ns.cells.target_weight.assign(nx, 0.0);
  ns.cells.source_weight.assign(nx, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    ns.cells.target_weight[x] = n0 > 0 ? st.n_target[x] / n0 : 0.0;
    if (st.n_source[x] > 0) {
      ns.cells.source_weight[x] = st.n_source[x] / n1;
    } else if (ns.cells.target_weight[x] > 0.0) {
      if (fallback && fallback->n_source[x] > 0) {
        ns.cells.source_weight[x] = fallback->n_source[x] / fb_n1;
        std::ostringstream os;
        os << "cell " << x << " has no source rows; borrowing the all-fold share";
        warn(os.str());
      } else {
        std::ostringstream os;
        os << "target cell " << x << " has no source mass";
        throw SupportError(os.str());
      }
    }
  }
  ns.cells.finalize();

  // propensity
  ns.e[0].assign(nx, 0.5);
  ns.e[1].assign(nx, 0.5);
  if (!opt.known_e1.empty()) {
    if (opt.known_e1.size() != nx) throw ConfigError("known propensity table has the wrong length");
    for (std::size_t x = 0; x < nx; ++x) {
      const double e1 = opt.known_e1[x];
      if (!(e1 > 0.0 && e1 < 1.0)) throw ConfigError("known propensities must lie in (0, 1)");
      ns.e[1][x] = e1;
    }
  } else {
    std::vector<int> group(nx);
    if (opt.propensity_groups.empty()) {
      std::iota(group.begin(), group.end(), 0);
    } else {
      if (opt.propensity_groups.size() != nx) throw ConfigError("propensity groups have the wrong length");
      group = opt.propensity_groups;
    }
    std::map<int, std::pair<double, double>> pooled;  // group -> (treated, total)
    for (std::size_t x = 0; x < nx; ++x) {
      pooled[group[x]].first += st.n_arm[x * 2 + 1];
      pooled[group[x]].second += st.n_source[x];
    }
    std::map<int, std::pair<double, double>> pooled_fb;
    if (fallback) {
      for (std::size_t x = 0; x < nx; ++x) {
        pooled_fb[group[x]].first += fallback->n_arm[x * 2 + 1];
        pooled_fb[group[x]].second += fallback->n_source[x];
      }
    }
    for (std::size_t x = 0; x < nx; ++x) {
      auto [t, tot] = pooled[group[x]];
      if (tot <= 0.0 && fallback) std::tie(t, tot) = pooled_fb[group[x]];
      if (tot > 0.0) ns.e[1][x] = t / tot;
    }
    for (std::size_t x = 0; x < nx; ++x)
      ns.e[1][x] = std::clamp(ns.e[1][x], opt.eta, 1.0 - opt.eta);
  }
  for (std::size_t x = 0; x < nx; ++x) ns.e[0][x] = 1.0 - ns.e[1][x];

  // source-arm CDFs
  for (int a = 0; a < 2; ++a) {
    ns.p[a].assign(nx * ng, 1.0);
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t xa = x * 2 + static_cast<std::size_t>(a);
      const CellStats* src = &st;
      if (st.n_arm[xa] <= 0.0) {
        if (ns.cells.target_weight[x] <= 0.0 && (!fallback || fallback->n_arm[xa] <= 0.0)) continue;
        if (fallback && fallback->n_arm[xa] > 0.0) {
          src = fallback;
          std::ostringstream os;
          os << "cell " << x << " arm " << a << " is empty; borrowing the all-fold CDF";
          warn(os.str());
        } else if (ns.cells.target_weight[x] > 0.0) {
          std::ostringstream os;
          os << "cell " << x << " arm " << a << " has no source observations";
          throw EmptyArmError(os.str());
        } else {
          continue;
        }
      }
      const double cnt = src->n_arm[xa];
      for (std::size_t g = 0; g < ng; ++g)
        ns.p[a][x * ng + g] = std::min(1.0, src->cum[xa * ng + g] / cnt);
      ns.p[a][x * ng + ng - 1] = 1.0;
    }
  }
  return ns;
}

std::vector<int> assign_folds(const TwoSampleData& data, int k_folds, std::uint64_t seed) {
  std::vector<int> fold(data.size(), 0);
  std::mt19937_64 rng(seed);
  for (int stratum = 0; stratum < 2; ++stratum) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.r[i] == stratum) rows.push_back(i);
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t j = 0; j < rows.size(); ++j) fold[rows[j]] = static_cast<int>(j % k_folds);
  }
  return fold;
}

}  // namespace

CrossFitNuisance estimate_nuisances(const TwoSampleData& data, const ThresholdGrid& grid,
                                    const NuisanceOptions& opt) {
  if (opt.k_folds < 2) throw ConfigError("cross-fitting needs at least 2 folds");
  if (!(opt.eta >= 0.0 && opt.eta < 0.5)) throw ConfigError("eta must lie in [0, 0.5)");
  data.validate();
  const auto yidx = outcome_indices(data, grid);

  CrossFitNuisance cf;
  cf.chi = opt.known_e1.empty() ? 1 : 0;
  cf.fold_of_row = assign_folds(data, opt.k_folds, opt.seed);
  const auto st = fold_stats(data, yidx, cf.fold_of_row, opt.k_folds, grid.size());
  const CellStats& total = st[opt.k_folds];
  const double pi0 = static_cast<double>(data.n0()) / static_cast<double>(data.size());

  cf.full = nuisances_from_stats(total, nullptr, grid, opt, pi0, &cf.warnings, "full sample");
  cf.folds.reserve(opt.k_folds);
  for (int k = 0; k < opt.k_folds; ++k) {
    CellStats train = total;
    train.subtract(st[k]);
    std::ostringstream label;
    label << "fold " << k;
    cf.folds.push_back(nuisances_from_stats(train, &total, grid, opt, pi0, &cf.warnings, label.str()));
  }
  return cf;
}

NuisanceSet estimate_nuisances_full(const TwoSampleData& data, const ThresholdGrid& grid,
                                    const NuisanceOptions& opt) {
  data.validate();
  const auto yidx = outcome_indices(data, grid);
  const std::vector<int> fold(data.size(), 0);
  const auto st = fold_stats(data, yidx, fold, 1, grid.size());
  const double pi0 = static_cast<double>(data.n0()) / static_cast<double>(data.size());
  return nuisances_from_stats(st[1], nullptr, grid, opt, pi0, nullptr, "full sample");
}

CrossFitNuisance fixed_nuisances(const TwoSampleData& data, const NuisanceSet& nuis, int chi) {
  CrossFitNuisance cf;
  cf.chi = chi;
  cf.fold_of_row.assign(data.size(), 0);
  cf.folds.push_back(nuis);
  cf.full = nuis;
  return cf;
}

double zeta_source_residual(int obs_a, double obs_y, std::size_t obs_x, const NuisanceSet& nuis,
                            int a, const SensitivityPair& s, Side side, std::size_t g, int chi) {
  const double p = nuis.cdf(a, obs_x, g);
  const double e = nuis.e[a][obs_x];
  const EnvelopeDerivatives d = envelope_derivatives(p, e, s, side);
  const double ind = obs_a == a ? 1.0 : 0.0;
  const double below = obs_y <= nuis.grid[g] ? 1.0 : 0.0;
  return d.d_p * ind / e * (below - p) + (chi ? d.d_e * (ind - e) : 0.0);
}

OneStepResult one_step_estimate(const TwoSampleData& data, const CrossFitNuisance& cf,
                                const std::vector<SensitivityPair>& s_points, Variant variant,
                                bool want_phi) {
  data.validate();
  if (cf.folds.empty() || cf.fold_of_row.size() != data.size())
    throw ConfigError("cross-fit fold map does not match the data");
  const ThresholdGrid& grid = cf.folds.front().grid;
  const std::size_t ng = grid.size();
  const std::size_t nx = data.n_cells;
  const std::size_t nk = cf.folds.size();
  const std::size_t ns = s_points.size();
  const auto yidx = outcome_indices(data, grid);

  std::vector<SensitivityPair> eval_s = s_points;
  if (variant == Variant::Point)
    std::fill(eval_s.begin(), eval_s.end(), SensitivityPair(1.0, 1.0));
  const bool augment = variant != Variant::PlugIn;
  const int chi = variant == Variant::NoGe ? 0 : cf.chi;

  const auto st = fold_stats(data, yidx, cf.fold_of_row, static_cast<int>(nk), ng);
  const double n0 = static_cast<double>(data.n0());
  const double n1 = static_cast<double>(data.n1());
  const double pi0 = n0 / (n0 + n1);
  const double pi1 = 1.0 - pi0;

  OneStepResult res;
  res.psi = CdfBoundProcess(grid, s_points);
  const std::size_t ni = res.psi.n_index();
  res.eif.n_index = ni;
  res.eif.n_obs = data.size();
  res.eif.chi = chi;
  res.eif.regular.assign(ni, 1);

  // per (fold, cell, index): b, and the two phi coefficients
  const std::size_t stride = nx * ni;
  std::vector<double> bval(nk * stride, 0.0), coef_a(nk * stride, 0.0), coef_e(nk * stride, 0.0);
  std::vector<double>& psi = res.psi.values();

  for (std::size_t k = 0; k < nk; ++k) {
    const NuisanceSet& nu = cf.folds[k];
    const CellStats& s = st[k];
    for (std::size_t x = 0; x < nx; ++x) {
      const bool has_target = s.n_target[x] > 0;
      const bool has_source = s.n_source[x] > 0;
      if (!has_target && !has_source && !want_phi) continue;
      const double omega = nu.cells.omega[x];
      for (int a = 0; a < 2; ++a) {
        const double e = nu.e[a][x];
        const std::size_t xa = x * 2 + static_cast<std::size_t>(a);
        for (Side side : kSides) {
          for (std::size_t si = 0; si < ns; ++si) {
            const SensitivityPair& sp = eval_s[si];
            for (std::size_t g = 0; g < ng; ++g) {
              const std::size_t idx = res.psi.index(a, side, si, g);
              const std::size_t slot = k * stride + x * ni + idx;
              const double p = nu.cdf(a, x, g);
              const double b = g_nested(p, e, sp, side);
              bval[slot] = b;
              psi[idx] += s.n_target[x] * b / n0;
              if (!augment || omega <= 0.0) continue;
              EnvelopeDerivatives d{};
              try {
                d = envelope_derivatives(p, e, sp, side);
              } catch (const TieError&) {
                res.eif.regular[idx] = 0;
                ++res.tie_pairs;
                continue;
              }
              const double ca = omega * d.d_p / e;
              const double ce = chi ? omega * d.d_e : 0.0;
              coef_a[slot] = ca / pi1;
              coef_e[slot] = ce / pi1;
              if (has_source) {
                const double zsum = ca * (s.cum[xa * ng + g] - p * s.n_arm[xa]) +
                                    ce * (s.n_arm[xa] - e * s.n_source[x]);
                psi[idx] += zsum / n1;
              }
            }
          }
        }
      }
    }
  }

  if (!want_phi) return res;

  res.eif.phi.assign(data.size() * ni, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double* row = &res.eif.phi[i * ni];
    const std::size_t k = static_cast<std::size_t>(cf.fold_of_row[i]);
    const std::size_t x = static_cast<std::size_t>(data.x[i]);
    const NuisanceSet& nu = cf.folds[k];
    const std::size_t base = k * stride + x * ni;
    if (data.r[i] == 0) {
      for (std::size_t idx = 0; idx < ni; ++idx) row[idx] = (bval[base + idx] - psi[idx]) / pi0;
      continue;
    }
    const int obs_a = data.a[i];
    const std::size_t yi = yidx[i];
    for (int a = 0; a < 2; ++a) {
      const double ind = obs_a == a ? 1.0 : 0.0;
      const double e = nu.e[a][x];
      for (Side side : kSides) {
        for (std::size_t si = 0; si < ns; ++si) {
          const std::size_t idx0 = res.psi.index(a, side, si, 0);
          for (std::size_t g = 0; g < ng; ++g) {
            const std::size_t slot = base + idx0 + g;
            double v = coef_e[slot] * (ind - e);
            if (ind > 0.0) v += coef_a[slot] * ((g >= yi ? 1.0 : 0.0) - nu.cdf(a, x, g));
            row[idx0 + g] = v;
          }
        }
      }
    }
  }
  return res;
}

CdfBoundProcess ablation_estimates(const TwoSampleData& data, const CrossFitNuisance& cf,
                                   const std::vector<SensitivityPair>& s_points, Variant variant) {
  return one_step_estimate(data, cf, s_points, variant, false).psi;
}

EifEvaluation plug_in_eif(const TwoSampleData& data, const NuisanceSet& nuis,
                          const CdfBoundProcess& psi, int chi) {
  const CrossFitNuisance cf = fixed_nuisances(data, nuis, chi);
  OneStepResult os = one_step_estimate(data, cf, psi.s_points(), Variant::Full, true);
  // recentre the target term at the supplied process
  const std::size_t ni = os.eif.n_index;
  const double pi0 = static_cast<double>(data.n0()) / static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.r[i] != 0) continue;
    double* row = &os.eif.phi[i * ni];
    for (std::size_t idx = 0; idx < ni; ++idx)
      row[idx] += (os.psi.values()[idx] - psi.values()[idx]) / pi0;
  }
  return std::move(os.eif);
}

double expected_score(const NuisanceSet& truth, const NuisanceSet& nu, double psi_true, int a,
                      const SensitivityPair& s, Side side, std::size_t g, int chi) {
  double total = 0.0;
  for (std::size_t x = 0; x < truth.n_cells(); ++x) {
    const double p0 = truth.cells.target_weight[x];
    const double p1 = truth.cells.source_weight[x];
    const double p_nu = nu.cdf(a, x, g);
    const double e_nu = nu.e[a][x];
    if (p0 > 0.0) total += p0 * (g_nested(p_nu, e_nu, s, side) - psi_true);
    if (p1 <= 0.0) continue;
    const EnvelopeDerivatives d = envelope_derivatives(p_nu, e_nu, s, side);
    const double e_star = truth.e[a][x];
    const double p_star = truth.cdf(a, x, g);
    const double cond = d.d_p / e_nu * e_star * (p_star - p_nu) +
                        (chi ? d.d_e * (e_star - e_nu) : 0.0);
    total += p1 * nu.cells.omega[x] * cond;
  }
  return total;
}

}  // namespace qtb
