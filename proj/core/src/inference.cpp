#include "qtb/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/parallel.hpp"

namespace qtb {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double upper_quantile(std::vector<double> draws, double alpha) {
  if (draws.empty()) throw DomainError("no draws to take a quantile of");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  std::sort(draws.begin(), draws.end());
  const double pos = std::ceil((1.0 - alpha) * static_cast<double>(draws.size()) - 1e-9);
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(pos), 1, draws.size());
  return draws[k - 1];
}

double multiplier_critical(const std::vector<double>& phi, std::size_t n_obs, std::size_t n_index,
                           double alpha, int n_draws, std::uint64_t seed,
                           const std::vector<int>* strata, const std::vector<std::size_t>& columns) {
  if (n_draws < 1) throw DomainError("multiplier bootstrap needs at least one draw");
  if (phi.size() != n_obs * n_index) throw DomainError("phi matrix has the wrong size");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> full(phi.data(), static_cast<Eigen::Index>(n_obs),
                                      static_cast<Eigen::Index>(n_index));
  Eigen::MatrixXd sel;
  if (columns.empty()) {
    sel = full;
  } else {
    sel.resize(static_cast<Eigen::Index>(n_obs), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c)
      sel.col(static_cast<Eigen::Index>(c)) = full.col(static_cast<Eigen::Index>(columns[c]));
  }
  if (strata) {
    if (strata->size() != n_obs) throw DomainError("strata vector has the wrong size");
    for (int st : {0, 1}) {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(sel.cols());
      double cnt = 0.0;
      for (std::size_t i = 0; i < n_obs; ++i)
        if ((*strata)[i] == st) {
          mean += sel.row(static_cast<Eigen::Index>(i));
          cnt += 1.0;
        }
      if (cnt == 0.0) continue;
      mean /= cnt;
      for (std::size_t i = 0; i < n_obs; ++i)
        if ((*strata)[i] == st) sel.row(static_cast<Eigen::Index>(i)) -= mean;
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::MatrixXd xi(n_draws, static_cast<Eigen::Index>(n_obs));
  for (Eigen::Index d = 0; d < xi.rows(); ++d)
    for (Eigen::Index i = 0; i < xi.cols(); ++i) xi(d, i) = norm(rng);

  const Eigen::MatrixXd sums = (xi * sel) / std::sqrt(static_cast<double>(n_obs));
  std::vector<double> sups(static_cast<std::size_t>(n_draws));
  for (int d = 0; d < n_draws; ++d) sups[d] = sums.row(d).cwiseAbs().maxCoeff();
  return upper_quantile(std::move(sups), alpha);
}

double multiplier_critical(const EifEvaluation& eif, double alpha, int n_draws, std::uint64_t seed,
                           const std::vector<int>* strata, const std::vector<std::size_t>& columns) {
  return multiplier_critical(eif.phi, eif.n_obs, eif.n_index, alpha, n_draws, seed, strata, columns);
}

std::size_t subsample_size(std::size_t n, double exponent) {
  return static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(n), exponent)));
}

SubsampleResult subsample_critical(const TwoSampleData& data, const Pipeline& pipeline,
                                   const std::vector<double>& full_stat,
                                   const SubsampleOptions& opt) {
  const std::size_t n = data.size();
  if (opt.m >= n) throw DomainError("subsample size must be smaller than n");
  if (opt.m < 30) throw DomainError("subsample size must be at least 30");
  std::vector<std::size_t> blocks = opt.blocks;
  if (blocks.empty()) blocks.push_back(full_stat.size());
  std::size_t total = 0;
  for (std::size_t b : blocks) total += b;
  if (total != full_stat.size()) throw DomainError("statistic blocks do not cover the statistic");

  std::vector<std::size_t> rows0, rows1;
  for (std::size_t i = 0; i < n; ++i) (data.r[i] == 0 ? rows0 : rows1).push_back(i);
  std::size_t m1 = static_cast<std::size_t>(std::llround(static_cast<double>(opt.m) *
                                                         static_cast<double>(rows1.size()) /
                                                         static_cast<double>(n)));
  m1 = std::clamp<std::size_t>(m1, 1, rows1.size());
  const std::size_t m0 = std::min(opt.m - m1, rows0.size());
  if (m0 == 0) throw DomainError("subsample leaves the target stratum empty");

  const double root_m = std::sqrt(static_cast<double>(m0 + m1));
  std::vector<std::vector<double>> roots(blocks.size(), std::vector<double>(opt.n_draws, 0.0));
  std::vector<int> retries(opt.n_draws, 0);

  parallel_for(static_cast<std::size_t>(opt.n_draws), [&](std::size_t d) {
    for (int attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(opt.seed, d * 1009 + static_cast<std::size_t>(attempt)));
      std::vector<std::size_t> pick;
      pick.reserve(m0 + m1);
      for (auto [rows, mm] : {std::pair{&rows0, m0}, std::pair{&rows1, m1}}) {
        std::vector<std::size_t> pool = *rows;
        for (std::size_t j = 0; j < mm; ++j) {
          std::uniform_int_distribution<std::size_t> u(j, pool.size() - 1);
          std::swap(pool[j], pool[u(rng)]);
          pick.push_back(pool[j]);
        }
      }
      std::sort(pick.begin(), pick.end());
      std::vector<double> stat;
      try {
        stat = pipeline(data.subset(pick));
      } catch (const Error& err) {
        const bool recoverable =
            err.family() == ErrorFamily::Estimation || dynamic_cast<const DegenerateSubsampleError*>(&err);
        if (!recoverable) throw;
        retries[d] = attempt + 1;
        if (attempt + 1 >= opt.max_retries) {
          std::ostringstream os;
          os << "subsample draw " << d << " failed " << opt.max_retries
             << " times: " << err.what();
          throw DegenerateSubsampleError(os.str());
        }
        continue;
      }
      if (stat.size() != full_stat.size()) throw DegenerateSubsampleError("subsample statistic has the wrong size");
      std::size_t off = 0;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        double sup = 0.0;
        for (std::size_t k = off; k < off + blocks[b]; ++k)
          sup = std::max(sup, std::abs(stat[k] - full_stat[k]));
        roots[b][d] = root_m * sup;
        off += blocks[b];
      }
      return;
    }
  });

  SubsampleResult res;
  for (int r : retries) res.retries += r;
  for (auto& rt : roots) {
    res.critical.push_back(upper_quantile(rt, opt.alpha));
    std::sort(rt.begin(), rt.end());
    res.roots.push_back(std::move(rt));
  }
  return res;
}

BandSet build_bands(const CdfBoundProcess& proc, double c, double n, double alpha) {
  if (!(c >= 0.0)) throw DomainError("critical value must be nonnegative");
  if (!(n > 0.0)) throw DomainError("sample size must be positive");
  BandSet bs;
  bs.c = c;
  bs.n = n;
  bs.alpha = alpha;
  bs.lower_raw = bs.upper_raw = bs.lower = bs.upper = proc;
  const double half = c / std::sqrt(n);
  const std::size_t ng = proc.n_grid();
  for (int a = 0; a < 2; ++a) {
    for (Side side : kSides) {
      for (std::size_t s = 0; s < proc.n_s(); ++s) {
        const double* psi = proc.path(a, side, s);
        double* lr = bs.lower_raw.path(a, side, s);
        double* ur = bs.upper_raw.path(a, side, s);
        double* lm = bs.lower.path(a, side, s);
        double* um = bs.upper.path(a, side, s);
        for (std::size_t g = 0; g < ng; ++g) {
          lr[g] = std::max(0.0, psi[g] - half);
          ur[g] = std::min(1.0, psi[g] + half);
        }
        double run = 0.0;
        for (std::size_t g = 0; g < ng; ++g) lm[g] = run = std::max(run, lr[g]);
        run = 1.0;
        for (std::size_t g = ng; g-- > 0;) um[g] = run = std::min(run, ur[g]);
      }
    }
  }
  return bs;
}

namespace {

QuantileCi invert_pair(const double* lower, const double* upper, const ThresholdGrid& grid,
                       double tau) {
  const std::size_t n = grid.size();
  QuantileCi ci;
  std::size_t g_lo = n, g_hi = n;
  for (std::size_t g = 0; g < n; ++g)
    if (upper[g] >= tau - 1e-12) {
      g_lo = g;
      break;
    }
  for (std::size_t g = 0; g < n; ++g)
    if (lower[g] >= tau - 1e-12) {
      g_hi = g;
      break;
    }
  if (g_lo == n) {
    ci.tail = true;
    g_lo = n - 1;
  }
  if (g_hi == n) {
    ci.tail = true;
    g_hi = n - 1;
  }
  ci.lo = grid[g_lo];
  ci.hi = grid[g_hi];
  return ci;
}

}  // namespace

QuantileBandCis invert_bands(const BandSet& bands, double tau, int a, std::size_t s) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("tau must lie in (0, 1)");
  QuantileBandCis out;
  out.tau = tau;
  out.a = a;
  out.s = s;
  const auto& grid = bands.lower.grid();
  out.minus = invert_pair(bands.lower.path(a, Side::Upper, s), bands.upper.path(a, Side::Upper, s),
                          grid, tau);
  out.plus = invert_pair(bands.lower.path(a, Side::Lower, s), bands.upper.path(a, Side::Lower, s),
                         grid, tau);
  return out;
}

std::vector<QuantileBandCis> invert_bands(const BandSet& bands, const std::vector<double>& taus,
                                          int a, std::size_t s) {
  std::vector<QuantileBandCis> out;
  out.reserve(taus.size());
  for (double t : taus) out.push_back(invert_bands(bands, t, a, s));
  return out;
}

std::pair<double, double> qte_outer_band(const QuantileBandCis& arm1, const QuantileBandCis& arm0) {
  return {arm1.minus.lo - arm0.plus.hi, arm1.plus.hi - arm0.minus.lo};
}

WaldCi wald_quantile_ci(const CdfBoundProcess& proc, const EifEvaluation& eif, double tau, int a,
                        std::size_t s, Side side, double alpha, double bandwidth,
                        double density_floor) {
  const Side cdf_side = side == Side::Lower ? Side::Upper : Side::Lower;
  const std::size_t ng = proc.n_grid();
  const auto& grid = proc.grid();
  const double* psi = proc.path(a, cdf_side, s);
  const std::size_t g = grid_quantile_index(psi, ng, tau);

  const double h = grid.spacing();
  const std::size_t off = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(bandwidth / h)));
  const std::size_t gl = g >= off ? g - off : 0;
  const std::size_t gh = std::min(ng - 1, g + off);
  WaldCi ci;
  ci.estimate = grid[g];
  ci.density = (psi[gh] - psi[gl]) / (grid[gh] - grid[gl]);
  if (!(ci.density >= density_floor)) {
    std::ostringstream os;
    os << "density estimate " << ci.density << " below floor at tau = " << tau;
    throw DensityFloorError(os.str());
  }

  const std::size_t idx = proc.index(a, cdf_side, s, g);
  double mean = 0.0;
  for (std::size_t i = 0; i < eif.n_obs; ++i) mean += eif.at(i, idx);
  mean /= static_cast<double>(eif.n_obs);
  double var = 0.0;
  for (std::size_t i = 0; i < eif.n_obs; ++i) {
    const double dv = eif.at(i, idx) - mean;
    var += dv * dv;
  }
  var /= static_cast<double>(eif.n_obs);
  const double se = std::sqrt(var) / ci.density / std::sqrt(static_cast<double>(eif.n_obs));
  const double z = normal_quantile(1.0 - alpha / 2.0);
  ci.lo = ci.estimate - z * se;
  ci.hi = ci.estimate + z * se;
  return ci;
}

std::vector<PlanePoint> zero_level_points(const FrontierGrid& fg, const std::vector<double>& values) {
  std::vector<PlanePoint> pts;
  const std::size_t ng = fg.n_gamma(), nl = fg.n_lambda();
  auto edge = [&](std::size_t ia, std::size_t ja, std::size_t ib, std::size_t jb) {
    const double va = values[fg.node(ia, ja)];
    const double vb = values[fg.node(ib, jb)];
    if ((va >= 0.0) == (vb >= 0.0)) return;
    const double t = va / (va - vb);
    pts.emplace_back(fg.gammas[ia] + t * (fg.gammas[ib] - fg.gammas[ia]),
                     fg.lambdas[ja] + t * (fg.lambdas[jb] - fg.lambdas[ja]));
  };
  for (std::size_t i = 0; i < ng; ++i)
    for (std::size_t j = 0; j < nl; ++j) {
      if (i + 1 < ng) edge(i, j, i + 1, j);
      if (j + 1 < nl) edge(i, j, i, j + 1);
    }
  return pts;
}

FrontierSets frontier_confidence(FrontierGrid& fg, double d, double n) {
  if (!(d >= 0.0)) throw DomainError("frontier critical value must be nonnegative");
  if (!(n > 0.0)) throw DomainError("sample size must be positive");
  fg.d = d;
  fg.n = n;
  const double shift = d / std::sqrt(n);
  const std::size_t nn = fg.kappa.size();
  fg.inner.assign(nn, 0);
  fg.outer.assign(nn, 0);
  FrontierSets sets;
  std::vector<double> outer_vals(nn);
  for (std::size_t k = 0; k < nn; ++k) {
    fg.inner[k] = fg.kappa[k] - shift >= 0.0;
    fg.outer[k] = fg.kappa[k] + shift >= 0.0;
    if (fg.inner[k]) sets.inner.push_back(k);
    if (fg.outer[k]) sets.outer.push_back(k);
    outer_vals[k] = fg.kappa[k] + shift;
  }
  sets.outer_zero_level = zero_level_points(fg, outer_vals);
  return sets;
}

double hausdorff(const std::vector<PlanePoint>& a, const std::vector<PlanePoint>& b) {
  if (a.empty() || b.empty()) throw EmptySetError("Hausdorff distance of an empty set");
  auto directed = [](const std::vector<PlanePoint>& p, const std::vector<PlanePoint>& q) {
    double worst = 0.0;
    for (const auto& u : p) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& v : q)
        best = std::min(best, std::hypot(u.first - v.first, u.second - v.second));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

namespace {

// influence values of psi^side_{a,s}(y_g) at fixed nuisances
std::vector<double> psi_influence(const TwoSampleData& data, const NuisanceSet& nuis, double psi,
                                  int a, const SensitivityPair& s, Side side, std::size_t g,
                                  int chi) {
  const double n = static_cast<double>(data.size());
  const double pi0 = static_cast<double>(data.n0()) / n;
  const double pi1 = 1.0 - pi0;
  std::vector<double> col(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t x = static_cast<std::size_t>(data.x[i]);
    if (data.r[i] == 0) {
      col[i] = (g_nested(nuis.cdf(a, x, g), nuis.e[a][x], s, side) - psi) / pi0;
    } else {
      const double w = nuis.cells.omega[x];
      col[i] = w > 0.0 ? w / pi1 * zeta_source_residual(data.a[i], data.y[i], x, nuis, a, s, side, g, chi)
                       : 0.0;
    }
  }
  return col;
}

}  // namespace

double frontier_multiplier_critical(const TwoSampleData& data, const NuisanceSet& nuis,
                                    const FrontierGrid& fg, double alpha, int n_draws,
                                    std::uint64_t seed, int chi, double density_floor) {
  const BoundEvaluator ev(nuis);
  const ThresholdGrid& grid = nuis.grid;
  const std::size_t ng = grid.size();
  const double h = grid.spacing();
  const std::size_t off = 2;
  const auto nodes = fg.nodes();
  const std::size_t nobs = data.size();
  std::vector<double> phi(nobs * nodes.size(), 0.0);

  // quantile influence: -phi_psi / f at the quantile grid point
  auto add_quantile_if = [&](std::size_t col, int a, Side q_side, const SensitivityPair& s, double tau,
                             double sign) {
    const Side cdf_side = q_side == Side::Lower ? Side::Upper : Side::Lower;
    const std::size_t g = grid.index_at_or_above(ev.quantile(a, cdf_side, s, tau));
    const std::size_t gl = g >= off ? g - off : 0;
    const std::size_t gh = std::min(ng - 1, g + off);
    const double f = (ev.psi(a, cdf_side, s, gh) - ev.psi(a, cdf_side, s, gl)) / (grid[gh] - grid[gl]);
    if (!(f >= density_floor)) throw DensityFloorError("density below floor in the frontier influence function");
    const auto c = psi_influence(data, nuis, ev.psi(a, cdf_side, s, g), a, s, cdf_side, g, chi);
    for (std::size_t i = 0; i < nobs; ++i) phi[i * nodes.size() + col] += sign * (-c[i] / f);
  };

  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const QteHull hull = ev.hull(nodes[k], fg.tau);
    if (std::abs(hull.delta_hi + hull.delta_lo) <= 2.0 * h) {
      std::ostringstream os;
      os << "kappa branches are not separated at node " << k;
      throw DomainError(os.str());
    }
    if (hull.delta_hi < -hull.delta_lo) {
      // kappa = q^+_1 - q^-_0
      add_quantile_if(k, 1, Side::Upper, nodes[k], fg.tau, 1.0);
      add_quantile_if(k, 0, Side::Lower, nodes[k], fg.tau, -1.0);
    } else {
      // kappa = q^+_0 - q^-_1
      add_quantile_if(k, 0, Side::Upper, nodes[k], fg.tau, 1.0);
      add_quantile_if(k, 1, Side::Lower, nodes[k], fg.tau, -1.0);
    }
  }
  return multiplier_critical(phi, nobs, nodes.size(), alpha, n_draws, seed, &data.r);
}

}  // namespace qtb
