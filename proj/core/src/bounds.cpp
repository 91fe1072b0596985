#include "qtb/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/parallel.hpp"

namespace qtb {

namespace {
constexpr double kQuantileTol = 1e-12;
}

ThresholdGrid::ThresholdGrid(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw DomainError("threshold grid is empty");
  for (std::size_t g = 1; g < values_.size(); ++g)
    if (!(values_[g] > values_[g - 1])) throw DomainError("threshold grid must be strictly ascending");
}

ThresholdGrid ThresholdGrid::uniform(double lo, double hi, std::size_t size) {
  if (size < 2 || !(hi > lo)) throw DomainError("uniform grid needs size >= 2 and hi > lo");
  std::vector<double> v(size);
  for (std::size_t g = 0; g < size; ++g)
    v[g] = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(size - 1);
  v.back() = hi;
  return ThresholdGrid(std::move(v));
}

std::size_t ThresholdGrid::index_at_or_above(double y) const {
  return static_cast<std::size_t>(std::lower_bound(values_.begin(), values_.end(), y) -
                                  values_.begin());
}

double ThresholdGrid::spacing() const {
  if (values_.size() < 2) return 0.0;
  std::vector<double> d(values_.size() - 1);
  for (std::size_t g = 1; g < values_.size(); ++g) d[g - 1] = values_[g] - values_[g - 1];
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

void CovariateCells::finalize() {
  if (source_weight.size() != target_weight.size())
    throw DomainError("covariate weight vectors differ in length");
  omega.assign(target_weight.size(), 0.0);
  for (std::size_t x = 0; x < target_weight.size(); ++x) {
    if (target_weight[x] <= 0.0) continue;
    if (!(source_weight[x] > 0.0)) {
      std::ostringstream os;
      os << "target cell " << x << " has no source mass";
      throw SupportError(os.str());
    }
    omega[x] = target_weight[x] / source_weight[x];
  }
}

void NuisanceSet::validate() const {
  const std::size_t nx = n_cells();
  const std::size_t ng = grid.size();
  for (int a = 0; a < 2; ++a) {
    if (e[a].size() != nx || p[a].size() != nx * ng)
      throw MissingCellError("nuisance arrays do not match the cell and grid sizes");
  }
  for (std::size_t x = 0; x < nx; ++x) {
    if (cells.target_weight[x] <= 0.0) continue;
    for (int a = 0; a < 2; ++a) {
      bool ok = std::isfinite(e[a][x]) && e[a][x] > 0.0 && e[a][x] < 1.0;
      for (std::size_t g = 0; ok && g < ng; ++g) ok = std::isfinite(p[a][x * ng + g]);
      if (!ok) {
        std::ostringstream os;
        os << "cell " << x << " arm " << a << " lacks nuisance values";
        throw MissingCellError(os.str());
      }
    }
  }
}

std::vector<SensitivityPair> FrontierGrid::nodes() const {
  std::vector<SensitivityPair> out;
  out.reserve(gammas.size() * lambdas.size());
  for (double g : gammas)
    for (double l : lambdas) out.emplace_back(g, l);
  return out;
}

FrontierGrid FrontierGrid::mesh(const SRect& rect, std::size_t n_gamma, std::size_t n_lambda) {
  if (n_gamma < 2 || n_lambda < 2) throw DomainError("frontier mesh needs at least 2 nodes per axis");
  if (rect.gamma_lo < 1.0 || rect.lambda_lo < 1.0 || !(rect.gamma_hi > rect.gamma_lo) ||
      !(rect.lambda_hi > rect.lambda_lo))
    throw DomainError("invalid sensitivity rectangle");
  FrontierGrid fg;
  fg.gammas = ThresholdGrid::uniform(rect.gamma_lo, rect.gamma_hi, n_gamma).values();
  fg.lambdas = ThresholdGrid::uniform(rect.lambda_lo, rect.lambda_hi, n_lambda).values();
  fg.kappa.assign(n_gamma * n_lambda, 0.0);
  return fg;
}

CdfBoundProcess::CdfBoundProcess(ThresholdGrid grid, std::vector<SensitivityPair> s_points)
    : grid_(std::move(grid)), s_points_(std::move(s_points)) {
  values_.assign(4 * s_points_.size() * grid_.size(), 0.0);
}

double conditional_bound(UnitProb p_ax, UnitProb e_ax, const SensitivityPair& s, Side side) {
  return g_nested(p_ax, e_ax, s, side);
}

CdfBoundProcess marginal_cdf_bounds(const NuisanceSet& nuis,
                                    const std::vector<SensitivityPair>& s_points) {
  nuis.validate();
  CdfBoundProcess proc(nuis.grid, s_points);
  const std::size_t ng = nuis.grid.size();
  const std::size_t nx = nuis.n_cells();
  parallel_for(s_points.size(), [&](std::size_t si) {
    const SensitivityPair& s = s_points[si];
    for (int a = 0; a < 2; ++a) {
      for (Side side : kSides) {
        double* out = proc.path(a, side, si);
        std::fill(out, out + ng, 0.0);
        for (std::size_t x = 0; x < nx; ++x) {
          const double w = nuis.cells.target_weight[x];
          if (w <= 0.0) continue;
          const double ex = nuis.e[a][x];
          for (std::size_t g = 0; g < ng; ++g)
            out[g] += w * g_nested(nuis.cdf(a, x, g), ex, s, side);
        }
        for (std::size_t g = 0; g < ng; ++g) out[g] = std::clamp(out[g], 0.0, 1.0);
      }
    }
  });
  return proc;
}

std::size_t grid_quantile_index(const double* path, std::size_t n, double tau) {
  for (std::size_t g = 0; g < n; ++g)
    if (path[g] >= tau - kQuantileTol) return g;
  std::ostringstream os;
  os << "CDF path never reaches tau = " << tau;
  throw TailError(os.str());
}

std::pair<double, double> quantile_bounds(const CdfBoundProcess& proc, double tau, int a,
                                          std::size_t s) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("tau must lie in (0, 1)");
  const std::size_t n = proc.n_grid();
  const auto& grid = proc.grid();
  const double lo = grid[grid_quantile_index(proc.path(a, Side::Upper, s), n, tau)];
  const double hi = grid[grid_quantile_index(proc.path(a, Side::Lower, s), n, tau)];
  return {lo, hi};
}

QteHull qte_hull(const CdfBoundProcess& proc, double tau, std::size_t s) {
  const auto [q1_lo, q1_hi] = quantile_bounds(proc, tau, 1, s);
  const auto [q0_lo, q0_hi] = quantile_bounds(proc, tau, 0, s);
  QteHull h;
  h.tau = tau;
  h.delta_lo = q1_lo - q0_hi;
  h.delta_hi = q1_hi - q0_lo;
  h.kappa = std::min(h.delta_hi, -h.delta_lo);
  return h;
}

BoundEvaluator::BoundEvaluator(const NuisanceSet& nuis) : nuis_(&nuis) {
  nuis.validate();
  for (std::size_t x = 0; x < nuis.n_cells(); ++x)
    if (nuis.cells.target_weight[x] > 0.0) active_cells_.push_back(x);
}

double BoundEvaluator::psi(int a, Side side, const SensitivityPair& s, std::size_t g) const {
  double acc = 0.0;
  for (std::size_t x : active_cells_)
    acc += nuis_->cells.target_weight[x] * g_nested(nuis_->cdf(a, x, g), nuis_->e[a][x], s, side);
  return std::clamp(acc, 0.0, 1.0);
}

double BoundEvaluator::quantile(int a, Side cdf_side, const SensitivityPair& s, double tau) const {
  const std::size_t n = nuis_->grid.size();
  if (psi(a, cdf_side, s, n - 1) < tau - kQuantileTol) {
    std::ostringstream os;
    os << "CDF path never reaches tau = " << tau;
    throw TailError(os.str());
  }
  std::size_t lo = 0, hi = n - 1;  // answer in [lo, hi]
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (psi(a, cdf_side, s, mid) >= tau - kQuantileTol)
      hi = mid;
    else
      lo = mid + 1;
  }
  return nuis_->grid[lo];
}

QteHull BoundEvaluator::hull(const SensitivityPair& s, double tau) const {
  QteHull h;
  h.tau = tau;
  const double q1_lo = quantile(1, Side::Upper, s, tau);
  const double q1_hi = quantile(1, Side::Lower, s, tau);
  const double q0_lo = quantile(0, Side::Upper, s, tau);
  const double q0_hi = quantile(0, Side::Lower, s, tau);
  h.delta_lo = q1_lo - q0_hi;
  h.delta_hi = q1_hi - q0_lo;
  h.kappa = std::min(h.delta_hi, -h.delta_lo);
  return h;
}

FrontierGrid frontier_scan(const ProcessBuilder& build, double tau, const SRect& rect,
                           std::size_t n_gamma, std::size_t n_lambda) {
  FrontierGrid fg = FrontierGrid::mesh(rect, n_gamma, n_lambda);
  fg.tau = tau;
  const CdfBoundProcess proc = build(fg.nodes());
  for (std::size_t k = 0; k < fg.kappa.size(); ++k) fg.kappa[k] = qte_hull(proc, tau, k).kappa;
  return fg;
}

FrontierGrid frontier_scan(const NuisanceSet& nuis, double tau, const SRect& rect,
                           std::size_t n_gamma, std::size_t n_lambda) {
  FrontierGrid fg = FrontierGrid::mesh(rect, n_gamma, n_lambda);
  fg.tau = tau;
  const BoundEvaluator ev(nuis);
  const auto nodes = fg.nodes();
  for (std::size_t k = 0; k < nodes.size(); ++k) fg.kappa[k] = ev.hull(nodes[k], tau).kappa;
  return fg;
}

}  // namespace qtb
