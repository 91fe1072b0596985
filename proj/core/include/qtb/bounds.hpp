#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "qtb/envelope.hpp"
#include "qtb/nuisance.hpp"

namespace qtb {

/// psi^side_{a,s}(y) for both arms, both sides, a list of sensitivity points
/// and every grid point. Paths are contiguous in y.
class CdfBoundProcess {
 public:
  CdfBoundProcess() = default;
  CdfBoundProcess(ThresholdGrid grid, std::vector<SensitivityPair> s_points);

  const ThresholdGrid& grid() const noexcept { return grid_; }
  const std::vector<SensitivityPair>& s_points() const noexcept { return s_points_; }
  std::size_t n_s() const noexcept { return s_points_.size(); }
  std::size_t n_grid() const noexcept { return grid_.size(); }
  std::size_t n_index() const noexcept { return values_.size(); }

  std::size_t index(int a, Side side, std::size_t s, std::size_t g) const {
    return ((static_cast<std::size_t>(a) * 2 + side_index(side)) * s_points_.size() + s) *
               grid_.size() + g;
  }
  double& at(int a, Side side, std::size_t s, std::size_t g) { return values_[index(a, side, s, g)]; }
  double at(int a, Side side, std::size_t s, std::size_t g) const {
    return values_[index(a, side, s, g)];
  }
  const double* path(int a, Side side, std::size_t s) const { return &values_[index(a, side, s, 0)]; }
  double* path(int a, Side side, std::size_t s) { return &values_[index(a, side, s, 0)]; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  ThresholdGrid grid_;
  std::vector<SensitivityPair> s_points_;
  std::vector<double> values_;
};

struct QteHull {
  double tau = 0.5;
  double delta_lo = 0.0;
  double delta_hi = 0.0;
  double kappa = 0.0;
};

struct SRect {
  double gamma_lo = 1.0, gamma_hi = 4.0;
  double lambda_lo = 1.0, lambda_hi = 3.0;
};

/// kappa^hull over a (Gamma, Lambda) mesh; node (i, j) is stored at i * n_lambda + j.
/// The confidence fields are filled by frontier_confidence.
struct FrontierGrid {
  std::vector<double> gammas;
  std::vector<double> lambdas;
  std::vector<double> kappa;
  double tau = 0.5;
  double d = 0.0;
  double n = 0.0;
  std::vector<char> inner;
  std::vector<char> outer;

  std::size_t n_gamma() const noexcept { return gammas.size(); }
  std::size_t n_lambda() const noexcept { return lambdas.size(); }
  std::size_t node(std::size_t i, std::size_t j) const { return i * lambdas.size() + j; }
  std::vector<SensitivityPair> nodes() const;
  static FrontierGrid mesh(const SRect& rect, std::size_t n_gamma, std::size_t n_lambda);
};

double conditional_bound(UnitProb p_ax, UnitProb e_ax, const SensitivityPair& s, Side side);

CdfBoundProcess marginal_cdf_bounds(const NuisanceSet& nuis,
                                    const std::vector<SensitivityPair>& s_points);

/// Generalized inverse on the grid: inf{y : path(y) >= tau}. Throws TailError
/// if the path never reaches tau.
std::size_t grid_quantile_index(const double* path, std::size_t n, double tau);

/// (q_lo, q_hi) = (inf{psi^+ >= tau}, inf{psi^- >= tau}).
std::pair<double, double> quantile_bounds(const CdfBoundProcess& proc, double tau, int a,
                                          std::size_t s);

QteHull qte_hull(const CdfBoundProcess& proc, double tau, std::size_t s);

/// Plug-in evaluation of psi at single points without materializing whole
/// paths; quantiles use bisection over the grid, valid because plug-in paths
/// are monotone.
class BoundEvaluator {
 public:
  explicit BoundEvaluator(const NuisanceSet& nuis);
  double psi(int a, Side side, const SensitivityPair& s, std::size_t g) const;
  double quantile(int a, Side cdf_side, const SensitivityPair& s, double tau) const;
  QteHull hull(const SensitivityPair& s, double tau) const;

 private:
  const NuisanceSet* nuis_;
  std::vector<std::size_t> active_cells_;
};

using ProcessBuilder = std::function<CdfBoundProcess(const std::vector<SensitivityPair>&)>;

FrontierGrid frontier_scan(const ProcessBuilder& build, double tau, const SRect& rect,
                           std::size_t n_gamma, std::size_t n_lambda);

/// Plug-in frontier straight from nuisances (bisection quantiles).
FrontierGrid frontier_scan(const NuisanceSet& nuis, double tau, const SRect& rect,
                           std::size_t n_gamma, std::size_t n_lambda);

}  // namespace qtb
