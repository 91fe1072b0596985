#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "qtb/bounds.hpp"
#include "qtb/estimation.hpp"

namespace qtb {

struct BandSet {
  double c = 0.0;
  double alpha = 0.05;
  double n = 1.0;
  CdfBoundProcess lower_raw, upper_raw;
  CdfBoundProcess lower, upper;  // monotone envelopes
};

struct QuantileCi {
  double lo = 0.0;
  double hi = 0.0;
  bool tail = false;  // band never reached tau; hi set to the top grid point
};

/// Confidence intervals for q^-_{a,s}(tau) and q^+_{a,s}(tau).
struct QuantileBandCis {
  double tau = 0.5;
  int a = 0;
  std::size_t s = 0;
  QuantileCi minus;
  QuantileCi plus;
};

/// Empirical (1 - alpha) quantile with the ceil((1 - alpha) B) order statistic.
double upper_quantile(std::vector<double> draws, double alpha);

/// Gaussian-multiplier critical value for sup_k |n^{-1/2} sum_i xi_i phi_ik|
/// over the columns in `columns` (all columns when empty). phi is row-major
/// n_obs x n_index. When `strata` is given, phi is centred within each stratum.
double multiplier_critical(const std::vector<double>& phi, std::size_t n_obs, std::size_t n_index,
                           double alpha, int n_draws, std::uint64_t seed,
                           const std::vector<int>* strata = nullptr,
                           const std::vector<std::size_t>& columns = {});

double multiplier_critical(const EifEvaluation& eif, double alpha, int n_draws, std::uint64_t seed,
                           const std::vector<int>* strata = nullptr,
                           const std::vector<std::size_t>& columns = {});

/// Statistic recomputed on a (sub)sample, returned as one flat vector.
using Pipeline = std::function<std::vector<double>(const TwoSampleData&)>;

struct SubsampleOptions {
  std::size_t m = 0;
  int n_draws = 99;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  int max_retries = 10;
  /// Lengths of consecutive statistic blocks; one critical value per block.
  /// Empty means a single block.
  std::vector<std::size_t> blocks;
};

struct SubsampleResult {
  std::vector<double> critical;  // per block
  std::vector<std::vector<double>> roots;  // per block, sorted
  int retries = 0;
};

/// m-out-of-n subsampling, stratified by R with proportional allocation.
/// Critical values are quantiles of sqrt(m) sup |stat_m - stat_n|.
SubsampleResult subsample_critical(const TwoSampleData& data, const Pipeline& pipeline,
                                   const std::vector<double>& full_stat,
                                   const SubsampleOptions& opt);

std::size_t subsample_size(std::size_t n, double exponent);

BandSet build_bands(const CdfBoundProcess& proc, double c, double n, double alpha);

QuantileBandCis invert_bands(const BandSet& bands, double tau, int a, std::size_t s);
std::vector<QuantileBandCis> invert_bands(const BandSet& bands, const std::vector<double>& taus,
                                          int a, std::size_t s);

/// (Delta^lo, Delta^hi) from the two arms' inverted bands.
std::pair<double, double> qte_outer_band(const QuantileBandCis& arm1, const QuantileBandCis& arm0);

struct WaldCi {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double density = 0.0;
};

/// Wald interval for the quantile endpoint q^side_{a,s}(tau). The endpoint
/// q^- inverts psi^+ and q^+ inverts psi^-. Throws DensityFloorError when the
/// finite-difference density falls below `density_floor`.
WaldCi wald_quantile_ci(const CdfBoundProcess& proc, const EifEvaluation& eif, double tau, int a,
                        std::size_t s, Side side, double alpha, double bandwidth,
                        double density_floor = 1e-3);

using PlanePoint = std::pair<double, double>;

struct FrontierSets {
  std::vector<std::size_t> inner;
  std::vector<std::size_t> outer;
  std::vector<PlanePoint> outer_zero_level;
};

/// Fills inner/outer membership of `fg` and locates the zero level of
/// kappa + d / sqrt(n) along mesh edges.
FrontierSets frontier_confidence(FrontierGrid& fg, double d, double n);

/// Points where `values` (on the mesh of fg) crosses zero along grid edges,
/// by linear interpolation; values >= 0 count as inside.
std::vector<PlanePoint> zero_level_points(const FrontierGrid& fg, const std::vector<double>& values);

double hausdorff(const std::vector<PlanePoint>& a, const std::vector<PlanePoint>& b);

/// Multiplier critical value for sup_s |kappa_hat - kappa| built from the
/// influence function of the active branch of kappa at each node. Throws
/// DomainError when |Delta^+ + Delta^-| <= 2 grid spacings at some node, and
/// DensityFloorError or TieError when a quantile influence value is unavailable.
double frontier_multiplier_critical(const TwoSampleData& data, const NuisanceSet& nuis,
                                    const FrontierGrid& fg, double alpha, int n_draws,
                                    std::uint64_t seed, int chi, double density_floor = 1e-3);

double normal_quantile(double p);

}  // namespace qtb
