#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qtb/bounds.hpp"
#include "qtb/estimation.hpp"
#include "qtb/lp.hpp"

namespace qtb {

// ---- experiment 1 ----

/// Dirichlet(2,...,2) finite-support cases with Gamma and Lambda drawn from a
/// fixed ladder, random e and a random threshold event (possibly empty or full).
std::vector<AuditCase> gen_audit_cells(std::uint64_t seed, const std::vector<int>& k_list,
                                       std::size_t n_cases);

struct PathAuditReport {
  std::size_t cases = 0;
  double max_envelope_violation = 0.0;  // |tilted CDF - envelope| over atoms
  double max_range_violation = 0.0;     // tilt values outside [ell, u]
  double max_normalization_error = 0.0;
  double max_order_violation = 0.0;     // monotonicity, endpoints, lower <= upper
};

/// Lower and upper threshold tilts on random Dirichlet bases with random (ell, u).
PathAuditReport run_path_audit(std::uint64_t seed, std::size_t n_cases);

// ---- data-generating processes ----

enum class DgpKind { FiniteAuditCells, RegularTiltDgp, ZeroInflatedDgp, PropensityStressDgp };

struct DgpSpec {
  DgpKind kind = DgpKind::RegularTiltDgp;
  std::size_t cells = 6;
  std::vector<double> source_weight;  // P^X_1 after the overlap mixture
  std::vector<double> target_weight;  // P^X_0
  std::vector<double> e1;             // P(A = 1 | R = 1, X = x)
  /// continuous component: truncated normal on [lo, hi]
  std::array<std::vector<double>, 2> mean;
  std::array<std::vector<double>, 2> sd;
  /// probability of an exact zero (zero-inflated kind only)
  std::array<std::vector<double>, 2> zero_prob;
  double lo = -4.5, hi = 4.5;
  std::size_t grid_size = 121;
  std::size_t dense_grid_size = 2001;
  SensitivityPair s0{1.0, 1.0};
  std::vector<int> propensity_groups;
  std::uint64_t seed = 0;

  /// Throws ConfigError when a field is out of its domain.
  void validate() const;
};

DgpSpec experiment2_spec();
DgpSpec experiment4_spec();
DgpSpec propensity_stress_spec();

/// A finite-support DGP on a threshold grid. Source arm laws are the
/// truncated (possibly zero-inflated) normals rounded up to the grid; the
/// target counterfactual laws are exact nested tilts at s0 (arm 1 lower,
/// arm 0 upper).
class Dgp {
 public:
  Dgp(DgpSpec spec, std::size_t grid_size);

  const DgpSpec& spec() const noexcept { return spec_; }
  const ThresholdGrid& grid() const noexcept { return truth_.grid; }
  /// True nuisances; e is not truncated.
  const NuisanceSet& truth() const noexcept { return truth_; }
  const std::vector<double>& source_masses(int a, std::size_t x) const;

  TwoSampleData sample(std::size_t n1, std::size_t n0, std::uint64_t seed) const;

  /// Oracle bound process computed through explicit tilts of the cell laws,
  /// independent of the closed-form envelope code.
  CdfBoundProcess oracle_process(const std::vector<SensitivityPair>& s_points) const;
  /// Target counterfactual CDF of arm a on the grid.
  std::vector<double> target_cdf(int a) const;
  std::vector<double> true_qte(const std::vector<double>& taus) const;

 private:
  DgpSpec spec_;
  NuisanceSet truth_;
  std::array<std::vector<std::vector<double>>, 2> mass_;    // [a][x][g]
  std::array<std::vector<std::vector<double>>, 2> target_;  // tilted target masses
};

Dgp gen_regular_dgp(const DgpSpec& spec);
Dgp gen_nonregular_dgp(const DgpSpec& spec);

// ---- studies ----

struct MetricRow {
  std::string experiment;
  std::size_t n1 = 0;
  std::size_t n0 = 0;
  std::string label;
  std::vector<std::pair<std::string, double>> values;

  double get(const std::string& key) const;
  void set(const std::string& key, double v);
};

struct MetricsReport {
  int replications = 0;
  std::uint64_t seed = 0;
  int failures = 0;
  bool failed = false;  // more than 5% of replications failed
  double elapsed_seconds = 0.0;
  std::vector<MetricRow> rows;
  std::vector<std::string> notes;

  const MetricRow* find(const std::string& experiment, std::size_t n1, const std::string& label) const;
};

struct StudyOptions {
  int experiment = 2;  // 1, 2, 4, or 10 for the propensity-stress ablation
  std::vector<std::size_t> sizes;  // n1 values; n0 = 1.5 n1
  int replications = 100;
  std::uint64_t seed = 20240607;
  int draws = 149;
  double alpha = 0.05;
  int folds = 5;
  double eta = 0.05;
  std::vector<double> taus = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> exponents = {0.6};  // subsampling m = floor(n^exponent)
  std::size_t audit_cases = 600;
  bool full = false;
};

/// Runs one experiment; deterministic given the options.
MetricsReport run_study(const StudyOptions& opt);

/// Mean over taus of Delta^+ - Delta^- on the DGP's grid.
double population_hull_width(const Dgp& dgp, const SensitivityPair& s, const std::vector<double>& taus);

double mc_standard_error(double p, int b);

}  // namespace qtb
