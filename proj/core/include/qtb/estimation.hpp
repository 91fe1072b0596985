#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qtb/bounds.hpp"
#include "qtb/envelope.hpp"
#include "qtb/nuisance.hpp"

namespace qtb {

/// Observed two-sample data O = (R, X, RA, RY). Target rows (r = 0) carry
/// a = -1 and y = NaN.
struct TwoSampleData {
  std::vector<int> r;
  std::vector<int> x;
  std::vector<int> a;
  std::vector<double> y;
  std::size_t n_cells = 0;

  std::size_t size() const noexcept { return r.size(); }
  std::size_t n0() const;
  std::size_t n1() const;

  void push_source(int cell, int arm, double outcome);
  void push_target(int cell);
  /// Throws SchemaError on inconsistent rows, EmptyArmError if a sample is empty.
  void validate() const;
  TwoSampleData subset(const std::vector<std::size_t>& rows) const;
};

struct NuisanceOptions {
  int k_folds = 5;
  double eta = 0.05;
  std::uint64_t seed = 0;
  /// Known-design mode when nonempty: e_1(x) per cell, chi = 0.
  std::vector<double> known_e1;
  /// Optional coarse propensity learner: cells sharing a group id share e.
  std::vector<int> propensity_groups;
};

/// Cross-fitted nuisances: folds[k] is trained on rows outside fold k.
struct CrossFitNuisance {
  std::vector<int> fold_of_row;
  std::vector<NuisanceSet> folds;
  NuisanceSet full;
  int chi = 1;
  std::vector<std::string> warnings;
};

CrossFitNuisance estimate_nuisances(const TwoSampleData& data, const ThresholdGrid& grid,
                                    const NuisanceOptions& opt);

/// Full-sample empirical cell proportions and source-arm CDFs, without
/// cross-fitting. Throws EmptyArmError if a target-supported cell-arm
/// stratum is empty.
NuisanceSet estimate_nuisances_full(const TwoSampleData& data, const ThresholdGrid& grid,
                                    const NuisanceOptions& opt);

/// Oracle "cross-fit" that uses the same nuisance set in every fold.
CrossFitNuisance fixed_nuisances(const TwoSampleData& data, const NuisanceSet& nuis, int chi);

double zeta_source_residual(int obs_a, double obs_y, std::size_t obs_x, const NuisanceSet& nuis,
                            int a, const SensitivityPair& s, Side side, std::size_t g, int chi);

enum class Variant { Full, PlugIn, NoGe, Point };

/// Per-observation influence values, row-major n_obs x n_index. Index order
/// follows CdfBoundProcess::index.
struct EifEvaluation {
  std::size_t n_obs = 0;
  std::size_t n_index = 0;
  std::vector<double> phi;
  std::vector<char> regular;
  int chi = 1;

  double at(std::size_t i, std::size_t k) const { return phi[i * n_index + k]; }
};

struct OneStepResult {
  CdfBoundProcess psi;
  EifEvaluation eif;
  std::size_t tie_pairs = 0;  // (fold, cell, index) pairs routed to plug-in
};

OneStepResult one_step_estimate(const TwoSampleData& data, const CrossFitNuisance& cf,
                                const std::vector<SensitivityPair>& s_points,
                                Variant variant = Variant::Full, bool want_phi = true);

CdfBoundProcess ablation_estimates(const TwoSampleData& data, const CrossFitNuisance& cf,
                                   const std::vector<SensitivityPair>& s_points, Variant variant);

/// Influence values of the plug-in process at one nuisance set; used by the
/// Wald comparator on the finite-support route.
EifEvaluation plug_in_eif(const TwoSampleData& data, const NuisanceSet& nuis,
                          const CdfBoundProcess& psi, int chi);

/// Population expected score E m(O; psi, nu) when data follow `truth` and
/// the score is evaluated at nuisances `nu`.
double expected_score(const NuisanceSet& truth, const NuisanceSet& nu, double psi_true, int a,
                      const SensitivityPair& s, Side side, std::size_t g, int chi);

}  // namespace qtb
