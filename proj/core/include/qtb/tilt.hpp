#pragma once

// Least-favorable threshold tilts. A lower tilt takes the value ell below a
// threshold atom and u above it; the upper tilt is the mirror image. One tilt
// attains the envelope CDF at every threshold simultaneously.

#include <optional>
#include <utility>
#include <vector>

#include "qtb/envelope.hpp"
#include "qtb/lp.hpp"

namespace qtb {

struct ThresholdTilt {
  double threshold_prob = 0.0;
  std::optional<std::size_t> threshold_atom_index;
  double below_value = 1.0;
  double above_value = 1.0;
  std::optional<double> atom_value;
  std::vector<double> values;  // Radon-Nikodym value per atom
};

/// Tilt of a raw mass vector (zeros allowed, sum one). Used directly by the
/// grid-based simulators; the FiniteDist overloads wrap it.
ThresholdTilt threshold_tilt(const std::vector<double>& masses, double ell, double u, Side side);

/// Masses of the tilted law, values[k] * masses[k].
std::vector<double> apply_tilt(const std::vector<double>& masses, const ThresholdTilt& tilt);

std::pair<ThresholdTilt, FiniteDist> lower_tilt(const FiniteDist& base, double ell, double u);
std::pair<ThresholdTilt, FiniteDist> upper_tilt(const FiniteDist& base, double ell, double u);

/// Source tilt with (ell_Gamma(e), u_Gamma(e)) followed by a transport tilt
/// with (1/Lambda, Lambda), both on the given side.
std::vector<double> nested_exact_tilt(const std::vector<double>& masses, UnitProb e,
                                      const SensitivityPair& s, Side side);
FiniteDist nested_exact_tilt(const FiniteDist& base, UnitProb e, const SensitivityPair& s,
                             Side side);

}  // namespace qtb
