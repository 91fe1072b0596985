#include "qtb/tilt.hpp"

#include <algorithm>
#include <cmath>

#include "qtb/errors.hpp"

namespace qtb {

ThresholdTilt threshold_tilt(const std::vector<double>& masses, double ell, double u, Side side) {
  if (!(ell > 0.0) || ell > 1.0 + 1e-15 || u < 1.0 - 1e-15)
    throw DomainError("tilt bounds need 0 < ell <= 1 <= u");
  if (masses.empty()) throw DomainError("tilt of an empty distribution");
  double total = 0.0;
  for (double m : masses) {
    if (m < 0.0) throw DomainError("negative mass in tilt base");
    total += m;
  }
  if (!(total > 0.0)) throw DomainError("tilt base has zero total mass");

  ThresholdTilt tilt;
  const std::size_t k = masses.size();
  if (u - ell <= 1e-15) {
    tilt.values.assign(k, 1.0);
    return tilt;
  }

  const bool lower = side == Side::Lower;
  const double below = lower ? ell : u;
  const double above = lower ? u : ell;
  const double r = lower ? (u - 1.0) / (u - ell) : (1.0 - ell) / (u - ell);
  tilt.threshold_prob = r;
  tilt.below_value = below;
  tilt.above_value = above;

  // generalized inverse: smallest index with cumulative mass >= r
  std::size_t idx = k - 1;
  double f_prev = 0.0, f = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    f = f_prev + masses[j];
    if (j + 1 == k) f = 1.0;
    if (f >= r) {
      idx = j;
      break;
    }
    f_prev = f;
  }
  double h = 1.0;
  if (masses[idx] > 0.0) {
    h = (1.0 - below * f_prev - above * (1.0 - f)) / masses[idx];
    h = std::clamp(h, ell, u);
  }
  tilt.threshold_atom_index = idx;
  tilt.atom_value = h;
  tilt.values.resize(k);
  for (std::size_t j = 0; j < k; ++j) tilt.values[j] = j < idx ? below : (j > idx ? above : h);
  return tilt;
}

std::vector<double> apply_tilt(const std::vector<double>& masses, const ThresholdTilt& tilt) {
  std::vector<double> out(masses.size());
  for (std::size_t j = 0; j < masses.size(); ++j) out[j] = masses[j] * tilt.values[j];
  return out;
}

namespace {

std::pair<ThresholdTilt, FiniteDist> tilt_dist(const FiniteDist& base, double ell, double u,
                                               Side side) {
  ThresholdTilt t = threshold_tilt(base.masses(), ell, u, side);
  std::vector<double> m = apply_tilt(base.masses(), t);
  // absorb rounding so the constructor's normalization check holds
  double total = 0.0;
  for (double v : m) total += v;
  for (double& v : m) v /= total;
  return {std::move(t), FiniteDist(base.atoms(), std::move(m))};
}

}  // namespace

std::pair<ThresholdTilt, FiniteDist> lower_tilt(const FiniteDist& base, double ell, double u) {
  return tilt_dist(base, ell, u, Side::Lower);
}

std::pair<ThresholdTilt, FiniteDist> upper_tilt(const FiniteDist& base, double ell, double u) {
  return tilt_dist(base, ell, u, Side::Upper);
}

std::vector<double> nested_exact_tilt(const std::vector<double>& masses, UnitProb e,
                                      const SensitivityPair& s, Side side) {
  const auto [ell, u] = ell_u_gamma(e, s.gamma());
  const std::vector<double> q = apply_tilt(masses, threshold_tilt(masses, ell, u, side));
  const double lam = s.lambda();
  return apply_tilt(q, threshold_tilt(q, 1.0 / lam, lam, side));
}

FiniteDist nested_exact_tilt(const FiniteDist& base, UnitProb e, const SensitivityPair& s,
                             Side side) {
  std::vector<double> m = nested_exact_tilt(base.masses(), e, s, side);
  double total = 0.0;
  for (double v : m) total += v;
  for (double& v : m) v /= total;
  return FiniteDist(base.atoms(), std::move(m));
}

}  // namespace qtb
