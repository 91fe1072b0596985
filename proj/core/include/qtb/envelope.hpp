#pragma once

// Primitive sensitivity maps for the joint (Gamma, Lambda) model.
//
// The source layer bounds the inverse treatment-selection likelihood ratio by
// [ell_Gamma(e), u_Gamma(e)]; the transport layer bounds the target/source
// likelihood ratio by [1/Lambda, Lambda]. Applied to a binary event of
// probability p, each layer maps p to an interval whose endpoints are the
// max/min of two affine pieces. The nested endpoint map composes the two.

#include <utility>

namespace qtb {

inline constexpr double kTieTolerance = 1e-10;
inline constexpr double kUnitTolerance = 1e-12;

/// s = (Gamma, Lambda); both >= 1.
class SensitivityPair {
 public:
  SensitivityPair(double gamma, double lambda);

  double gamma() const noexcept { return gamma_; }
  double lambda() const noexcept { return lambda_; }

  friend bool operator==(const SensitivityPair&, const SensitivityPair&) = default;

 private:
  double gamma_;
  double lambda_;
};

/// A probability in [0, 1]. Values within 1e-12 outside are clamped.
class UnitProb {
 public:
  UnitProb(double v);  // NOLINT(google-explicit-constructor)
  double value() const noexcept { return v_; }
  operator double() const noexcept { return v_; }  // NOLINT

 private:
  double v_;
};

enum class Side { Lower, Upper };

inline constexpr Side kSides[2] = {Side::Lower, Side::Upper};

inline int side_index(Side s) noexcept { return s == Side::Lower ? 0 : 1; }

enum class Branch { Piece1, Piece2, Tie };

struct ActiveBranches {
  Branch c_branch;
  Branch t_branch;
  double c_margin;
  double t_margin;
};

struct EnvelopeDerivatives {
  double d_p;
  double d_e;
};

/// (ell_Gamma(e), u_Gamma(e)) = (e + (1-e)/Gamma, e + Gamma (1-e)).
std::pair<double, double> ell_u_gamma(UnitProb e, double gamma);

double c_envelope(UnitProb p, UnitProb e, double gamma, Side side);
double t_envelope(UnitProb q, double lambda, Side side);

/// Nested endpoint map T^side_Lambda(C^side_Gamma(p, e)).
double g_nested(UnitProb p, UnitProb e, const SensitivityPair& s, Side side);

/// Single product-tilt comparator with bounds [ell/Lambda, u*Lambda].
double product_relaxation(UnitProb p, UnitProb e, const SensitivityPair& s, Side side);

ActiveBranches classify_branches(UnitProb p, UnitProb e, const SensitivityPair& s,
                                 Side side);

/// Partial derivatives of g_nested in (p, e). Throws TieError when either
/// non-degenerate layer sits on a switch surface. A layer with Gamma == 1 or
/// Lambda == 1 is the identity and never ties.
EnvelopeDerivatives envelope_derivatives(UnitProb p, UnitProb e, const SensitivityPair& s,
                                         Side side);

/// Hadamard directional derivative of g_nested in direction (h_p, h_e).
double directional_derivative(UnitProb p, UnitProb e, const SensitivityPair& s, Side side,
                              double h_p, double h_e);

}  // namespace qtb
