#include "qtb/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qtb/errors.hpp"

namespace qtb {

SensitivityPair::SensitivityPair(double gamma, double lambda) : gamma_(gamma), lambda_(lambda) {
  if (!(gamma >= 1.0) || !(lambda >= 1.0) || !std::isfinite(gamma) || !std::isfinite(lambda)) {
    std::ostringstream os;
    os << "sensitivity pair requires finite gamma >= 1 and lambda >= 1, got (" << gamma << ", "
       << lambda << ")";
    throw DomainError(os.str());
  }
}

UnitProb::UnitProb(double v) {
  if (!(v >= -kUnitTolerance && v <= 1.0 + kUnitTolerance)) {
    std::ostringstream os;
    os << "probability " << v << " outside [0, 1]";
    throw DomainError(os.str());
  }
  v_ = std::clamp(v, 0.0, 1.0);
}

namespace {

// The two affine pieces of each layer, in the order used by the active-set
// notation: piece 1 is the "ratio times p" term, piece 2 the complement term.
struct Pieces {
  double first;
  double second;
};

Pieces c_pieces(double p, double ell, double u, Side side) {
  if (side == Side::Lower) return {ell * p, 1.0 - u * (1.0 - p)};
  return {u * p, 1.0 - ell * (1.0 - p)};
}

Pieces t_pieces(double q, double lambda, Side side) {
  if (side == Side::Lower) return {q / lambda, 1.0 - lambda * (1.0 - q)};
  return {lambda * q, 1.0 - (1.0 - q) / lambda};
}

double pick(const Pieces& pc, Side side) {
  return side == Side::Lower ? std::max(pc.first, pc.second) : std::min(pc.first, pc.second);
}

Branch active(const Pieces& pc, Side side, double& margin) {
  margin = std::abs(pc.first - pc.second);
  if (margin <= kTieTolerance) return Branch::Tie;
  const bool first_wins = side == Side::Lower ? pc.first > pc.second : pc.first < pc.second;
  return first_wins ? Branch::Piece1 : Branch::Piece2;
}

// (d/dp, d/de) of the C-layer pieces; dell/de = 1 - 1/Gamma, du/de = 1 - Gamma.
struct Partials {
  double dp;
  double de;
};

Partials c_partials(int piece, double p, double ell, double u, double gamma, Side side) {
  const double dell = 1.0 - 1.0 / gamma;
  const double du = 1.0 - gamma;
  if (side == Side::Lower) {
    if (piece == 1) return {ell, dell * p};
    return {u, -du * (1.0 - p)};
  }
  if (piece == 1) return {u, du * p};
  return {ell, -dell * (1.0 - p)};
}

double t_slope(int piece, double lambda, Side side) {
  if (side == Side::Lower) return piece == 1 ? 1.0 / lambda : lambda;
  return piece == 1 ? lambda : 1.0 / lambda;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::pair<double, double> ell_u_gamma(UnitProb e, double gamma) {
  if (!(gamma >= 1.0)) throw DomainError("gamma must be >= 1");
  if (gamma == 1.0) return {1.0, 1.0};
  const double ev = e.value();
  return {ev + (1.0 - ev) / gamma, ev + gamma * (1.0 - ev)};
}

double c_envelope(UnitProb p, UnitProb e, double gamma, Side side) {
  // identity layer, returned exactly rather than through the rounded pieces
  if (gamma == 1.0) return p.value();
  const auto [ell, u] = ell_u_gamma(e, gamma);
  return clamp01(pick(c_pieces(p, ell, u, side), side));
}

double t_envelope(UnitProb q, double lambda, Side side) {
  if (!(lambda >= 1.0)) throw DomainError("lambda must be >= 1");
  if (lambda == 1.0) return q.value();
  return clamp01(pick(t_pieces(q, lambda, side), side));
}

double g_nested(UnitProb p, UnitProb e, const SensitivityPair& s, Side side) {
  return t_envelope(c_envelope(p, e, s.gamma(), side), s.lambda(), side);
}

double product_relaxation(UnitProb p, UnitProb e, const SensitivityPair& s, Side side) {
  const auto [ell, u] = ell_u_gamma(e, s.gamma());
  const double lam = s.lambda();
  const double pv = p.value();
  if (side == Side::Lower) return clamp01(std::max(ell * pv / lam, 1.0 - u * lam * (1.0 - pv)));
  return clamp01(std::min(u * lam * pv, 1.0 - ell * (1.0 - pv) / lam));
}

ActiveBranches classify_branches(UnitProb p, UnitProb e, const SensitivityPair& s, Side side) {
  const auto [ell, u] = ell_u_gamma(e, s.gamma());
  ActiveBranches out{};
  const Pieces cp = c_pieces(p, ell, u, side);
  out.c_branch = active(cp, side, out.c_margin);
  const double q = clamp01(pick(cp, side));
  out.t_branch = active(t_pieces(q, s.lambda(), side), side, out.t_margin);
  return out;
}

EnvelopeDerivatives envelope_derivatives(UnitProb p, UnitProb e, const SensitivityPair& s,
                                         Side side) {
  const double gamma = s.gamma();
  const double lambda = s.lambda();
  const auto [ell, u] = ell_u_gamma(e, gamma);
  const ActiveBranches br = classify_branches(p, e, s, side);

  Partials inner{1.0, 0.0};
  if (gamma > 1.0) {
    if (br.c_branch == Branch::Tie) throw TieError("source layer on a switch surface");
    inner = c_partials(br.c_branch == Branch::Piece1 ? 1 : 2, p, ell, u, gamma, side);
  }
  double slope = 1.0;
  if (lambda > 1.0) {
    if (br.t_branch == Branch::Tie) throw TieError("transport layer on a switch surface");
    slope = t_slope(br.t_branch == Branch::Piece1 ? 1 : 2, lambda, side);
  }
  return {slope * inner.dp, slope * inner.de};
}

double directional_derivative(UnitProb p, UnitProb e, const SensitivityPair& s, Side side,
                              double h_p, double h_e) {
  const double gamma = s.gamma();
  const double lambda = s.lambda();
  const auto [ell, u] = ell_u_gamma(e, gamma);
  const ActiveBranches br = classify_branches(p, e, s, side);
  const bool lower = side == Side::Lower;

  auto combine = [lower](double a, double b) { return lower ? std::max(a, b) : std::min(a, b); };

  double inner = h_p;
  if (gamma > 1.0) {
    auto lin = [&](int piece) {
      const Partials d = c_partials(piece, p, ell, u, gamma, side);
      return d.dp * h_p + d.de * h_e;
    };
    switch (br.c_branch) {
      case Branch::Piece1: inner = lin(1); break;
      case Branch::Piece2: inner = lin(2); break;
      case Branch::Tie: inner = combine(lin(1), lin(2)); break;
    }
  }
  if (lambda <= 1.0) return inner;
  switch (br.t_branch) {
    case Branch::Piece1: return t_slope(1, lambda, side) * inner;
    case Branch::Piece2: return t_slope(2, lambda, side) * inner;
    case Branch::Tie: break;
  }
  return combine(t_slope(1, lambda, side) * inner, t_slope(2, lambda, side) * inner);
}

}  // namespace qtb
