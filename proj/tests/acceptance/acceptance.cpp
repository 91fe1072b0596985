// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails. Tolerances are fixed below.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qtb/envelope.hpp"
#include "qtb/errors.hpp"
#include "qtb/lp.hpp"
#include "qtb/sim.hpp"

using namespace qtb;

namespace {

constexpr double kNonCollapseTol = 1e-12;
constexpr double kAuditTol = 1e-8;
constexpr double kStrictShareMin = 0.1;
constexpr double kPathEnvelopeTol = 1e-10;
constexpr double kPathNormTol = 1e-12;
constexpr double kCentralDiffTol = 1e-6;
constexpr double kDirectionalTol = 1e-5;
constexpr double kOrthoRatio = 4.0;
constexpr double kOrthoRelTol = 0.30;
constexpr double kExp2QteCoverMin = 0.95;
constexpr double kExp2CdfCoverLo = 0.89, kExp2CdfCoverHi = 1.00;
constexpr double kExp2UnderCoverMax = 0.10;
constexpr double kPopWidthTol = 0.05;
constexpr double kWaldGapMin = 0.2;
constexpr double kFrontierOuterMin = 0.90;
constexpr double kEifShareMin = 0.95;
constexpr double kAblationShareMin = 0.60;

constexpr std::uint64_t kSeed = 20240607;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---- 1 ----

Outcome noncollapse() {
  const SensitivityPair s(2.0, 1.5);
  const double nested = g_nested(0.7, 0.1, s, Side::Lower);
  const double product = product_relaxation(0.7, 0.1, s, Side::Lower);
  const double inter = c_envelope(0.7, 0.1, 2.0, Side::Lower);
  // hand values: C = max{0.55 * 0.7, 1 - 1.9 * 0.3} = 0.43, T = max{0.43 / 1.5, 1 - 1.5 * 0.57}
  const double want_nested = 0.43 / 1.5, want_product = 0.77 / 3.0, want_inter = 0.43;
  const double err = std::max({std::abs(nested - want_nested), std::abs(product - want_product),
                               std::abs(inter - want_inter)});
  std::ostringstream os;
  os.precision(15);
  os << "nested " << nested << " product " << product << " C- " << inter << " max err " << err;
  return {err <= kNonCollapseTol, os.str()};
}

// ---- 2 ----

Outcome lp_audit() {
  const auto cases = gen_audit_cells(kSeed, {2, 3, 5, 8, 12, 20}, 600);
  const AuditReport r = run_lp_audit(cases);
  std::ostringstream os;
  os << "cases " << r.cases << " max|cf-lp| lower " << r.max_discrepancy_lower << " upper "
     << r.max_discrepancy_upper << " dominance violations " << r.dominance_violations
     << " strict share (nontrivial) " << r.strict_share_nontrivial;
  const bool pass = r.cases >= 500 && r.max_discrepancy_lower < kAuditTol &&
                    r.max_discrepancy_upper < kAuditTol && r.dominance_violations == 0 &&
                    r.strict_share_nontrivial > kStrictShareMin;
  return {pass, os.str()};
}

// ---- 3 ----

Outcome path_audit() {
  const PathAuditReport r = run_path_audit(kSeed, 1000);
  std::ostringstream os;
  os << "cases " << r.cases << " envelope " << r.max_envelope_violation << " range "
     << r.max_range_violation << " normalization " << r.max_normalization_error << " order "
     << r.max_order_violation;
  const bool pass = r.cases == 1000 && r.max_envelope_violation <= kPathEnvelopeTol &&
                    r.max_range_violation <= kPathEnvelopeTol &&
                    r.max_normalization_error <= kPathNormTol && r.max_order_violation <= kPathEnvelopeTol;
  return {pass, os.str()};
}

// ---- 4 ----

Outcome reductions() {
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int mismatches = 0;
  double worst_formula = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double p = unif(rng), e = 0.01 + 0.98 * unif(rng);
    const double g = 1.0 + 7.0 * unif(rng), l = 1.0 + 7.0 * unif(rng);
    const double ell = e + (1.0 - e) / g, u = e + g * (1.0 - e);
    for (Side side : kSides) {
      const bool lo = side == Side::Lower;
      if (g_nested(p, e, SensitivityPair(1.0, 1.0), side) != p) ++mismatches;
      const double gl = g_nested(p, e, SensitivityPair(g, 1.0), side);
      const double lg = g_nested(p, e, SensitivityPair(1.0, l), side);
      if (gl != c_envelope(p, e, g, side)) ++mismatches;
      if (lg != t_envelope(p, l, side)) ++mismatches;
      // independent closed forms of the one-layer envelopes
      const double c = lo ? std::max(ell * p, 1.0 - u * (1.0 - p)) : std::min(u * p, 1.0 - ell * (1.0 - p));
      const double t = lo ? std::max(p / l, 1.0 - l * (1.0 - p)) : std::min(l * p, 1.0 - (1.0 - p) / l);
      worst_formula = std::max({worst_formula, std::abs(gl - c), std::abs(lg - t)});
    }
  }
  std::ostringstream os;
  os << "10000 inputs, exact mismatches " << mismatches << ", max deviation from closed forms "
     << worst_formula;
  return {mismatches == 0 && worst_formula <= 1e-15, os.str()};
}

// ---- 5 ----

Outcome derivatives() {
  std::mt19937_64 rng(kSeed + 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double h = 1e-6;
  double worst_c = 0.0;
  int checked = 0;
  while (checked < 1000) {
    const double p = 0.02 + 0.96 * unif(rng), e = 0.05 + 0.9 * unif(rng);
    const SensitivityPair s(1.0 + 5.0 * unif(rng), 1.0 + 3.0 * unif(rng));
    const Side side = rng() % 2 ? Side::Lower : Side::Upper;
    const auto br = classify_branches(p, e, s, side);
    if (std::abs(br.c_margin) < 1e-3 || std::abs(br.t_margin) < 1e-3) continue;
    const auto d = envelope_derivatives(p, e, s, side);
    const double fp = (g_nested(p + h, e, s, side) - g_nested(p - h, e, s, side)) / (2 * h);
    const double fe = (g_nested(p, e + h, s, side) - g_nested(p, e - h, s, side)) / (2 * h);
    worst_c = std::max({worst_c, std::abs(d.d_p - fp), std::abs(d.d_e - fe)});
    ++checked;
  }
  double worst_d = 0.0;
  const double t = 1e-8;
  for (int k = 0; k < 200; ++k) {
    const double gamma = 1.2 + 4.0 * unif(rng), lambda = 1.0 + 2.0 * unif(rng);
    const SensitivityPair s(gamma, lambda);
    const double e = 0.1 + 0.8 * unif(rng);
    const Side side = k % 2 ? Side::Lower : Side::Upper;
    const double p = side == Side::Lower ? gamma / (gamma + 1.0) : 1.0 / (gamma + 1.0);
    const double hp = 2.0 * unif(rng) - 1.0, he = 2.0 * unif(rng) - 1.0;
    const double fd = (g_nested(p + t * hp, e + t * he, s, side) - g_nested(p, e, s, side)) / t;
    worst_d = std::max(worst_d, std::abs(directional_derivative(p, e, s, side, hp, he) - fd));
  }
  std::ostringstream os;
  os << "central differences max err " << worst_c << " (1000 points), directional max err "
     << worst_d << " (200 tie points)";
  return {worst_c <= kCentralDiffTol && worst_d <= kDirectionalTol, os.str()};
}

// ---- 6 ----

// Nuisances moved along a fixed smooth direction: CDF values, propensities
// and the covariate density ratio all shift by O(t).
NuisanceSet perturbed(const NuisanceSet& truth, double t) {
  NuisanceSet nu = truth;
  const std::size_t ng = truth.grid.size();
  for (int a = 0; a < 2; ++a)
    for (std::size_t x = 0; x < truth.n_cells(); ++x)
      for (std::size_t g = 0; g < ng; ++g) {
        double& p = nu.p[a][x * ng + g];
        p += t * 0.5 * p * (1.0 - p) * std::cos(0.7 * static_cast<double>(x) + 1.3 * a + 0.4);
      }
  for (std::size_t x = 0; x < truth.n_cells(); ++x) {
    const double e1 = truth.e[1][x];
    nu.e[1][x] = e1 + t * 0.5 * e1 * (1.0 - e1) * std::sin(1.1 * static_cast<double>(x) + 0.3);
    nu.e[0][x] = 1.0 - nu.e[1][x];
    nu.cells.omega[x] *= 1.0 + 0.4 * t * std::cos(static_cast<double>(x));
  }
  return nu;
}

bool same_branches(const NuisanceSet& truth, const NuisanceSet& nu, int a, const SensitivityPair& s,
                   Side side, std::size_t g) {
  for (std::size_t x = 0; x < truth.n_cells(); ++x) {
    const auto b0 = classify_branches(truth.cdf(a, x, g), truth.e[a][x], s, side);
    const auto b1 = classify_branches(nu.cdf(a, x, g), nu.e[a][x], s, side);
    if (b0.c_branch != b1.c_branch || b0.t_branch != b1.t_branch) return false;
  }
  return true;
}

// Drift of the population score along the perturbation path, summed over
// index points whose active branches stay fixed along the whole path. Points
// that cross a switch surface are nonregular and are counted separately.
Outcome orthogonality() {
  const DgpSpec spec = experiment2_spec();
  const Dgp dgp = gen_regular_dgp(spec);
  const NuisanceSet& truth = dgp.truth();
  const std::vector<SensitivityPair> s_points = {spec.s0, SensitivityPair(2.2, 1.8)};
  const CdfBoundProcess oracle = dgp.oracle_process(s_points);
  const double ts[3] = {0.1, 0.05, 0.025};
  const NuisanceSet nus[3] = {perturbed(truth, ts[0]), perturbed(truth, ts[1]), perturbed(truth, ts[2])};
  double drift[3] = {0, 0, 0}, plug[3] = {0, 0, 0};
  int kept = 0, crossing = 0;
  for (std::size_t si = 0; si < s_points.size(); ++si)
    for (int a = 0; a < 2; ++a)
      for (Side side : kSides)
        for (std::size_t g : {45, 55, 65, 75}) {
          bool regular = true;
          for (const auto& nu : nus) regular = regular && same_branches(truth, nu, a, s_points[si], side, g);
          if (!regular) {
            ++crossing;
            continue;
          }
          ++kept;
          const double psi = oracle.at(a, side, si, g);
          for (int k = 0; k < 3; ++k) {
            drift[k] += std::abs(expected_score(truth, nus[k], psi, a, s_points[si], side, g, 1));
            double pl = 0.0;
            for (std::size_t x = 0; x < truth.n_cells(); ++x)
              pl += truth.cells.target_weight[x] *
                    (g_nested(nus[k].cdf(a, x, g), nus[k].e[a][x], s_points[si], side) - psi);
            plug[k] += std::abs(pl);
          }
        }
  const double r1 = drift[0] / drift[1], r2 = drift[1] / drift[2];
  const double lo = kOrthoRatio * (1.0 - kOrthoRelTol), hi = kOrthoRatio * (1.0 + kOrthoRelTol);
  std::ostringstream os;
  os << "score drift ratios " << r1 << ", " << r2 << " over " << kept << " points (" << crossing
     << " switch-crossing points excluded); plug-in score ratios " << plug[0] / plug[1] << ", "
     << plug[1] / plug[2];
  return {kept >= 16 && r1 >= lo && r1 <= hi && r2 >= lo && r2 <= hi, os.str()};
}

// ---- 7 and 9 ----

const MetricsReport& exp2_report() {
  static const MetricsReport rep = [] {
    StudyOptions opt;
    opt.experiment = 2;
    opt.sizes = {1600};
    opt.replications = 100;
    opt.draws = 149;
    opt.seed = kSeed;
    return run_study(opt);
  }();
  return rep;
}

Outcome experiment2() {
  const MetricsReport& rep = exp2_report();
  const MetricRow* tr = rep.find("2", 1600, "true");
  const MetricRow* un = rep.find("2", 1600, "underspecified");
  const MetricRow* ov = rep.find("2", 1600, "overspecified");
  if (!tr || !un || !ov) return {false, "study rows missing"};
  const double qc = tr->get("qte_cover"), cc = tr->get("cdf_cover"), uc = un->get("qte_cover");
  const double w[3] = {un->get("pop_width"), tr->get("pop_width"), ov->get("pop_width")};
  const double target[3] = {0.465, 1.579, 2.689};
  bool widths = true;
  for (int k = 0; k < 3; ++k) widths = widths && std::abs(w[k] - target[k]) <= kPopWidthTol;
  std::ostringstream os;
  os << "B " << rep.replications << " failures " << rep.failures << "; true-s QTE cover " << qc
     << ", CDF cover " << cc << "; underspecified QTE cover " << uc << "; pop widths " << w[0] << " / "
     << w[1] << " / " << w[2];
  const bool pass = !rep.failed && qc >= kExp2QteCoverMin && cc >= kExp2CdfCoverLo &&
                    cc <= kExp2CdfCoverHi && uc <= kExp2UnderCoverMax && widths;
  return {pass, os.str()};
}

Outcome eif_mean_zero() {
  const MetricsReport& rep = exp2_report();
  const MetricRow* tr = rep.find("2", 1600, "true");
  if (!tr) return {false, "study row missing"};
  const double share = tr->get("eif_mean_zero_min_share");
  const double oracle = tr->get("oracle_eif_mean_zero_min_share");
  std::ostringstream os;
  os << "worst-index share of replications passing " << share
     << " (oracle-nuisance diagnostic " << oracle << ")";
  return {share >= kEifShareMin, os.str()};
}

// ---- 8 ----

Outcome experiment4() {
  StudyOptions opt;
  opt.experiment = 4;
  opt.sizes = {500, 1000, 2000};
  opt.replications = 100;
  opt.draws = 99;
  opt.seed = kSeed;
  opt.exponents = {0.6};
  const MetricsReport rep = run_study(opt);
  const std::string sub = "subsample m=n^0.6";
  const MetricRow* band = rep.find("4", 1000, sub);
  const MetricRow* wald = rep.find("4", 1000, "wald");
  if (!band || !wald) return {false, "study rows missing"};
  double hd[3];
  const std::size_t sizes[3] = {500, 1000, 2000};
  for (int k = 0; k < 3; ++k) {
    const MetricRow* r = rep.find("4", sizes[k], sub);
    hd[k] = r ? r->get("hausdorff") : std::nan("");
  }
  const double bc = band->get("qte_cover"), wc = wald->get("qte_cover");
  const double fo = band->get("frontier_outer");
  const bool monotone = hd[1] <= hd[0] && hd[2] <= hd[1];
  std::ostringstream os;
  os << "n1=1000: band QTE cover " << bc << ", Wald cover " << wc << ", frontier outer cover " << fo
     << "; Hausdorff " << hd[0] << " / " << hd[1] << " / " << hd[2];
  const bool pass = !rep.failed && bc - wc >= kWaldGapMin && fo >= kFrontierOuterMin && monotone;
  return {pass, os.str()};
}

// ---- 10 ----

Outcome ablation() {
  StudyOptions opt;
  opt.experiment = 10;
  opt.replications = 100;
  opt.seed = kSeed;
  const MetricsReport rep = run_study(opt);
  const MetricRow* noge = nullptr;
  const MetricRow* dml = nullptr;
  for (const auto& r : rep.rows) {
    if (r.label == "No-Ge") noge = &r;
    if (r.label == "DML") dml = &r;
  }
  if (!noge || !dml) return {false, "study rows missing"};
  const double share = noge->get("noge_ge_dml_share");
  std::ostringstream os;
  os << "n1 " << noge->n1 << ", share NoGe RMSE >= DML RMSE " << share << "; RMSE DML "
     << dml->get("endpoint_rmse") << ", NoGe " << noge->get("endpoint_rmse");
  return {!rep.failed && share >= kAblationShareMin, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, noncollapse},   {2, lp_audit},   {3, path_audit},   {4, reductions},
      {5, derivatives},   {6, orthogonality}, {7, experiment2}, {8, experiment4},
      {9, eif_mean_zero}, {10, ablation}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2d %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
