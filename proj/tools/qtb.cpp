#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qtb/errors.hpp"
#include "qtb/io.hpp"
#include "qtb/parallel.hpp"
#include "qtb/sim.hpp"

using nlohmann::json;

namespace {

constexpr int kUsageExit = 2;

struct DataArgs {
  std::string input;
  std::string schema;
};

// Shared estimation flags for estimate and frontier.
struct EstimateArgs {
  DataArgs data;
  std::string config;
  std::vector<double> gammas{1.0};
  std::vector<double> lambdas{1.0};
  std::vector<double> taus;
  int folds = 5;
  double eta = 0.05;
  std::string design = "observational";
  std::size_t grid_size = 121;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  std::string method = "multiplier";
  int draws = 149;
  std::string out;
};

std::vector<qtb::SensitivityPair> make_pairs(const std::vector<double>& g, const std::vector<double>& l) {
  std::vector<qtb::SensitivityPair> s;
  if (g.size() == l.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) s.emplace_back(g[i], l[i]);
  } else if (g.size() == 1) {
    for (double v : l) s.emplace_back(g[0], v);
  } else if (l.size() == 1) {
    for (double v : g) s.emplace_back(v, l[0]);
  } else {
    throw qtb::ConfigError("--gamma and --lambda lists must have equal length or one of them a single value");
  }
  return s;
}

qtb::SchemaConfig schema_or_default(const std::string& path) {
  return path.empty() ? qtb::SchemaConfig{} : qtb::load_schema(path);
}

// Writes to <prefix><suffix>, or to stdout when no prefix was given and
// to_stdout is set.
void emit(const std::string& prefix, const std::string& suffix, const std::string& text, bool to_stdout) {
  if (!prefix.empty())
    qtb::write_text(prefix + suffix, text);
  else if (to_stdout)
    std::cout << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void add_data_flags(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--input", d.input, "CSV with r, a, y and covariate columns")->check(CLI::ExistingFile);
  cmd->add_option("--schema", d.schema, "JSON schema naming the columns")->check(CLI::ExistingFile);
}

qtb::AnalysisConfig build_config(const EstimateArgs& a, const CLI::App* cmd) {
  qtb::AnalysisConfig c = a.config.empty() ? qtb::AnalysisConfig{} : qtb::load_config(a.config);
  auto given = [&](const char* flag) { return cmd->count(flag) > 0; };
  if (given("--gamma") || given("--lambda") || a.config.empty()) c.sensitivity = make_pairs(a.gammas, a.lambdas);
  if (given("--tau-list")) c.taus = a.taus;
  if (given("--folds") || a.config.empty()) c.folds = a.folds;
  if (given("--eta") || a.config.empty()) c.eta = a.eta;
  if (given("--grid-size") || a.config.empty()) c.grid_size = a.grid_size;
  if (given("--seed") || a.config.empty()) c.seed = a.seed;
  if (given("--alpha") || a.config.empty()) c.alpha = a.alpha;
  if (given("--draws") || a.config.empty()) c.draws = a.draws;
  if (given("--method") || a.config.empty()) c.method = a.method;
  if (given("--design") || a.config.empty()) {
    const std::string known = "known:";
    if (a.design == "observational") {
      c.design = "observational";
      c.e_table.clear();
    } else if (a.design.rfind(known, 0) == 0) {
      c.design = "known";
      c.e_table = a.design.substr(known.size());
    } else {
      throw qtb::ConfigError("--design must be observational or known:<path>");
    }
  }
  c.validate();
  return c;
}

int run_bounds(const DataArgs& d, const std::string& nuisance, const std::vector<double>& g,
               const std::vector<double>& l, const std::vector<double>& taus, std::size_t grid_size,
               const std::string& out) {
  qtb::NuisanceSet nu;
  std::vector<std::string> warnings;
  if (!nuisance.empty()) {
    std::ifstream in(nuisance);
    if (!in) throw qtb::ConfigError("cannot open nuisance file " + nuisance);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw qtb::SchemaError(std::string("nuisance file is not valid JSON: ") + e.what());
    }
    nu = qtb::nuisance_from_json(j);
  } else if (!d.input.empty()) {
    auto ing = qtb::ingest_csv(d.input, schema_or_default(d.schema));
    warnings = ing.warnings;
    const auto grid = qtb::grid_from_data(ing.data, grid_size);
    nu = qtb::estimate_nuisances_full(ing.data, grid, qtb::NuisanceOptions{});
  } else {
    throw qtb::ConfigError("bounds needs --nuisance or --input");
  }
  const auto s = make_pairs(g, l);
  const auto proc = qtb::marginal_cdf_bounds(nu, s);
  std::vector<qtb::QteRow> rows;
  for (std::size_t k = 0; k < s.size(); ++k)
    for (double tau : taus) {
      qtb::QteRow r;
      r.tau = tau;
      r.s = k;
      r.hull = qtb::qte_hull(proc, tau, k);
      r.band_lo = r.band_hi = std::numeric_limits<double>::quiet_NaN();
      rows.push_back(r);
    }
  json hulls = qtb::hulls_to_json(rows, s);
  hulls["warnings"] = warnings;
  std::ostringstream csv;
  qtb::write_psi_csv(csv, proc);
  emit(out, "_psi.csv", csv.str(), false);
  emit(out, "_hulls.json", dump(hulls), true);
  return 0;
}

int run_estimate(const EstimateArgs& a, const CLI::App* cmd, bool with_frontier, const qtb::FrontierConfig& fc) {
  if (a.data.input.empty()) throw qtb::ConfigError("--input is required");
  qtb::AnalysisConfig c = build_config(a, cmd);
  if (with_frontier) c.frontier = fc;
  if (!with_frontier) c.store_phi = true;
  auto ing = qtb::ingest_csv(a.data.input, schema_or_default(a.data.schema));
  std::vector<double> e1;
  if (c.design == "known") e1 = qtb::load_e_table(c.e_table, ing.cell_labels);
  qtb::ResultBundle b = qtb::run_pipeline(c, ing.data, e1);
  b.warnings.insert(b.warnings.begin(), ing.warnings.begin(), ing.warnings.end());
  for (const auto& w : b.warnings) std::cerr << "warning: " << w << '\n';

  if (with_frontier) {
    std::ostringstream csv;
    qtb::write_frontier_csv(csv, *b.frontier);
    emit(a.out, "_frontier.csv", csv.str(), true);
    json z = {{"format_version", qtb::kFormatVersion},
              {"tau", fc.tau},
              {"config_hash", b.config_hash},
              {"zero_level", qtb::zero_level_to_json(b.zero_level)}};
    emit(a.out, "_zero_level.json", dump(z), false);
    return 0;
  }
  std::ostringstream psi, phi;
  qtb::write_psi_csv(psi, b.psi);
  emit(a.out, "_psi.csv", psi.str(), false);
  if (b.phi) {
    qtb::write_phi_csv(phi, *b.phi);
    emit(a.out, "_phi.csv", phi.str(), false);
  }
  emit(a.out, "_hulls.json", dump(qtb::hulls_to_json(b.qte, c.sensitivity)), true);
  emit(a.out, "_bundle.json", dump(qtb::bundle_to_json(b)), false);
  return 0;
}

int run_audit(std::size_t cases, const std::vector<int>& supports, std::uint64_t seed, const std::string& out) {
  const auto ac = qtb::gen_audit_cells(seed, supports, cases);
  const auto rep = qtb::run_lp_audit(ac);
  json j = qtb::audit_to_json(rep);
  j["seed"] = seed;
  j["supports"] = supports;
  emit(out, "_audit.json", dump(j), true);
  return 0;
}

int run_simulate(qtb::StudyOptions opt, const std::string& out) {
  const auto rep = qtb::run_study(opt);
  std::ostringstream csv;
  qtb::write_metrics_csv(csv, rep);
  emit(out, "_metrics.csv", csv.str(), false);
  emit(out, "_metrics.json", dump(qtb::metrics_to_json(rep)), true);
  if (rep.failed) {
    std::cerr << "error: more than 5% of replications failed (" << rep.failures << ")\n";
    return static_cast<int>(qtb::ErrorFamily::Estimation);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qtb: sensitivity bounds for transported quantile treatment effects"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(qtb::library_version()));

  // bounds
  auto* bounds = app.add_subcommand("bounds", "plug-in CDF bounds and QTE hulls");
  DataArgs b_data;
  std::string b_nuis, b_out;
  std::vector<double> b_g{1.0}, b_l{1.0}, b_tau{0.5};
  std::size_t b_grid = 121;
  add_data_flags(bounds, b_data);
  bounds->add_option("--nuisance", b_nuis, "nuisance JSON (grid, weights, e1, p)")->check(CLI::ExistingFile);
  bounds->add_option("--gamma", b_g, "Gamma values")->delimiter(',');
  bounds->add_option("--lambda", b_l, "Lambda values")->delimiter(',');
  bounds->add_option("--tau-list,--tau", b_tau, "quantile levels")->delimiter(',');
  bounds->add_option("--grid-size", b_grid, "threshold grid size for CSV input");
  bounds->add_option("--out", b_out, "output prefix");

  // estimate and frontier share flags
  EstimateArgs e_args, f_args;
  auto add_estimate_flags = [](CLI::App* cmd, EstimateArgs& a) {
    add_data_flags(cmd, a.data);
    cmd->add_option("--config", a.config, "analysis config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--gamma", a.gammas, "Gamma values")->delimiter(',');
    cmd->add_option("--lambda", a.lambdas, "Lambda values")->delimiter(',');
    cmd->add_option("--tau-list", a.taus, "quantile levels")->delimiter(',');
    cmd->add_option("--folds", a.folds, "cross-fitting folds");
    cmd->add_option("--eta", a.eta, "propensity truncation");
    cmd->add_option("--design", a.design, "observational or known:<e-table.csv>");
    cmd->add_option("--grid-size", a.grid_size, "threshold grid size");
    cmd->add_option("--seed", a.seed, "root seed");
    cmd->add_option("--alpha", a.alpha, "level");
    cmd->add_option("--draws", a.draws, "bootstrap or subsample draws");
    cmd->add_option("--out", a.out, "output prefix");
  };
  auto* estimate = app.add_subcommand("estimate", "cross-fitted one-step bounds with inference");
  add_estimate_flags(estimate, e_args);
  estimate->add_option("--method", e_args.method, "multiplier or subsample:<exponent>");

  auto* frontier = app.add_subcommand("frontier", "breakdown frontier scan with confidence sets");
  add_estimate_flags(frontier, f_args);
  qtb::FrontierConfig fc;
  std::vector<double> rect{1.0, 4.0, 1.0, 3.0};
  std::vector<std::size_t> mesh{31, 31};
  frontier->add_option("--tau", fc.tau, "quantile level");
  frontier->add_option("--method", fc.method, "multiplier or subsample:<exponent>");
  frontier->add_option("--s-rect", rect, "gamma_lo,gamma_hi,lambda_lo,lambda_hi")->delimiter(',')->expected(4);
  frontier->add_option("--mesh", mesh, "n_gamma,n_lambda")->delimiter(',')->expected(2);

  // audit
  auto* audit = app.add_subcommand("audit", "closed form versus LP on random finite supports");
  std::size_t a_cases = 600;
  std::vector<int> a_supports{2, 3, 5, 8, 12, 20};
  std::uint64_t a_seed = 1;
  std::string a_out;
  audit->add_option("--cases", a_cases, "number of cases");
  audit->add_option("--supports", a_supports, "support sizes")->delimiter(',');
  audit->add_option("--seed", a_seed, "seed");
  audit->add_option("--out", a_out, "output prefix");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo studies");
  qtb::StudyOptions so;
  so.draws = 99;
  std::string s_out;
  simulate->add_option("--experiment", so.experiment, "1, 2, 4, or 10 (propensity-stress ablation)")
      ->check(CLI::IsMember({1, 2, 4, 10}));
  simulate->add_option("--b", so.replications, "replications");
  simulate->add_option("--sizes", so.sizes, "n1 values")->delimiter(',');
  simulate->add_option("--seed", so.seed, "root seed");
  simulate->add_option("--draws", so.draws, "resampling draws");
  simulate->add_option("--exponents", so.exponents, "subsampling exponents")->delimiter(',');
  simulate->add_flag("--full", so.full, "full-scale replications and draws (hours)");
  simulate->add_option("--out", s_out, "output prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageExit;
  }

  try {
    if (*bounds) return run_bounds(b_data, b_nuis, b_g, b_l, b_tau, b_grid, b_out);
    if (*estimate) return run_estimate(e_args, estimate, false, fc);
    if (*frontier) {
      fc.rect = qtb::SRect{rect[0], rect[1], rect[2], rect[3]};
      fc.n_gamma = mesh[0];
      fc.n_lambda = mesh[1];
      return run_estimate(f_args, frontier, true, fc);
    }
    if (*audit) return run_audit(a_cases, a_supports, a_seed, a_out);
    if (*simulate) {
      if (so.full) {
        if (simulate->count("--b") == 0) so.replications = 500;
        if (simulate->count("--draws") == 0) so.draws = 999;
      }
      return run_simulate(so, s_out);
    }
  } catch (const qtb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.family());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
