#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtb/bounds.hpp"
#include "qtb/estimation.hpp"
#include "qtb/inference.hpp"
#include "qtb/lp.hpp"
#include "qtb/sim.hpp"

namespace qtb {

inline constexpr int kFormatVersion = 1;
const char* library_version();

// ---- configuration ----

struct FrontierConfig {
  double tau = 0.5;
  SRect rect;
  std::size_t n_gamma = 31;
  std::size_t n_lambda = 31;
  std::string method = "subsample:0.6";  // or "multiplier"
};

struct AnalysisConfig {
  std::vector<SensitivityPair> sensitivity = {SensitivityPair(1.0, 1.0)};
  std::vector<double> taus = {0.25, 0.5, 0.75};
  double alpha = 0.05;
  int folds = 5;
  double eta = 0.05;
  std::size_t grid_size = 121;
  std::string design = "observational";  // or "known"
  std::string e_table;                    // CSV with columns cell,e1 (known design)
  std::string method = "multiplier";      // or "subsample:<exponent>"
  int draws = 149;
  std::uint64_t seed = 1;
  bool store_phi = false;
  std::optional<FrontierConfig> frontier;

  /// Throws ConfigError when a value leaves its domain.
  void validate() const;
};

/// Rejects unknown keys with ConfigError.
AnalysisConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const AnalysisConfig& c);
AnalysisConfig load_config(const std::string& path);

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const AnalysisConfig& c);

/// "subsample:0.6" -> 0.6; "multiplier" -> nullopt. ConfigError otherwise.
std::optional<double> parse_method(const std::string& method);

// ---- CSV ingestion ----

struct CovariateSpec {
  std::string name;
  bool numeric = false;
  int bins = 3;
};

struct SchemaConfig {
  std::string r = "r";
  std::string a = "a";
  std::string y = "y";
  std::vector<CovariateSpec> covariates;
  std::vector<std::string> missing = {"", "NA", "NaN", "nan"};
};

SchemaConfig schema_from_json(const nlohmann::json& j);
SchemaConfig load_schema(const std::string& path);

struct IngestResult {
  TwoSampleData data;
  std::vector<std::string> cell_labels;  // one per cell id
  std::vector<std::vector<double>> bin_edges;  // per numeric covariate, in schema order
  std::vector<std::string> warnings;
};

IngestResult ingest_csv(std::istream& in, const SchemaConfig& schema);
IngestResult ingest_csv(const std::string& path, const SchemaConfig& schema);

/// Type-7 quantile edges at k/bins, k = 1..bins-1.
std::vector<double> quantile_edges(std::vector<double> values, int bins);

/// Known-design propensity table: CSV with header cell,e1 keyed by cell label.
std::vector<double> load_e_table(const std::string& path, const std::vector<std::string>& cell_labels);

// ---- results ----

struct QuantileRow {
  double tau = 0.5;
  int a = 0;
  std::size_t s = 0;
  double q_lo = 0.0;  // plug-in bounds
  double q_hi = 0.0;
  QuantileCi minus;
  QuantileCi plus;
};

struct QteRow {
  double tau = 0.5;
  std::size_t s = 0;
  QteHull hull;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

struct ResultBundle {
  int format_version = kFormatVersion;
  std::string version;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json config;
  CdfBoundProcess psi;
  double critical = 0.0;
  std::vector<QuantileRow> quantiles;
  std::vector<QteRow> qte;
  std::optional<FrontierGrid> frontier;
  std::vector<PlanePoint> zero_level;
  std::optional<EifEvaluation> phi;
  std::vector<std::string> warnings;
};

nlohmann::json bundle_to_json(const ResultBundle& b);
ResultBundle bundle_from_json(const nlohmann::json& j);

/// psi grid as CSV: a,side,gamma,lambda,y,psi (12 significant digits).
void write_psi_csv(std::ostream& out, const CdfBoundProcess& psi);
void write_phi_csv(std::ostream& out, const EifEvaluation& phi);
void write_frontier_csv(std::ostream& out, const FrontierGrid& fg);
void write_metrics_csv(std::ostream& out, const MetricsReport& rep);

nlohmann::json hulls_to_json(const std::vector<QteRow>& rows, const std::vector<SensitivityPair>& s);
nlohmann::json audit_to_json(const AuditReport& rep);
nlohmann::json metrics_to_json(const MetricsReport& rep);
nlohmann::json zero_level_to_json(const std::vector<PlanePoint>& pts);

nlohmann::json nuisance_to_json(const NuisanceSet& n);
NuisanceSet nuisance_from_json(const nlohmann::json& j);

/// Equally spaced grid from the smallest to the largest source outcome.
ThresholdGrid grid_from_data(const TwoSampleData& data, std::size_t size);

/// Estimation, critical value, bands, inversion, hulls and (optionally) the
/// frontier, as configured.
ResultBundle run_pipeline(const AnalysisConfig& config, const TwoSampleData& data,
                          const std::vector<double>& known_e1 = {});

/// Writes text to a file, throwing ConfigError when the file cannot be opened.
void write_text(const std::string& path, const std::string& text);

}  // namespace qtb
