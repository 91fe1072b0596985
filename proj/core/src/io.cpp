#include "qtb/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "qtb/errors.hpp"
#include "qtb/parallel.hpp"

namespace qtb {

using nlohmann::json;

const char* library_version() { return "0.1.0"; }

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string fmt12(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

const char* side_name(Side s) { return s == Side::Lower ? "lower" : "upper"; }

}  // namespace

// ---------------------------------------------------------------------------

std::optional<double> parse_method(const std::string& method) {
  if (method == "multiplier") return std::nullopt;
  const std::string prefix = "subsample:";
  if (method.rfind(prefix, 0) == 0) {
    double e = 0.0;
    if (parse_double(method.substr(prefix.size()), e) && e > 0.0 && e < 1.0) return e;
  }
  throw ConfigError("method must be 'multiplier' or 'subsample:<exponent in (0,1)>', got '" + method + "'");
}

void AnalysisConfig::validate() const {
  if (sensitivity.empty()) throw ConfigError("sensitivity list is empty");
  if (taus.empty()) throw ConfigError("tau list is empty");
  for (double t : taus)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("tau values must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (!(eta >= 0.0 && eta < 0.5)) throw ConfigError("eta must lie in [0, 0.5)");
  if (grid_size < 2) throw ConfigError("grid size must be at least 2");
  if (design != "observational" && design != "known") throw ConfigError("design must be observational or known");
  if (design == "known" && e_table.empty()) throw ConfigError("known design needs an e_table path");
  if (draws < 1) throw ConfigError("draws must be positive");
  parse_method(method);
  if (frontier) {
    if (!(frontier->tau > 0.0 && frontier->tau < 1.0)) throw ConfigError("frontier tau must lie in (0, 1)");
    if (frontier->n_gamma < 2 || frontier->n_lambda < 2) throw ConfigError("frontier mesh needs 2 nodes per axis");
    const SRect& r = frontier->rect;
    if (r.gamma_lo < 1.0 || r.lambda_lo < 1.0 || !(r.gamma_hi > r.gamma_lo) || !(r.lambda_hi > r.lambda_lo))
      throw ConfigError("invalid sensitivity rectangle");
    parse_method(frontier->method);
  }
}

AnalysisConfig config_from_json(const json& j) {
  reject_unknown(j, {"sensitivity", "taus", "alpha", "folds", "eta", "grid_size", "design", "e_table",
                     "method", "draws", "seed", "store_phi", "frontier"},
                 "config");
  AnalysisConfig c;
  if (j.contains("sensitivity")) {
    c.sensitivity.clear();
    const json& s = j.at("sensitivity");
    if (!s.is_array()) throw ConfigError("sensitivity must be a list of [gamma, lambda] pairs");
    for (const json& p : s) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw ConfigError("sensitivity entries must be [gamma, lambda]");
      try {
        c.sensitivity.emplace_back(p[0].get<double>(), p[1].get<double>());
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  c.taus = get_or(j, "taus", c.taus);
  c.alpha = get_or(j, "alpha", c.alpha);
  c.folds = get_or(j, "folds", c.folds);
  c.eta = get_or(j, "eta", c.eta);
  c.grid_size = get_or(j, "grid_size", c.grid_size);
  c.design = get_or(j, "design", c.design);
  c.e_table = get_or(j, "e_table", c.e_table);
  c.method = get_or(j, "method", c.method);
  c.draws = get_or(j, "draws", c.draws);
  c.seed = get_or(j, "seed", c.seed);
  c.store_phi = get_or(j, "store_phi", c.store_phi);
  if (j.contains("frontier") && !j.at("frontier").is_null()) {
    const json& f = j.at("frontier");
    reject_unknown(f, {"tau", "rect", "mesh", "method"}, "frontier");
    FrontierConfig fc;
    fc.tau = get_or(f, "tau", fc.tau);
    fc.method = get_or(f, "method", fc.method);
    if (f.contains("rect")) {
      const auto r = get_or(f, "rect", std::vector<double>{});
      if (r.size() != 4) throw ConfigError("frontier rect must be [gamma_lo, gamma_hi, lambda_lo, lambda_hi]");
      fc.rect = SRect{r[0], r[1], r[2], r[3]};
    }
    if (f.contains("mesh")) {
      const auto m = get_or(f, "mesh", std::vector<std::size_t>{});
      if (m.size() != 2) throw ConfigError("frontier mesh must be [n_gamma, n_lambda]");
      fc.n_gamma = m[0];
      fc.n_lambda = m[1];
    }
    c.frontier = fc;
  }
  c.validate();
  return c;
}

json config_to_json(const AnalysisConfig& c) {
  json j;
  json s = json::array();
  for (const auto& p : c.sensitivity) s.push_back({p.gamma(), p.lambda()});
  j["sensitivity"] = s;
  j["taus"] = c.taus;
  j["alpha"] = c.alpha;
  j["folds"] = c.folds;
  j["eta"] = c.eta;
  j["grid_size"] = c.grid_size;
  j["design"] = c.design;
  j["e_table"] = c.e_table;
  j["method"] = c.method;
  j["draws"] = c.draws;
  j["seed"] = c.seed;
  j["store_phi"] = c.store_phi;
  if (c.frontier) {
    const auto& f = *c.frontier;
    j["frontier"] = {{"tau", f.tau},
                     {"rect", {f.rect.gamma_lo, f.rect.gamma_hi, f.rect.lambda_lo, f.rect.lambda_hi}},
                     {"mesh", {f.n_gamma, f.n_lambda}},
                     {"method", f.method}};
  } else {
    j["frontier"] = nullptr;
  }
  return j;
}

AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

std::string config_hash(const AnalysisConfig& c) {
  const std::string text = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------

SchemaConfig schema_from_json(const json& j) {
  reject_unknown(j, {"r", "a", "y", "covariates", "missing"}, "schema");
  SchemaConfig s;
  s.r = get_or(j, "r", s.r);
  s.a = get_or(j, "a", s.a);
  s.y = get_or(j, "y", s.y);
  s.missing = get_or(j, "missing", s.missing);
  if (j.contains("covariates")) {
    for (const json& c : j.at("covariates")) {
      reject_unknown(c, {"name", "type", "bins"}, "covariate");
      CovariateSpec cs;
      if (!c.contains("name")) throw SchemaError("covariate entry lacks a name");
      cs.name = c.at("name").get<std::string>();
      const std::string type = get_or<std::string>(c, "type", "categorical");
      if (type != "categorical" && type != "numeric") throw SchemaError("covariate type must be categorical or numeric");
      cs.numeric = type == "numeric";
      cs.bins = get_or(c, "bins", cs.bins);
      if (cs.numeric && cs.bins < 1) throw SchemaError("numeric covariates need at least one bin");
      s.covariates.push_back(cs);
    }
  }
  return s;
}

SchemaConfig load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("schema is not valid JSON: " + std::string(e.what()));
  }
  return schema_from_json(j);
}

std::vector<double> quantile_edges(std::vector<double> values, int bins) {
  if (values.empty()) throw SchemaError("cannot bin an empty covariate");
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  const double n = static_cast<double>(values.size());
  for (int k = 1; k < bins; ++k) {
    const double h = (n - 1.0) * static_cast<double>(k) / static_cast<double>(bins);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    edges.push_back(values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]));
  }
  return edges;
}

IngestResult ingest_csv(std::istream& in, const SchemaConfig& schema) {
  IngestResult res;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("input CSV is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cr = column(schema.r), ca = column(schema.a), cy = column(schema.y);
  std::vector<std::size_t> cx;
  for (const auto& c : schema.covariates) cx.push_back(column(c.name));
  auto is_missing = [&](const std::string& v) {
    return std::find(schema.missing.begin(), schema.missing.end(), v) != schema.missing.end();
  };

  struct Row {
    int r, a;
    double y;
    std::vector<std::string> cov;
  };
  std::vector<Row> rows;
  std::size_t lineno = 1;
  std::size_t masked = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      std::ostringstream os;
      os << "line " << lineno << ": expected " << header.size() << " fields, found " << f.size();
      throw SchemaError(os.str());
    }
    auto need = [&](std::size_t col, const std::string& name) -> const std::string& {
      if (is_missing(f[col])) {
        std::ostringstream os;
        os << "line " << lineno << ": missing required field '" << name << "'";
        throw MissingFieldError(os.str());
      }
      return f[col];
    };
    Row row{};
    const std::string& rv = need(cr, schema.r);
    if (rv != "0" && rv != "1") {
      std::ostringstream os;
      os << "line " << lineno << ": " << schema.r << " must be 0 or 1, found '" << rv << "'";
      throw SchemaError(os.str());
    }
    row.r = rv == "1";
    for (std::size_t k = 0; k < cx.size(); ++k) row.cov.push_back(need(cx[k], schema.covariates[k].name));
    if (row.r == 1) {
      const std::string& av = need(ca, schema.a);
      if (av != "0" && av != "1") {
        std::ostringstream os;
        os << "line " << lineno << ": " << schema.a << " must be 0 or 1, found '" << av << "'";
        throw SchemaError(os.str());
      }
      row.a = av == "1";
      if (!parse_double(need(cy, schema.y), row.y)) {
        std::ostringstream os;
        os << "line " << lineno << ": outcome '" << f[cy] << "' is not a finite number";
        throw SchemaError(os.str());
      }
    } else {
      row.a = -1;
      row.y = std::nan("");
      if (!is_missing(f[cy]) || !is_missing(f[ca])) ++masked;
    }
    rows.push_back(std::move(row));
  }
  if (masked > 0) {
    std::ostringstream os;
    os << masked << " target row(s) carried treatment or outcome values; they were masked";
    res.warnings.push_back(os.str());
  }

  // covariate codes
  std::vector<std::vector<std::string>> codes(rows.size(), std::vector<std::string>(cx.size()));
  for (std::size_t k = 0; k < cx.size(); ++k) {
    const auto& spec = schema.covariates[k];
    if (!spec.numeric) {
      for (std::size_t i = 0; i < rows.size(); ++i) codes[i][k] = spec.name + "=" + rows[i].cov[k];
      continue;
    }
    std::vector<double> vals(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (!parse_double(rows[i].cov[k], vals[i])) {
        std::ostringstream os;
        os << "row " << i + 1 << ": covariate '" << spec.name << "' is not numeric";
        throw SchemaError(os.str());
      }
    const auto edges = rows.empty() ? std::vector<double>{} : quantile_edges(vals, spec.bins);
    res.bin_edges.push_back(edges);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t bin =
          static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), vals[i]) - edges.begin());
      codes[i][k] = spec.name + "#" + std::to_string(bin);
    }
  }
  std::map<std::string, int> cell_of;
  std::vector<std::string> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string lab;
    for (std::size_t k = 0; k < cx.size(); ++k) lab += (k ? "|" : "") + codes[i][k];
    labels[i] = lab.empty() ? "all" : lab;
    cell_of.emplace(labels[i], 0);
  }
  int next = 0;
  for (auto& [lab, id] : cell_of) {
    id = next++;
    res.cell_labels.push_back(lab);
  }
  res.data.n_cells = cell_of.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int x = cell_of.at(labels[i]);
    if (rows[i].r == 1)
      res.data.push_source(x, rows[i].a, rows[i].y);
    else
      res.data.push_target(x);
  }
  res.data.validate();
  return res;
}

IngestResult ingest_csv(const std::string& path, const SchemaConfig& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input file " + path);
  return ingest_csv(in, schema);
}

std::vector<double> load_e_table(const std::string& path, const std::vector<std::string>& cell_labels) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open propensity table " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("propensity table is empty");
  const auto header = split_csv_line(line);
  if (header.size() != 2 || header[0] != "cell" || header[1] != "e1")
    throw SchemaError("propensity table needs the header cell,e1");
  std::map<std::string, double> table;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    double v = 0.0;
    if (f.size() != 2 || !parse_double(f[1], v)) {
      std::ostringstream os;
      os << "propensity table line " << lineno << " is malformed";
      throw SchemaError(os.str());
    }
    table[f[0]] = v;
  }
  std::vector<double> e1;
  for (const auto& lab : cell_labels) {
    const auto it = table.find(lab);
    if (it == table.end()) throw MissingFieldError("propensity table lacks cell '" + lab + "'");
    e1.push_back(it->second);
  }
  return e1;
}

// ---------------------------------------------------------------------------

namespace {

json process_to_json(const CdfBoundProcess& p) {
  json s = json::array();
  for (const auto& sp : p.s_points()) s.push_back({sp.gamma(), sp.lambda()});
  return {{"grid", p.grid().values()}, {"s_points", s}, {"values", p.values()}};
}

CdfBoundProcess process_from_json(const json& j) {
  std::vector<SensitivityPair> s;
  for (const json& p : j.at("s_points")) s.emplace_back(p[0].get<double>(), p[1].get<double>());
  CdfBoundProcess proc(ThresholdGrid(j.at("grid").get<std::vector<double>>()), s);
  const auto v = j.at("values").get<std::vector<double>>();
  if (v.size() != proc.values().size()) throw SchemaError("process values have the wrong length");
  proc.values() = v;
  return proc;
}

json ci_to_json(const QuantileCi& c) { return {{"lo", c.lo}, {"hi", c.hi}, {"tail", c.tail}}; }
QuantileCi ci_from_json(const json& j) {
  return QuantileCi{j.at("lo").get<double>(), j.at("hi").get<double>(), j.at("tail").get<bool>()};
}

json frontier_to_json(const FrontierGrid& f) {
  std::vector<int> inner(f.inner.begin(), f.inner.end()), outer(f.outer.begin(), f.outer.end());
  return {{"gammas", f.gammas}, {"lambdas", f.lambdas}, {"kappa", f.kappa}, {"tau", f.tau},
          {"d", f.d},           {"n", f.n},             {"inner", inner},   {"outer", outer}};
}

FrontierGrid frontier_from_json(const json& j) {
  FrontierGrid f;
  f.gammas = j.at("gammas").get<std::vector<double>>();
  f.lambdas = j.at("lambdas").get<std::vector<double>>();
  f.kappa = j.at("kappa").get<std::vector<double>>();
  f.tau = j.at("tau").get<double>();
  f.d = j.at("d").get<double>();
  f.n = j.at("n").get<double>();
  for (int v : j.at("inner").get<std::vector<int>>()) f.inner.push_back(static_cast<char>(v));
  for (int v : j.at("outer").get<std::vector<int>>()) f.outer.push_back(static_cast<char>(v));
  return f;
}

}  // namespace

json zero_level_to_json(const std::vector<PlanePoint>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({p.first, p.second});
  return arr;
}

json bundle_to_json(const ResultBundle& b) {
  json j;
  j["format_version"] = b.format_version;
  j["version"] = b.version;
  j["seed"] = b.seed;
  j["config_hash"] = b.config_hash;
  j["config"] = b.config;
  j["psi"] = process_to_json(b.psi);
  j["critical"] = b.critical;
  json q = json::array();
  for (const auto& r : b.quantiles)
    q.push_back({{"tau", r.tau}, {"a", r.a}, {"s", r.s}, {"q_lo", r.q_lo}, {"q_hi", r.q_hi},
                 {"minus", ci_to_json(r.minus)}, {"plus", ci_to_json(r.plus)}});
  j["quantiles"] = q;
  json h = json::array();
  for (const auto& r : b.qte)
    h.push_back({{"tau", r.tau}, {"s", r.s}, {"delta_lo", r.hull.delta_lo}, {"delta_hi", r.hull.delta_hi},
                 {"kappa", r.hull.kappa}, {"band_lo", r.band_lo}, {"band_hi", r.band_hi}});
  j["qte"] = h;
  j["frontier"] = b.frontier ? frontier_to_json(*b.frontier) : json(nullptr);
  j["zero_level"] = zero_level_to_json(b.zero_level);
  if (b.phi) {
    std::vector<int> reg(b.phi->regular.begin(), b.phi->regular.end());
    j["phi"] = {{"n_obs", b.phi->n_obs}, {"n_index", b.phi->n_index}, {"chi", b.phi->chi},
                {"regular", reg},        {"values", b.phi->phi}};
  } else {
    j["phi"] = nullptr;
  }
  j["warnings"] = b.warnings;
  return j;
}

ResultBundle bundle_from_json(const json& j) {
  try {
    ResultBundle b;
    b.format_version = j.at("format_version").get<int>();
    if (b.format_version != kFormatVersion) throw SchemaError("unsupported format_version");
    b.version = j.at("version").get<std::string>();
    b.seed = j.at("seed").get<std::uint64_t>();
    b.config_hash = j.at("config_hash").get<std::string>();
    b.config = j.at("config");
    b.psi = process_from_json(j.at("psi"));
    b.critical = j.at("critical").get<double>();
    for (const json& r : j.at("quantiles"))
      b.quantiles.push_back(QuantileRow{r.at("tau").get<double>(), r.at("a").get<int>(),
                                        r.at("s").get<std::size_t>(), r.at("q_lo").get<double>(),
                                        r.at("q_hi").get<double>(), ci_from_json(r.at("minus")),
                                        ci_from_json(r.at("plus"))});
    for (const json& r : j.at("qte")) {
      QteRow row;
      row.tau = r.at("tau").get<double>();
      row.s = r.at("s").get<std::size_t>();
      row.hull = QteHull{row.tau, r.at("delta_lo").get<double>(), r.at("delta_hi").get<double>(),
                         r.at("kappa").get<double>()};
      row.band_lo = r.at("band_lo").get<double>();
      row.band_hi = r.at("band_hi").get<double>();
      b.qte.push_back(row);
    }
    if (!j.at("frontier").is_null()) b.frontier = frontier_from_json(j.at("frontier"));
    for (const json& p : j.at("zero_level")) b.zero_level.emplace_back(p[0].get<double>(), p[1].get<double>());
    if (!j.at("phi").is_null()) {
      const json& p = j.at("phi");
      EifEvaluation e;
      e.n_obs = p.at("n_obs").get<std::size_t>();
      e.n_index = p.at("n_index").get<std::size_t>();
      e.chi = p.at("chi").get<int>();
      for (int v : p.at("regular").get<std::vector<int>>()) e.regular.push_back(static_cast<char>(v));
      e.phi = p.at("values").get<std::vector<double>>();
      b.phi = std::move(e);
    }
    b.warnings = j.at("warnings").get<std::vector<std::string>>();
    return b;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed result bundle: ") + e.what());
  }
}

void write_psi_csv(std::ostream& out, const CdfBoundProcess& psi) {
  out << "a,side,gamma,lambda,y,psi\n";
  for (int a = 0; a < 2; ++a)
    for (Side side : kSides)
      for (std::size_t s = 0; s < psi.n_s(); ++s)
        for (std::size_t g = 0; g < psi.n_grid(); ++g)
          out << a << ',' << side_name(side) << ',' << fmt12(psi.s_points()[s].gamma()) << ','
              << fmt12(psi.s_points()[s].lambda()) << ',' << fmt12(psi.grid()[g]) << ','
              << fmt12(psi.at(a, side, s, g)) << '\n';
}

void write_phi_csv(std::ostream& out, const EifEvaluation& phi) {
  out << "obs";
  for (std::size_t k = 0; k < phi.n_index; ++k) out << ",i" << k;
  out << '\n';
  for (std::size_t i = 0; i < phi.n_obs; ++i) {
    out << i;
    for (std::size_t k = 0; k < phi.n_index; ++k) out << ',' << fmt12(phi.at(i, k));
    out << '\n';
  }
}

void write_frontier_csv(std::ostream& out, const FrontierGrid& fg) {
  out << "node,gamma,lambda,kappa,inner,outer\n";
  for (std::size_t i = 0; i < fg.n_gamma(); ++i)
    for (std::size_t j = 0; j < fg.n_lambda(); ++j) {
      const std::size_t k = fg.node(i, j);
      out << k << ',' << fmt12(fg.gammas[i]) << ',' << fmt12(fg.lambdas[j]) << ',' << fmt12(fg.kappa[k])
          << ',' << (k < fg.inner.size() ? int(fg.inner[k]) : 0) << ','
          << (k < fg.outer.size() ? int(fg.outer[k]) : 0) << '\n';
    }
}

void write_metrics_csv(std::ostream& out, const MetricsReport& rep) {
  std::vector<std::string> keys;
  for (const auto& r : rep.rows)
    for (const auto& [k, v] : r.values) {
      (void)v;
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
  out << "experiment,n1,n0,label";
  for (const auto& k : keys) out << ',' << k;
  out << '\n';
  for (const auto& r : rep.rows) {
    out << r.experiment << ',' << r.n1 << ',' << r.n0 << ",\"" << r.label << '"';
    for (const auto& k : keys) {
      out << ',';
      for (const auto& [kk, v] : r.values)
        if (kk == k) out << fmt12(v);
    }
    out << '\n';
  }
}

json hulls_to_json(const std::vector<QteRow>& rows, const std::vector<SensitivityPair>& s) {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"tau", r.tau}, {"gamma", s.at(r.s).gamma()}, {"lambda", s.at(r.s).lambda()},
                   {"delta_lo", r.hull.delta_lo}, {"delta_hi", r.hull.delta_hi}, {"kappa", r.hull.kappa},
                   {"band_lo", r.band_lo}, {"band_hi", r.band_hi}});
  return {{"format_version", kFormatVersion}, {"hulls", arr}};
}

json audit_to_json(const AuditReport& r) {
  return {{"format_version", kFormatVersion},
          {"cases", r.cases},
          {"lp_solves", r.lp_solves},
          {"max_discrepancy_lower", r.max_discrepancy_lower},
          {"max_discrepancy_upper", r.max_discrepancy_upper},
          {"boundary_max_discrepancy", r.boundary_max_discrepancy},
          {"max_greedy_discrepancy", r.max_greedy_discrepancy},
          {"dominance_violations", r.dominance_violations},
          {"mean_product_overwidth", r.mean_product_overwidth},
          {"strict_share", r.strict_share},
          {"strict_share_nontrivial", r.strict_share_nontrivial},
          {"nontrivial_cases", r.nontrivial_cases},
          {"elapsed_seconds", r.elapsed_seconds}};
}

json metrics_to_json(const MetricsReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows) {
    json vals = json::object();
    for (const auto& [k, v] : r.values) vals[k] = std::isfinite(v) ? json(v) : json(nullptr);
    rows.push_back({{"experiment", r.experiment}, {"n1", r.n1}, {"n0", r.n0}, {"label", r.label}, {"values", vals}});
  }
  return {{"format_version", kFormatVersion}, {"replications", rep.replications},
          {"seed", rep.seed},                 {"failures", rep.failures},
          {"failed", rep.failed},             {"elapsed_seconds", rep.elapsed_seconds},
          {"notes", rep.notes},               {"rows", rows}};
}

json nuisance_to_json(const NuisanceSet& n) {
  const std::size_t ng = n.grid.size();
  json p = json::object();
  for (int a = 0; a < 2; ++a) {
    json cells = json::array();
    for (std::size_t x = 0; x < n.n_cells(); ++x)
      cells.push_back(std::vector<double>(n.p[a].begin() + static_cast<std::ptrdiff_t>(x * ng),
                                          n.p[a].begin() + static_cast<std::ptrdiff_t>((x + 1) * ng)));
    p[std::to_string(a)] = cells;
  }
  return {{"grid", n.grid.values()},
          {"target_weight", n.cells.target_weight},
          {"source_weight", n.cells.source_weight},
          {"e1", n.e[1]},
          {"p", p}};
}

NuisanceSet nuisance_from_json(const json& j) {
  reject_unknown(j, {"grid", "target_weight", "source_weight", "e1", "p"}, "nuisance file");
  try {
    NuisanceSet n;
    n.grid = ThresholdGrid(j.at("grid").get<std::vector<double>>());
    n.cells.target_weight = j.at("target_weight").get<std::vector<double>>();
    n.cells.source_weight = j.at("source_weight").get<std::vector<double>>();
    n.cells.finalize();
    const std::size_t nx = n.cells.size(), ng = n.grid.size();
    n.e[1] = j.at("e1").get<std::vector<double>>();
    if (n.e[1].size() != nx) throw MissingCellError("e1 has the wrong length");
    n.e[0].resize(nx);
    for (std::size_t x = 0; x < nx; ++x) n.e[0][x] = 1.0 - n.e[1][x];
    for (int a = 0; a < 2; ++a) {
      const auto cells = j.at("p").at(std::to_string(a)).get<std::vector<std::vector<double>>>();
      if (cells.size() != nx) throw MissingCellError("CDF table has the wrong number of cells");
      for (const auto& c : cells) {
        if (c.size() != ng) throw MissingCellError("CDF row has the wrong length");
        n.p[a].insert(n.p[a].end(), c.begin(), c.end());
      }
    }
    n.validate();
    return n;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed nuisance file: ") + e.what());
  }
}

ThresholdGrid grid_from_data(const TwoSampleData& data, std::size_t size) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.r[i] == 1) {
      lo = std::min(lo, data.y[i]);
      hi = std::max(hi, data.y[i]);
    }
  if (!std::isfinite(lo)) throw EmptyArmError("no source outcomes to place a grid on");
  if (!(hi > lo)) hi = lo + 1.0;
  return ThresholdGrid::uniform(lo, hi, size);
}

// ---------------------------------------------------------------------------

ResultBundle run_pipeline(const AnalysisConfig& config, const TwoSampleData& data,
                          const std::vector<double>& known_e1) {
  config.validate();
  data.validate();
  if (config.design == "known" && known_e1.size() != data.n_cells)
    throw ConfigError("known design needs one propensity per cell");

  ResultBundle b;
  b.version = library_version();
  b.seed = config.seed;
  b.config = config_to_json(config);
  b.config_hash = config_hash(config);

  const ThresholdGrid grid = grid_from_data(data, config.grid_size);
  NuisanceOptions nopt;
  nopt.k_folds = config.folds;
  nopt.eta = config.eta;
  nopt.seed = derive_seed(config.seed, 1);
  if (config.design == "known") nopt.known_e1 = known_e1;

  const CrossFitNuisance cf = estimate_nuisances(data, grid, nopt);
  b.warnings = cf.warnings;
  OneStepResult os = one_step_estimate(data, cf, config.sensitivity, Variant::Full, true);
  if (os.tie_pairs > 0) {
    std::ostringstream w;
    w << os.tie_pairs << " (fold, cell, index) pairs sit on a switch surface; their augmentation was dropped";
    b.warnings.push_back(w.str());
  }
  b.psi = os.psi;
  const double n = static_cast<double>(data.size());

  const auto sub_exp = parse_method(config.method);
  if (!sub_exp) {
    b.critical = multiplier_critical(os.eif, config.alpha, config.draws, derive_seed(config.seed, 2), &data.r);
  } else {
    SubsampleOptions so;
    so.m = subsample_size(data.size(), *sub_exp);
    so.n_draws = config.draws;
    so.alpha = config.alpha;
    so.seed = derive_seed(config.seed, 3);
    const Pipeline pipe = [&](const TwoSampleData& d) {
      NuisanceOptions o = nopt;
      const CrossFitNuisance c = estimate_nuisances(d, grid, o);
      return one_step_estimate(d, c, config.sensitivity, Variant::Full, false).psi.values();
    };
    b.critical = subsample_critical(data, pipe, os.psi.values(), so).critical.front();
  }
  const BandSet bands = build_bands(os.psi, b.critical, n, config.alpha);

  for (std::size_t s = 0; s < config.sensitivity.size(); ++s) {
    for (double tau : config.taus) {
      QuantileBandCis arm[2];
      for (int a = 0; a < 2; ++a) {
        arm[a] = invert_bands(bands, tau, a, s);
        QuantileRow row;
        row.tau = tau;
        row.a = a;
        row.s = s;
        try {
          std::tie(row.q_lo, row.q_hi) = quantile_bounds(os.psi, tau, a, s);
        } catch (const TailError&) {
          row.q_lo = row.q_hi = grid[grid.size() - 1];
        }
        row.minus = arm[a].minus;
        row.plus = arm[a].plus;
        b.quantiles.push_back(row);
      }
      QteRow q;
      q.tau = tau;
      q.s = s;
      q.hull = qte_hull(os.psi, tau, s);
      std::tie(q.band_lo, q.band_hi) = qte_outer_band(arm[1], arm[0]);
      b.qte.push_back(q);
    }
  }

  if (config.frontier) {
    const FrontierConfig& fc = *config.frontier;
    const NuisanceSet full = estimate_nuisances_full(data, grid, nopt);
    FrontierGrid fg = frontier_scan(full, fc.tau, fc.rect, fc.n_gamma, fc.n_lambda);
    double d = 0.0;
    const auto fexp = parse_method(fc.method);
    bool use_sub = fexp.has_value();
    if (!use_sub) {
      try {
        d = frontier_multiplier_critical(data, full, fg, config.alpha, config.draws, derive_seed(config.seed, 4),
                                         cf.chi);
      } catch (const Error& e) {
        b.warnings.push_back(std::string("frontier multiplier route unavailable (") + e.what() +
                             "); using subsampling with exponent 0.6");
        use_sub = true;
      }
    }
    if (use_sub) {
      SubsampleOptions so;
      so.m = subsample_size(data.size(), fexp.value_or(0.6));
      so.n_draws = config.draws;
      so.alpha = config.alpha;
      so.seed = derive_seed(config.seed, 5);
      const Pipeline pipe = [&](const TwoSampleData& dd) {
        const NuisanceSet nu = estimate_nuisances_full(dd, grid, nopt);
        return frontier_scan(nu, fc.tau, fc.rect, fc.n_gamma, fc.n_lambda).kappa;
      };
      d = subsample_critical(data, pipe, fg.kappa, so).critical.front();
    }
    const FrontierSets sets = frontier_confidence(fg, d, n);
    b.zero_level = sets.outer_zero_level;
    b.frontier = std::move(fg);
    b.warnings.push_back("frontier zero level is reported without a rate guarantee; "
                         "isolation and gradient conditions cannot be checked from data");
  }
  if (config.store_phi) b.phi = std::move(os.eif);
  return b;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open output file " + path);
  out << text;
  if (!out) throw ConfigError("failed writing " + path);
}

}  // namespace qtb
