#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "qtb/errors.hpp"
#include "qtb/io.hpp"
#include "qtb/sim.hpp"

using namespace qtb;
using nlohmann::json;

namespace {

SchemaConfig toy_schema() {
  return schema_from_json(json::parse(R"({"r": "r", "a": "a", "y": "y",
      "covariates": [{"name": "site", "type": "categorical"}]})"));
}

TwoSampleData small_data(std::uint64_t seed) {
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  return dgp.sample(300, 450, seed);
}

}  // namespace

TEST(Config, RoundTripAndHash) {
  const json j = json::parse(R"({"sensitivity": [[1.5, 1.2], [2, 1.5]], "taus": [0.3, 0.7],
      "folds": 3, "method": "subsample:0.7", "seed": 9,
      "frontier": {"tau": 0.4, "rect": [1, 3, 1, 2], "mesh": [11, 7], "method": "multiplier"}})");
  const AnalysisConfig c = config_from_json(j);
  EXPECT_EQ(c.sensitivity.size(), 2u);
  EXPECT_EQ(c.sensitivity[1].lambda(), 1.5);
  EXPECT_EQ(c.folds, 3);
  ASSERT_TRUE(c.frontier.has_value());
  EXPECT_EQ(c.frontier->n_lambda, 7u);
  EXPECT_EQ(c.frontier->rect.gamma_hi, 3.0);
  const AnalysisConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  AnalysisConfig other = c;
  other.seed = 10;
  EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(json::parse(R"({"gamma": 2})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"frontier": {"mesh": [3]}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"sensitivity": [[0.5, 1]]})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"alpha": 1.5})")), ConfigError);
  EXPECT_FALSE(parse_method("multiplier").has_value());
  EXPECT_EQ(*parse_method("subsample:0.6"), 0.6);
  EXPECT_THROW(parse_method("subsample:1.2"), ConfigError);
  EXPECT_THROW(parse_method("bootstrap"), ConfigError);
}

TEST(Ingest, ToyCsvCounts) {
  std::istringstream in(
      "r,a,y,site\n"
      "1,1,0.5,north\n"
      "1,0,1.5,south\n"
      "0,,,north\n"
      "0,,,south\n");
  const IngestResult res = ingest_csv(in, toy_schema());
  EXPECT_EQ(res.data.n1(), 2u);
  EXPECT_EQ(res.data.n0(), 2u);
  EXPECT_EQ(res.data.n_cells, 2u);
  ASSERT_EQ(res.cell_labels.size(), 2u);
  EXPECT_EQ(res.cell_labels[0], "site=north");
  EXPECT_TRUE(res.warnings.empty());
}

TEST(Ingest, TargetOutcomesAreMasked) {
  std::istringstream in(
      "r,a,y,site\n"
      "1,1,0.5,north\n"
      "1,0,1.5,north\n"
      "0,1,2.0,north\n");
  const IngestResult res = ingest_csv(in, toy_schema());
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_NE(res.warnings[0].find("1"), std::string::npos);
  EXPECT_EQ(res.data.a[2], -1);
}

TEST(Ingest, NumericBinsAtPooledQuantiles) {
  const auto edges = quantile_edges({1.0, 2.0, 3.0, 4.0}, 3);
  ASSERT_EQ(edges.size(), 2u);
  EXPECT_DOUBLE_EQ(edges[0], 2.0);
  EXPECT_DOUBLE_EQ(edges[1], 3.0);
  const SchemaConfig schema = schema_from_json(json::parse(
      R"({"covariates": [{"name": "age", "type": "numeric", "bins": 3}]})"));
  std::istringstream in(
      "r,a,y,age\n"
      "1,1,0.5,1\n"
      "1,0,1.5,2\n"
      "0,,,3\n"
      "0,,,4\n");
  const IngestResult res = ingest_csv(in, schema);
  ASSERT_EQ(res.bin_edges.size(), 1u);
  EXPECT_EQ(res.bin_edges[0], edges);
  // 1 and 2 share the lowest bin, 3 and 4 the next two
  EXPECT_EQ(res.data.x[0], res.data.x[1]);
  EXPECT_NE(res.data.x[2], res.data.x[3]);
}

TEST(Ingest, ErrorsCarryLineNumbers) {
  std::istringstream missing("r,a,y,site\n1,1,0.5,north\n1,,0.7,south\n");
  try {
    ingest_csv(missing, toy_schema());
    FAIL() << "expected MissingFieldError";
  } catch (const MissingFieldError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  std::istringstream bad_r("r,a,y,site\n2,1,0.5,north\n");
  EXPECT_THROW(ingest_csv(bad_r, toy_schema()), SchemaError);
  std::istringstream no_col("r,a,y\n1,1,0.5\n");
  EXPECT_THROW(ingest_csv(no_col, toy_schema()), SchemaError);
}

TEST(Bundle, JsonRoundTripIsExact) {
  AnalysisConfig c;
  c.sensitivity = {SensitivityPair(1.5, 1.2)};
  c.folds = 2;
  c.draws = 49;
  c.grid_size = 41;
  c.store_phi = true;
  const ResultBundle b = run_pipeline(c, small_data(3));
  const json j = bundle_to_json(b);
  const ResultBundle back = bundle_from_json(json::parse(j.dump()));
  EXPECT_EQ(bundle_to_json(back).dump(), j.dump());
  ASSERT_TRUE(back.phi.has_value());
  EXPECT_EQ(back.phi->phi, b.phi->phi);
  EXPECT_EQ(back.psi.values(), b.psi.values());
  EXPECT_THROW(bundle_from_json(json::parse(R"({"psi": 3})")), SchemaError);
}

TEST(Pipeline, DeterministicAcrossRuns) {
  AnalysisConfig c;
  c.sensitivity = {SensitivityPair(1.5, 1.2), SensitivityPair(2.0, 1.5)};
  c.folds = 2;
  c.draws = 49;
  c.grid_size = 41;
  const auto data = small_data(4);
  const ResultBundle a = run_pipeline(c, data), b = run_pipeline(c, data);
  EXPECT_EQ(bundle_to_json(a).dump(), bundle_to_json(b).dump());
  for (const auto& row : a.qte) {
    EXPECT_LE(row.hull.delta_lo, row.hull.delta_hi);
    EXPECT_LE(row.band_lo, row.hull.delta_lo);
    EXPECT_GE(row.band_hi, row.hull.delta_hi);
  }
}

TEST(Nuisance, JsonRoundTrip) {
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  const NuisanceSet& t = dgp.truth();
  const NuisanceSet back = nuisance_from_json(json::parse(nuisance_to_json(t).dump()));
  EXPECT_EQ(back.p[0], t.p[0]);
  EXPECT_EQ(back.p[1], t.p[1]);
  EXPECT_EQ(back.e[1], t.e[1]);
  EXPECT_EQ(back.cells.target_weight, t.cells.target_weight);
}

TEST(Writers, PsiCsvHeaderAndRows) {
  CdfBoundProcess p(ThresholdGrid({0.0, 1.0}), {SensitivityPair(2.0, 1.5)});
  std::ostringstream out;
  write_psi_csv(out, p);
  const std::string s = out.str();
  EXPECT_EQ(s.rfind("a,side,gamma,lambda,y,psi\n", 0), 0u);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 8);
}
