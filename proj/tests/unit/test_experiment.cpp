#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../checks.hpp"
#include "fcrec/experiment.hpp"

using namespace fcrec;

namespace {

PreparedData small_data(std::uint64_t seed) {
  DatasetOptions opts;
  opts.min_user = 5;
  opts.min_item = 3;
  opts.seed = seed;
  return prepare_dataset(checks::synthetic_log(seed), opts);
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.dim = 8;
  c.rounds = 3;
  c.base_rounds = 4;
  c.lr = 0.1;
  c.top_n = 10;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fcrec-test-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("method and backbone names round trip") {
  for (Method m : {Method::kF3CRec, Method::kFineTune, Method::kReg, Method::kKD, Method::kWithoutClientCL,
                   Method::kWithoutAdaptiveReplay, Method::kWithoutServerCL, Method::kWithoutItemWiseMean})
    CHECK(parse_method(method_name(m)) == m);
  CHECK(parse_backbone("fedmf") == BackboneKind::kFedMF);
  CHECK(parse_backbone(backbone_name(BackboneKind::kFedNCF)) == BackboneKind::kFedNCF);
  CHECK_THROWS(parse_method("nope"));
  CHECK_THROWS(parse_backbone("gru"));
}

TEST_CASE("method traits") {
  const auto f3 = method_traits(Method::kF3CRec);
  CHECK(f3.replay == ReplayMode::kAdaptive);
  CHECK(f3.retention == RetentionMode::kItemWise);
  CHECK_FALSE(f3.regularize);
  CHECK(method_traits(Method::kFineTune).replay == ReplayMode::kNone);
  CHECK(method_traits(Method::kFineTune).retention == RetentionMode::kNone);
  CHECK(method_traits(Method::kReg).regularize);
  CHECK(method_traits(Method::kKD).replay == ReplayMode::kFull);
  CHECK(method_traits(Method::kWithoutClientCL).replay == ReplayMode::kNone);
  CHECK(method_traits(Method::kWithoutAdaptiveReplay).replay == ReplayMode::kFull);
  CHECK(method_traits(Method::kWithoutServerCL).retention == RetentionMode::kNone);
  CHECK(method_traits(Method::kWithoutItemWiseMean).retention == RetentionMode::kUniform);
}

TEST_CASE("config fields survive a set round trip") {
  ExperimentConfig a;
  a.method = Method::kWithoutAdaptiveReplay;
  a.backbone = BackboneKind::kFedNCF;
  a.eps = 0.007;
  a.beta = 0.3;
  a.top_n = 17;
  a.mean_rec_loss = true;
  a.shift_schedule = ShiftSchedule::kPerEpoch;
  a.schema.delimiter = ',';
  a.seed = 42;
  ExperimentConfig b;
  for (const auto& [k, v] : a.fields()) b.set(k, v);
  CHECK(b.fields() == a.fields());

  CHECK_THROWS_WITH(b.set("beta", "x"), doctest::Contains("beta"));
  CHECK_THROWS_WITH(b.set("colour", "red"), doctest::Contains("colour"));
  CHECK_THROWS(b.set("analyze", "maybe"));
}

TEST_CASE("validate names the offending field") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta = 1.0;
  CHECK_THROWS_WITH(c.validate(), doctest::Contains("beta"));
  c.beta = 0.0;
  CHECK_NOTHROW(c.validate());
  c.client_fraction = 0.0;
  CHECK_THROWS_WITH(c.validate(), doctest::Contains("client_fraction"));
  c.client_fraction = 1.0;
  c.lr = 0.0;
  CHECK_THROWS_WITH(c.validate(), doctest::Contains("lr"));
}

TEST_CASE("method switches reach the client and server configs") {
  ExperimentConfig c;
  c.method = Method::kFineTune;
  CHECK(c.client_config().replay == ReplayMode::kNone);
  CHECK(c.client_config().lambda_kd == 0.0);
  CHECK(c.client_config().reg_mu == 0.0);
  CHECK(c.server_config().retention == RetentionMode::kNone);
  c.method = Method::kReg;
  CHECK(c.client_config().reg_mu == c.reg_mu);
}

TEST_CASE("parse_grid and apply_grid_point") {
  const std::vector<std::string> specs{"eps=0.001,0.005", "rounds=2,3"};
  const auto grid = parse_grid(specs);
  REQUIRE(grid.size() == 2);
  CHECK(grid[0].first == "eps");
  CHECK(grid[0].second == std::vector<double>{0.001, 0.005});
  const auto c = apply_grid_point(ExperimentConfig{}, {{"eps", 0.005}, {"rounds", 3}});
  CHECK(c.eps == 0.005);
  CHECK(c.rounds == 3);
  CHECK_THROWS(apply_grid_point(ExperimentConfig{}, {{"rounds", 2.5}}));
  CHECK_THROWS(apply_grid_point(ExperimentConfig{}, {{"beta", 1.5}}));
  const std::vector<std::string> bad{"eps"};
  CHECK_THROWS(parse_grid(bad));
  const std::vector<std::string> nan{"eps=a"};
  CHECK_THROWS(parse_grid(nan));
}

TEST_CASE("runs are deterministic and independent of the thread count") {
  const PreparedData data = small_data(3);
  for (BackboneKind kind : {BackboneKind::kFedMF, BackboneKind::kFedNCF}) {
    ExperimentConfig c = small_config();
    c.backbone = kind;
    c.threads = 1;
    const auto a = run_experiment(c, data);
    c.threads = 3;
    const auto b = run_experiment(c, data);
    REQUIRE(a.evals.size() == 8);  // two metrics on each of four blocks
    for (std::size_t i = 0; i < a.evals.size(); ++i) CHECK(a.evals[i].value == b.evals[i].value);
    CHECK(a.avg_ndcg == b.avg_ndcg);
    CHECK(a.rounds.size() == std::size_t(4 + 3 * 3));
    CHECK(a.avg_ndcg > 0.0);
  }
}

TEST_CASE("every method runs end to end") {
  const PreparedData data = small_data(4);
  for (Method m : {Method::kF3CRec, Method::kFineTune, Method::kReg, Method::kKD, Method::kWithoutClientCL,
                   Method::kWithoutAdaptiveReplay, Method::kWithoutServerCL, Method::kWithoutItemWiseMean}) {
    ExperimentConfig c = small_config();
    c.method = m;
    c.analyze = m == Method::kF3CRec;
    const auto r = run_experiment(c, data);
    CHECK(r.failed_updates == 0);
    CHECK(std::isfinite(r.avg_ndcg));
    if (c.analyze) CHECK(r.degradation.has_value());
  }
}

TEST_CASE("f3crec with no distillation and no retention collapses to ft") {
  const auto o = checks::ft_collapse_bit_identity(5);
  CHECK_MESSAGE(o.ok(), o.failure.value_or(""));
}

TEST_CASE("relative improvement") {
  CHECK(relative_improvement(0.1034, 0.0855) == doctest::Approx(0.20935672).epsilon(1e-6));
  CHECK_THROWS_AS(relative_improvement(0.1, 0.0), std::domain_error);
}

TEST_CASE("results files and the report table") {
  auto make = [](Method m, double incremental) {
    ExperimentConfig c;
    c.method = m;
    ExperimentResult r;
    r.evals.push_back({0, "NDCG@20", 0.3, 100});
    for (int b = 1; b <= 3; ++b) r.evals.push_back({b, "NDCG@20", incremental, 100});
    r.avg_ndcg = incremental;
    return std::pair{c, r};
  };
  const auto dir = scratch("report");
  const auto [ft_cfg, ft_res] = make(Method::kFineTune, 0.0855);
  const auto [f3_cfg, f3_res] = make(Method::kF3CRec, 0.1034);
  write_results(ft_cfg, ft_res, dir / "ft");
  write_results(f3_cfg, f3_res, dir / "f3");
  for (const char* f : {"results.tsv", "summary.tsv", "rounds.tsv", "manifest.txt"})
    CHECK(std::filesystem::exists(dir / "ft" / f));
  CHECK_FALSE(std::filesystem::exists(dir / "ft" / "analysis.tsv"));

  const std::vector<std::filesystem::path> files{dir / "ft" / "results.tsv", dir / "f3" / "results.tsv"};
  const std::string table = report(files);
  CHECK(table.find("+20.94%") != std::string::npos);
  CHECK(table.find("f3crec\t0.3000\t0.1034\t0.1034\t0.1034\t0.1034") != std::string::npos);

  std::ofstream(dir / "bad.tsv") << "header\nonly\ttwo\n";
  const std::vector<std::filesystem::path> bad{dir / "bad.tsv"};
  CHECK_THROWS(report(bad));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep runs every grid point") {
  const PreparedData data = small_data(6);
  ExperimentConfig c = small_config();
  const std::vector<std::string> specs{"beta=0,0.5", "lambda_kd=0.1"};
  const auto points = sweep(c, parse_grid(specs), data);
  REQUIRE(points.size() == 2);
  CHECK(points[0].values == std::vector<std::pair<std::string, double>>{{"beta", 0.0}, {"lambda_kd", 0.1}});
  const auto dir = scratch("sweep");
  write_sweep(c, points, dir);
  std::ifstream in(dir / "sweep.tsv");
  std::string line;
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 3);
  std::filesystem::remove_all(dir);
}
