#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "tlkf/experiment.hpp"

using namespace tlkf;
namespace fs = std::filesystem;

namespace {

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tlkf_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("empty config gives the standard setup") {
  const ExperimentConfig c = parse_config("");
  CHECK(c.T == 0.01);
  CHECK(c.N == 200);
  CHECK(c.true_params.q == 1e-2);
  CHECK(c.true_params.r == 5e-3);
  CHECK(c.true_params.m_a == 0.1);
  CHECK(c.true_params.p == 0.1);
  CHECK(c.init_params.q == 2e-2);
  CHECK(c.init_params.r == 1.0);
  CHECK(c.init_params.m_a == 1.0);
  CHECK(c.init_params.p == 5.0);
  CHECK(c.em.max_iter == 10);
  CHECK(c.lstm.layers == 3);
  CHECK(c.lstm.hidden == 10);
  CHECK(c.lstm.look_back == 5);
  CHECK(c.lstm.epochs == 100);
  CHECK(c.lstm.adam.lr == 0.1);
  CHECK(c.transformer.heads == 4);
  CHECK(c.transformer.blocks == 6);
  CHECK(c.transformer.dropout_rate == 0.1);
  CHECK(c.transformer.model_dim == 32);
  CHECK(c.seeds.size() == 10);
  CHECK(c.methods.size() == 5);
}

TEST_CASE("overriding N keeps everything else") {
  const ExperimentConfig d = parse_config("");
  const ExperimentConfig c = parse_config("# shorter run\nN = 50\n");
  CHECK(c.N == 50);
  CHECK(format_config(c) != format_config(d));
  ExperimentConfig back = c;
  back.N = d.N;
  CHECK(format_config(back) == format_config(d));
}

TEST_CASE("negative variance is rejected with the field name") {
  try {
    parse_config("true_r = -5e-3\n");
    FAIL("expected throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("true_r") != std::string::npos);
  }
}

TEST_CASE("parse errors carry the line") {
  try {
    parse_config("N = 50\nbogus_key = 1\n", "my.cfg");
    FAIL("expected throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("my.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("N 50\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("N = fifty\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("methods = KF,NOPE\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("profile = huge\n"), ConfigError);
}

TEST_CASE("profiles and overrides") {
  const ExperimentConfig p = parse_config("profile = paper\n");
  CHECK(p.transformer.model_dim == 512);
  CHECK(p.transformer.epochs == 500);
  const ExperimentConfig q = parse_config("profile = paper\ntransformer_epochs = 7\n");
  CHECK(q.transformer.epochs == 7);
  const ExperimentConfig o = parse_config("N = 50\n", "<t>", {{"N", "70"}, {"seeds", "3,4"}});
  CHECK(o.N == 70);
  CHECK(o.seeds == std::vector<std::uint64_t>{3, 4});
}

TEST_CASE("resolved config round-trips") {
  const ExperimentConfig c = parse_config("N = 77\nmethods = KF,TL_KF\nlstm_lr = 0.003\nseeds = 5\n");
  const std::string text = format_config(c);
  CHECK(format_config(parse_config(text)) == text);
}

TEST_CASE("KF-only run writes exactly the KF tables") {
  ExperimentConfig c = parse_config("");
  c.methods = {MethodKind::KF};
  c.seeds = {1};
  c.N = 50;
  c.output_dir = scratch_dir("kf_only").string();
  std::ostringstream log;
  REQUIRE(run_experiment(c, log) == 0);
  std::set<std::string> csvs;
  for (const auto& e : fs::directory_iterator(c.output_dir)) {
    if (e.path().extension() == ".csv") csvs.insert(e.path().filename().string());
  }
  CHECK(csvs == std::set<std::string>{"table2.csv", "path_KF.csv", "error_KF.csv"});
  CHECK(count_lines(fs::path(c.output_dir) / "table2.csv") == 2);
  CHECK(count_lines(fs::path(c.output_dir) / "path_KF.csv") == 52);
  CHECK(count_lines(fs::path(c.output_dir) / "error_KF.csv") == 52);
  fs::remove_all(c.output_dir);
}

TEST_CASE("EM run adds the parameter and robustness tables") {
  ExperimentConfig c = parse_config("");
  c.methods = {MethodKind::KF, MethodKind::EM_KF};
  c.seeds = {1, 2};
  c.N = 60;
  c.output_dir = scratch_dir("em").string();
  std::ostringstream log;
  REQUIRE(run_experiment(c, log) == 0);
  const fs::path dir(c.output_dir);
  CHECK(fs::exists(dir / "table1.csv"));
  CHECK(fs::exists(dir / "table3.csv"));
  CHECK(count_lines(dir / "table1.csv") == 3);  // header, de facto, EM_KF
  CHECK(count_lines(dir / "table3.csv") == 4);  // header + three settings
  CHECK(count_lines(dir / "table2.csv") == 3);
  fs::remove_all(dir);
}

TEST_CASE("run_seed is deterministic") {
  ExperimentConfig c = parse_config("");
  c.methods = {MethodKind::EM_KF};
  c.robustness_sweep = false;
  c.N = 50;
  const SeedResult a = run_seed(c, 3);
  const SeedResult b = run_seed(c, 3);
  REQUIRE(a.reports.size() == 1);
  CHECK(a.reports[0].filter_mse == b.reports[0].filter_mse);
  CHECK(a.reports[0].sigma_q2 == b.reports[0].sigma_q2);
}

}
