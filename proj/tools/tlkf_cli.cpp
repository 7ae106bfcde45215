// tlkf: run the state-estimation benchmark, or the oracle / gradient checks.
//
//   tlkf run [--config PATH] [--seed S]... [--methods KF,EM_KF,...] [--n N]
//            [--em-iters K] [--profile desk|paper] [--output-dir PATH]
//            [--set key=value]...
//   tlkf oracle [--models 100] [--seed 1]
//   tlkf gradcheck [--seed 1]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tlkf/experiment.hpp"
#include "tlkf/format.hpp"
#include "tlkf/verify.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

constexpr double kOracleMomentTol = 1e-8;
constexpr double kOracleLoglikTol = 1e-6;
constexpr double kGradTol = 1e-4;

struct RunOptions {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string methods;
  int n = 0;
  int em_iters = 0;
  std::string profile;
  std::string output_dir;
  std::vector<std::string> sets;
};

int do_run(const RunOptions& o) {
  std::map<std::string, std::string> overrides;
  for (const std::string& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << s << "'\n";
      return kConfigError;
    }
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (!o.seeds.empty()) {
    std::string list;
    for (std::size_t i = 0; i < o.seeds.size(); ++i) {
      if (i) list += ',';
      list += std::to_string(o.seeds[i]);
    }
    overrides["seeds"] = list;
  }
  if (!o.methods.empty()) overrides["methods"] = o.methods;
  if (o.n > 0) overrides["N"] = std::to_string(o.n);
  if (o.em_iters > 0) overrides["em_iters"] = std::to_string(o.em_iters);
  if (!o.profile.empty()) overrides["profile"] = o.profile;
  if (!o.output_dir.empty()) overrides["output_dir"] = o.output_dir;

  tlkf::ExperimentConfig config;
  try {
    config = o.config_path.empty() ? tlkf::parse_config("", "<defaults>", overrides)
                                   : tlkf::load_config(o.config_path, overrides);
  } catch (const tlkf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  std::cout << tlkf::format_config(config) << std::flush;
  try {
    const int rc = tlkf::run_experiment(config, std::cerr);
    if (rc != 0) std::cerr << "some stages failed; partial outputs kept in " << config.output_dir << '\n';
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

int do_oracle(int models, std::uint64_t seed) {
  const tlkf::verify::OracleDeviation d = tlkf::verify::run_oracle_suite(models, seed);
  using tlkf::format_double;
  std::cout << "models " << d.models << '\n'
            << "predicted " << format_double(d.predicted) << '\n'
            << "filtered " << format_double(d.filtered) << '\n'
            << "smoothed " << format_double(d.smoothed) << '\n'
            << "lag_one " << format_double(d.lag_one) << '\n'
            << "cross_moment " << format_double(d.cross_moment) << '\n'
            << "log_likelihood " << format_double(d.log_likelihood) << '\n';
  const bool ok = d.moments() < kOracleMomentTol && d.log_likelihood < kOracleLoglikTol;
  std::cout << (ok ? "ok" : "FAILED") << '\n';
  return ok ? 0 : kRuntimeError;
}

int do_gradcheck(std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& g : tlkf::verify::run_gradchecks(seed)) {
    std::cout << g.name << ' ' << tlkf::format_double(g.max_rel_error) << " (" << g.entries
              << " entries)\n";
    worst = std::max(worst, g.max_rel_error);
  }
  std::cout << "worst " << tlkf::format_double(worst) << '\n';
  const bool ok = worst < kGradTol;
  std::cout << (ok ? "ok" : "FAILED") << '\n';
  return ok ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kalman filtering with learned observation encoders"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "simulate trajectories and benchmark the methods");
  run_cmd->add_option("--config", run.config_path, "flat key = value config file")
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seeds, "trajectory seed (repeatable)");
  run_cmd->add_option("--methods", run.methods, "comma list of KF,EM_KF,LSTM_KF,TRANSFORMER_KF,TL_KF");
  run_cmd->add_option("--n", run.n, "trajectory length")->check(CLI::PositiveNumber);
  run_cmd->add_option("--em-iters", run.em_iters, "EM iterations")->check(CLI::PositiveNumber);
  run_cmd->add_option("--profile", run.profile, "Transformer size")
      ->check(CLI::IsMember({"desk", "paper"}));
  run_cmd->add_option("--output-dir", run.output_dir, "where tables are written");
  run_cmd->add_option("--set", run.sets, "any config key, as key=value (repeatable)");

  int models = 100;
  std::uint64_t oracle_seed = 1;
  auto* oracle_cmd = app.add_subcommand("oracle", "compare filter/smoother with joint-Gaussian conditioning");
  oracle_cmd->add_option("--models", models, "number of random models")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--seed", oracle_seed, "model generator seed");

  std::uint64_t grad_seed = 1;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  grad_cmd->add_option("--seed", grad_seed, "seed for shapes and inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (*run_cmd) return do_run(run);
  if (*oracle_cmd) return do_oracle(models, oracle_seed);
  return do_gradcheck(grad_seed);
}
