#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlkf/pipeline.hpp"

namespace tlkf {

/// Bad configuration text or an invariant violation; the message names the
/// line or the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scalar parameters of the robot model: Q = q I, R = r I, m0 = (0,0,m_a),
/// P0 = p I.
struct RobotParams {
  double q = 0.0;
  double r = 0.0;
  double m_a = 0.0;
  double p = 0.0;
};

struct ExperimentConfig {
  double T = 0.01;
  int N = 200;
  RobotParams true_params{1e-2, 5e-3, 0.1, 0.1};
  RobotParams init_params{2e-2, 1.0, 1.0, 5.0};
  EmConfig em;
  LstmConfig lstm;
  TransformerConfig transformer = TransformerConfig::desk();
  std::string profile = "desk";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<MethodKind> methods{kAllMethods.begin(), kAllMethods.end()};
  bool filter_encoded = false;
  bool robustness_sweep = true;
  int workers = 0;  // 0: one per hardware thread
  std::string output_dir = "results";

  void validate() const;
};

/// Initial (m_a, sigma_p^2) settings of the robustness sweep.
inline constexpr std::array<std::pair<double, double>, 3> kRobustnessSettings = {
    std::pair{1.0, 5.0}, std::pair{0.5, 1.0}, std::pair{1.5, 15.0}};

/// Parses flat "key = value" text ('#' starts a comment). Keys absent from
/// the text keep their defaults. `overrides` are applied after the file.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>",
                              const std::map<std::string, std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& overrides = {});

/// Every key with its resolved value; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig& config);

LinearGaussianModel true_model(const ExperimentConfig& config);
LinearGaussianModel initial_model(const ExperimentConfig& config, double m_a, double p);

struct SeedResult {
  std::uint64_t seed = 0;
  Trajectory trajectory;
  std::vector<MethodReport> reports;
  /// sweep[s] holds the EM_KF and TL_KF reports for kRobustnessSettings[s].
  std::vector<std::vector<MethodReport>> sweep;
};

/// Simulates one trajectory and runs every configured method on it.
SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed);

/// Runs all seeds and writes the tables into config.output_dir. Returns 0 on
/// success and 2 when any stage failed (outputs written so far are kept).
int run_experiment(const ExperimentConfig& config, std::ostream& log);

}  // namespace tlkf
