#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlkf/em.hpp"
#include "tlkf/encoders.hpp"

namespace tlkf {

enum class MethodKind { KF, EM_KF, LSTM_KF, TRANSFORMER_KF, TL_KF };

inline constexpr std::array<MethodKind, 5> kAllMethods = {
    MethodKind::KF, MethodKind::EM_KF, MethodKind::LSTM_KF, MethodKind::TRANSFORMER_KF,
    MethodKind::TL_KF};

const char* method_name(MethodKind kind);
std::optional<MethodKind> parse_method(const std::string& name);

struct EncoderConfigs {
  LstmConfig lstm;
  TransformerConfig transformer = TransformerConfig::desk();
  /// Run the final filter/smoother on the encoded series instead of the raw
  /// observations (encoder methods only).
  bool filter_encoded = false;
};

struct MethodReport {
  MethodKind method = MethodKind::KF;
  LinearGaussianModel fitted;
  double sigma_q2 = 0.0;
  double sigma_r2 = 0.0;
  double m_a = 0.0;
  double sigma_p2 = 0.0;
  double filter_mse = 0.0;
  double smoother_mse = 0.0;
  double training_seconds = 0.0;
  double em_seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> filtered_displacement;  // k = 0..N
  std::vector<double> smoothed_displacement;  // k = 0..N
  std::string error;                          // non-empty when the method failed

  bool ok() const { return error.empty(); }
};

nlohmann::json method_report_to_json(const MethodReport& r);

/// Pipeline stage failure; the message names the stage.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean over k = 1..N of the squared displacement error. `estimates` is
/// indexed like truth.states (k = 0..N).
double displacement_mse(const std::vector<Vec>& estimates, const Trajectory& truth);

/// Trains each encoder at most once per observation series and keeps the
/// encoded outputs, so several methods (and several EM initializations) can
/// share them. Not thread-safe.
class EncodingCache {
 public:
  EncodingCache(const Series& observations, const EncoderConfigs& configs);

  const EncodedSeries& lstm();
  const EncodedSeries& transformer();
  const EncodedSeries& transformer_lstm();

  double lstm_seconds() const { return lstm_seconds_; }
  double transformer_seconds() const { return transformer_seconds_; }
  /// Transformer training plus the LSTM trained on its output.
  double transformer_lstm_seconds() const { return transformer_seconds_ + tl_lstm_seconds_; }

 private:
  const Series& observations_;
  EncoderConfigs configs_;
  std::optional<EncodedSeries> lstm_;
  std::optional<EncodedSeries> transformer_;
  std::optional<EncodedSeries> tl_;
  double lstm_seconds_ = 0.0;
  double transformer_seconds_ = 0.0;
  double tl_lstm_seconds_ = 0.0;
};

/// Throws StageError. When `cache` is null a private cache is used.
MethodReport run_method(MethodKind kind, const Trajectory& trajectory,
                        const LinearGaussianModel& init, const EmConfig& em_config,
                        const EncoderConfigs& encoder_configs, EncodingCache* cache = nullptr);

struct SuiteConfig {
  EmConfig em;
  EncoderConfigs encoders;
  std::vector<MethodKind> methods{kAllMethods.begin(), kAllMethods.end()};
};

/// One report per requested method; failures are recorded in
/// MethodReport::error and the suite continues.
std::vector<MethodReport> run_suite(const Trajectory& trajectory, const LinearGaussianModel& init,
                                    const SuiteConfig& config, EncodingCache* cache = nullptr);

}  // namespace tlkf
