#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlkf/neural.hpp"
#include "tlkf/statespace.hpp"

namespace tlkf {

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LstmConfig {
  int layers = 3;
  int hidden = 10;
  int look_back = 5;
  int epochs = 100;
  int batch_size = 32;
  double train_fraction = 0.9;
  double clip_norm = 1.0;
  nn::AdamConfig adam;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TransformerConfig {
  int model_dim = 512;
  int heads = 4;
  int blocks = 6;
  int ffn_hidden = 0;   // 0: four times the sequence length
  int attn_hidden = 0;  // 0: the sequence length (attention spans all positions)
  double dropout_rate = 0.1;
  int epochs = 500;
  double train_fraction = 0.9;
  double clip_norm = 1.0;
  nn::AdamConfig adam;
  std::uint64_t seed = 1;

  /// model_dim 32, 100 epochs.
  static TransformerConfig desk();
  /// model_dim 512, 500 epochs.
  static TransformerConfig paper();

  void validate() const;
};

enum class EncodingSource { Raw, Lstm, Transformer, TransformerLstm };

const char* source_name(EncodingSource s);

struct EncodedSeries {
  Series values;
  EncodingSource source = EncodingSource::Raw;
};

/// Header "k,<source>_0,...", one row per position, k from 1.
void write_encoded_csv(std::ostream& os, const EncodedSeries& series);

struct LookbackWindows {
  std::vector<Series> inputs;  // each of length L
  Series targets;
};

/// Throws std::runtime_error when series.size() <= L.
LookbackWindows make_lookback_windows(const Series& series, int look_back);

/// Per-dimension affine scaling to zero mean / unit spread.
struct Normalizer {
  Vec mean;
  Vec scale;

  static Normalizer fit(const Series& series, std::size_t count);
  Vec apply(const Vec& x) const;
  Vec invert(const Vec& z) const;
};

struct TrainingReport {
  double train_loss = 0.0;
  double heldout_loss = 0.0;
  int epochs = 0;
};

class LstmEncoder {
 public:
  LstmEncoder() = default;
  LstmEncoder(int obs_dim, const LstmConfig& config);

  /// One-step prediction (raw units) from a window of raw observations.
  Vec predict(const Series& window) const;

  const LstmConfig& config() const { return config_; }
  const TrainingReport& report() const { return report_; }
  std::vector<nn::Param*> params();

  /// MSE of the prediction from normalized `steps` (obs_dim x batch each)
  /// against `target`; with accumulate_grad, adds dLoss/dparam to the grads.
  double loss(const std::vector<Mat>& steps, const Mat& target, bool accumulate_grad);

  nlohmann::json checkpoint();
  static LstmEncoder from_checkpoint(const nlohmann::json& ckpt);

 private:
  friend LstmEncoder train_lstm(const Series&, const LstmConfig&);

  struct Cache {
    std::vector<nn::LstmLayer::Cache> layers;
    Mat top;
  };
  /// steps[t] is obs_dim x batch (normalized); returns obs_dim x batch.
  Mat forward(const std::vector<Mat>& steps, Cache* cache) const;
  void backward(const Cache& cache, const Mat& dpred);

  int obs_dim_ = 0;
  LstmConfig config_;
  std::vector<nn::LstmLayer> layers_;
  nn::Dense head_;
  Normalizer norm_;
  TrainingReport report_;
};

LstmEncoder train_lstm(const Series& observations, const LstmConfig& config);

/// Positions after the first look_back carry the one-step prediction from the
/// trailing window; the first look_back positions are the raw observations.
EncodedSeries lstm_encode(const LstmEncoder& encoder, const Series& observations);

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  /// `length` fixes the default FFN width (4 x length).
  TransformerEncoder(int obs_dim, int length, const TransformerConfig& config);

  /// Eval-mode reconstruction in raw units.
  Series reconstruct(const Series& observations) const;

  const TransformerConfig& config() const { return config_; }
  const TrainingReport& report() const { return report_; }
  std::vector<nn::Param*> params();

  /// Masked reconstruction MSE of normalized x (obs_dim x length). Dropout is
  /// drawn from `rng` when training.
  double loss(const Mat& x, const Mat& mask, bool training, Rng* rng, bool accumulate_grad);

  nlohmann::json checkpoint();
  static TransformerEncoder from_checkpoint(const nlohmann::json& ckpt);

 private:
  friend TransformerEncoder train_transformer(const Series&, const TransformerConfig&);

  struct Cache {
    Mat input;
    Mat input_mask;
    std::vector<nn::EncoderBlock::Cache> blocks;
    Mat top;
  };
  /// x is obs_dim x length (normalized).
  Mat forward(const Mat& x, bool training, Rng* rng, Cache* cache) const;
  void backward(const Cache& cache, const Mat& dy);

  int obs_dim_ = 0;
  int length_ = 0;
  TransformerConfig config_;
  nn::Dense embed_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::Dense head_;
  Normalizer norm_;
  TrainingReport report_;
};

TransformerEncoder train_transformer(const Series& observations, const TransformerConfig& config);

EncodedSeries transformer_encode(const TransformerEncoder& encoder, const Series& observations);

/// Transformer on the raw series, then an LSTM on the Transformer output.
EncodedSeries tl_encode(const Series& observations, const TransformerConfig& t_config,
                        const LstmConfig& l_config);

}  // namespace tlkf
