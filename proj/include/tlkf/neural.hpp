#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tlkf/numerics.hpp"

// Small fixed-topology network pieces with explicit backward passes.
// Sequences are stored as matrices whose COLUMNS are the items (features x
// positions); a mini-batch of vectors is likewise one column per sample.

namespace tlkf::nn {

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
  long step_count = 0;

  Param() = default;
  Param(std::string name, Eigen::Index rows, Eigen::Index cols);

  void zero_grad() { grad.setZero(); }
};

struct AdamConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Bias-corrected Adam update; increments step_count and zeroes grad.
void adam_step(Param& p, const AdamConfig& config);

/// Scales every gradient in `params` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(const std::vector<Param*>& params, double max_norm);

/// Uniform in +-1/sqrt(fan_in).
void init_uniform(Param& p, Eigen::Index fan_in, Rng& rng);

/// Inverted-dropout scale mask: entries 0 with probability `rate`, otherwise
/// 1/(1-rate).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

/// Identity when !training.
Mat dropout(const Mat& x, double rate, bool training, Rng& rng);

Mat sigmoid(const Mat& x);
Mat tanh(const Mat& x);
Mat relu(const Mat& x);

// Backward passes of the elementwise activations, expressed through the
// forward input x (relu) or output y (sigmoid, tanh).
Mat sigmoid_backward(const Mat& y, const Mat& dy);
Mat tanh_backward(const Mat& y, const Mat& dy);
Mat relu_backward(const Mat& x, const Mat& dy);

/// Mean squared error over the entries selected by `mask` (all entries when
/// mask is empty). Writes dLoss/dPred into *grad when non-null.
double mse_loss(const Mat& pred, const Mat& target, Mat* grad, const Mat& mask = Mat());

class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);

  /// W x + b for each column x.
  Mat forward(const Mat& x) const;
  /// Accumulates parameter gradients, returns dLoss/dx.
  Mat backward(const Mat& x, const Mat& dy);

  std::vector<Param*> params() { return {&w_, &b_}; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  Param w_;
  Param b_;
};

/// Normalizes each column to zero mean / unit variance, then applies a
/// learned per-feature gain and bias.
class LayerNorm {
 public:
  struct Cache {
    Mat xhat;
    Eigen::RowVectorXd inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim);

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);

  std::vector<Param*> params() { return {&gain_, &bias_}; }

  static constexpr double kEps = 1e-5;

 private:
  Param gain_;
  Param bias_;
};

struct AttentionCache {
  Mat q;
  Mat k;
  Mat v;
  Mat weights;
  double scale = 1.0;
};

/// Column-wise softmax of K^T Q / sqrt(d), d = rows of Q. Column j holds the
/// weights of query j over the keys.
Mat attention_weights(const Mat& q, const Mat& k);

/// H = V softmax(K^T Q / sqrt(d)).
Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v,
                         AttentionCache* cache = nullptr);

struct AttentionGrads {
  Mat dq;
  Mat dk;
  Mat dv;
};

AttentionGrads scaled_dot_attention_backward(const AttentionCache& cache, const Mat& dh);

class MultiHeadAttention {
 public:
  struct Cache {
    Mat xq;
    Mat xkv;
    std::vector<AttentionCache> heads;
    Mat concat;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index model_dim, int heads, Rng& rng);

  /// Queries from the columns of xq, keys and values from the columns of xkv.
  Mat forward(const Mat& xq, const Mat& xkv, Cache* cache = nullptr) const;
  /// Returns (dL/dxq, dL/dxkv).
  std::pair<Mat, Mat> backward(const Cache& cache, const Mat& dy);

  std::vector<Param*> params();
  int heads() const { return static_cast<int>(wq_.size()); }
  Param& query_weight(int h) { return wq_[h]; }
  Param& key_weight(int h) { return wk_[h]; }
  Param& value_weight(int h) { return wv_[h]; }
  Param& output_weight() { return wo_; }

 private:
  std::vector<Param> wq_;
  std::vector<Param> wk_;
  std::vector<Param> wv_;
  Param wo_;
};

/// Two dense layers with a ReLU between them.
class FeedForward {
 public:
  struct Cache {
    Mat x;
    Mat pre;
    Mat hidden;
  };

  FeedForward() = default;
  FeedForward(const std::string& name, Eigen::Index dim, Eigen::Index hidden, Rng& rng);

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);

  std::vector<Param*> params();

 private:
  Dense in_;
  Dense out_;
};

/// Self-attention + residual + layer norm, then feed-forward + residual +
/// layer norm. Dropout is applied to each sublayer output while training.
class EncoderBlock {
 public:
  struct Cache {
    MultiHeadAttention::Cache attn;
    Mat attn_mask;
    LayerNorm::Cache norm1;
    FeedForward::Cache ffn;
    Mat ffn_mask;
    LayerNorm::Cache norm2;
  };

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, Eigen::Index dim, int heads, Eigen::Index ffn_hidden,
               double dropout_rate, Rng& rng);

  Mat forward(const Mat& x, bool training, Rng* rng, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);

  std::vector<Param*> params();

 private:
  MultiHeadAttention attn_;
  LayerNorm norm1_;
  FeedForward ffn_;
  LayerNorm norm2_;
  double dropout_rate_ = 0.0;
};

/// One LSTM layer unrolled over a sequence. Gate rows are ordered
/// input, forget, candidate, output.
class LstmLayer {
 public:
  struct Step {
    Mat z;  // [x; h_prev]
    Mat i, f, g, o;
    Mat c_prev;
    Mat c;
    Mat tanh_c;
  };
  using Cache = std::vector<Step>;

  LstmLayer() = default;
  LstmLayer(const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng);

  /// inputs[t] is in x batch; returns hidden states (hidden x batch) per step.
  std::vector<Mat> forward(const std::vector<Mat>& inputs, Cache* cache = nullptr) const;
  /// dh[t] is dLoss/dh_t from above; returns dLoss/dinputs[t].
  std::vector<Mat> backward(const Cache& cache, const std::vector<Mat>& dh);

  std::vector<Param*> params() { return {&w_, &b_}; }
  Eigen::Index hidden() const { return hidden_; }
  Eigen::Index input_dim() const { return in_; }

 private:
  Eigen::Index in_ = 0;
  Eigen::Index hidden_ = 0;
  Param w_;
  Param b_;
};

/// PE(i, 2l) = sin(i / 10000^(2l/d)), PE(i, 2l+1) = cos(i / 10000^(2l/d)),
/// where `slot` is 2l or 2l+1.
double positional_encoding(int position, int slot, int model_dim);

/// model_dim x length matrix, column i is the encoding of position i.
Mat positional_encoding_matrix(int model_dim, int length);

// Checkpoints: {"format": "tlkf-checkpoint", "version": 1, "meta": {...},
// "params": [{"name", "shape": [rows, cols], "values": [row-major]}]}.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json save_params(const std::vector<Param*>& params, const nlohmann::json& meta);
/// Restores values by name and shape; throws std::runtime_error on mismatch.
void load_params(const nlohmann::json& checkpoint, const std::vector<Param*>& params);

}  // namespace tlkf::nn
