#include "tlkf/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "tlkf/format.hpp"

namespace tlkf {

void LstmConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("LstmConfig: layers must be >= 1");
  if (hidden < 1) throw std::invalid_argument("LstmConfig: hidden must be >= 1");
  if (look_back < 1) throw std::invalid_argument("LstmConfig: look_back must be >= 1");
  if (epochs < 0) throw std::invalid_argument("LstmConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("LstmConfig: batch_size must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("LstmConfig: train_fraction must be in (0, 1)");
  }
  if (!(clip_norm > 0.0)) throw std::invalid_argument("LstmConfig: clip_norm must be positive");
  adam.validate();
}

TransformerConfig TransformerConfig::desk() {
  TransformerConfig c;
  c.model_dim = 32;
  c.epochs = 100;
  return c;
}

TransformerConfig TransformerConfig::paper() { return TransformerConfig{}; }

void TransformerConfig::validate() const {
  if (model_dim < 1 || heads < 1 || model_dim % heads != 0) {
    throw std::invalid_argument("TransformerConfig: model_dim must be divisible by heads");
  }
  if (blocks < 0) throw std::invalid_argument("TransformerConfig: blocks must be >= 0");
  if (ffn_hidden < 0) throw std::invalid_argument("TransformerConfig: ffn_hidden must be >= 0");
  if (attn_hidden < 0) throw std::invalid_argument("TransformerConfig: attn_hidden must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("TransformerConfig: dropout_rate must be in [0, 1)");
  }
  if (epochs < 0) throw std::invalid_argument("TransformerConfig: epochs must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("TransformerConfig: train_fraction must be in (0, 1]");
  }
  if (!(clip_norm > 0.0)) {
    throw std::invalid_argument("TransformerConfig: clip_norm must be positive");
  }
  adam.validate();
}

const char* source_name(EncodingSource s) {
  switch (s) {
    case EncodingSource::Raw: return "raw";
    case EncodingSource::Lstm: return "lstm";
    case EncodingSource::Transformer: return "transformer";
    case EncodingSource::TransformerLstm: return "transformer_lstm";
  }
  return "?";
}

void write_encoded_csv(std::ostream& os, const EncodedSeries& series) {
  const Eigen::Index dim = series.values.empty() ? 0 : series.values.front().size();
  os << "k";
  for (Eigen::Index i = 0; i < dim; ++i) os << ',' << source_name(series.source) << '_' << i;
  os << '\n';
  for (std::size_t k = 0; k < series.values.size(); ++k) {
    os << k + 1;
    for (Eigen::Index i = 0; i < dim; ++i) os << ',' << format_double(series.values[k](i));
    os << '\n';
  }
}

LookbackWindows make_lookback_windows(const Series& series, int look_back) {
  if (look_back < 1) throw std::invalid_argument("make_lookback_windows: look_back must be >= 1");
  if (series.size() <= static_cast<std::size_t>(look_back)) {
    throw std::runtime_error("make_lookback_windows: series of length " +
                             std::to_string(series.size()) + " is too short for look-back " +
                             std::to_string(look_back));
  }
  LookbackWindows w;
  const std::size_t count = series.size() - look_back;
  w.inputs.reserve(count);
  w.targets.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    w.inputs.emplace_back(series.begin() + i, series.begin() + i + look_back);
    w.targets.push_back(series[i + look_back]);
  }
  return w;
}

Normalizer Normalizer::fit(const Series& series, std::size_t count) {
  count = std::min(count, series.size());
  if (count == 0) throw std::invalid_argument("Normalizer: empty series");
  const Eigen::Index dim = series.front().size();
  Normalizer n;
  n.mean = Vec::Zero(dim);
  for (std::size_t k = 0; k < count; ++k) n.mean += series[k];
  n.mean /= static_cast<double>(count);
  Vec var = Vec::Zero(dim);
  for (std::size_t k = 0; k < count; ++k) var += (series[k] - n.mean).cwiseAbs2();
  var /= static_cast<double>(count);
  n.scale = var.cwiseSqrt();
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (!(n.scale(i) > 1e-12)) n.scale(i) = 1.0;
  }
  return n;
}

Vec Normalizer::apply(const Vec& x) const { return (x - mean).cwiseQuotient(scale); }

Vec Normalizer::invert(const Vec& z) const { return z.cwiseProduct(scale) + mean; }

namespace {

nlohmann::json normalizer_json(const Normalizer& n) {
  return {{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
          {"scale", std::vector<double>(n.scale.data(), n.scale.data() + n.scale.size())}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("scale").get<std::vector<double>>();
  Normalizer n;
  n.mean = Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()));
  n.scale = Eigen::Map<const Vec>(s.data(), static_cast<Eigen::Index>(s.size()));
  return n;
}

nlohmann::json adam_json(const nn::AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

nn::AdamConfig adam_from_json(const nlohmann::json& j) {
  nn::AdamConfig a;
  a.lr = j.at("lr");
  a.beta1 = j.at("beta1");
  a.beta2 = j.at("beta2");
  a.eps = j.at("eps");
  return a;
}

void require_finite_loss(double loss, const char* who, int epoch) {
  if (!std::isfinite(loss)) {
    throw TrainingDiverged(std::string(who) + ": loss became non-finite at epoch " +
                           std::to_string(epoch) + "; try a lower learning rate");
  }
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

// ---- LSTM -----------------------------------------------------------------

LstmEncoder::LstmEncoder(int obs_dim, const LstmConfig& config)
    : obs_dim_(obs_dim), config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  Eigen::Index in = obs_dim;
  for (int l = 0; l < config_.layers; ++l) {
    layers_.emplace_back("lstm.layer" + std::to_string(l), in, config_.hidden, rng);
    in = config_.hidden;
  }
  head_ = nn::Dense("lstm.head", config_.hidden, obs_dim, rng);
  norm_.mean = Vec::Zero(obs_dim);
  norm_.scale = Vec::Ones(obs_dim);
}

std::vector<nn::Param*> LstmEncoder::params() {
  std::vector<nn::Param*> out;
  for (auto& l : layers_) {
    for (nn::Param* p : l.params()) out.push_back(p);
  }
  for (nn::Param* p : head_.params()) out.push_back(p);
  return out;
}

Mat LstmEncoder::forward(const std::vector<Mat>& steps, Cache* cache) const {
  std::vector<Mat> seq = steps;
  if (cache) cache->layers.assign(layers_.size(), {});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    seq = layers_[l].forward(seq, cache ? &cache->layers[l] : nullptr);
  }
  if (cache) cache->top = seq.back();
  return head_.forward(seq.back());
}

void LstmEncoder::backward(const Cache& cache, const Mat& dpred) {
  const std::size_t steps = cache.layers.front().size();
  std::vector<Mat> dh(steps, Mat::Zero(config_.hidden, dpred.cols()));
  dh.back() = head_.backward(cache.top, dpred);
  for (std::size_t l = layers_.size(); l-- > 0;) {
    dh = layers_[l].backward(cache.layers[l], dh);
  }
}

double LstmEncoder::loss(const std::vector<Mat>& steps, const Mat& target, bool accumulate_grad) {
  Cache cache;
  const Mat pred = forward(steps, accumulate_grad ? &cache : nullptr);
  Mat dpred;
  const double l = nn::mse_loss(pred, target, accumulate_grad ? &dpred : nullptr);
  if (accumulate_grad) backward(cache, dpred);
  return l;
}

Vec LstmEncoder::predict(const Series& window) const {
  if (window.size() != static_cast<std::size_t>(config_.look_back)) {
    throw std::invalid_argument("LstmEncoder::predict: window of length " +
                                std::to_string(window.size()) + ", expected " +
                                std::to_string(config_.look_back));
  }
  std::vector<Mat> steps;
  steps.reserve(window.size());
  for (const Vec& x : window) steps.emplace_back(norm_.apply(x));
  const Mat z = forward(steps, nullptr);
  return norm_.invert(z.col(0));
}

LstmEncoder train_lstm(const Series& observations, const LstmConfig& config) {
  config.validate();
  if (observations.empty()) throw std::invalid_argument("train_lstm: no observations");
  const int dim = static_cast<int>(observations.front().size());
  LstmEncoder enc(dim, config);
  const LookbackWindows windows = make_lookback_windows(observations, config.look_back);
  const std::size_t total = windows.targets.size();
  std::size_t n_train = static_cast<std::size_t>(
      std::floor(config.train_fraction * static_cast<double>(total)));
  n_train = std::clamp<std::size_t>(n_train, 1, total);
  enc.norm_ = Normalizer::fit(observations, n_train + config.look_back);

  const int L = config.look_back;
  auto batch_inputs = [&](const std::vector<std::size_t>& idx) {
    std::vector<Mat> steps(L, Mat(dim, static_cast<Eigen::Index>(idx.size())));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (int t = 0; t < L; ++t) steps[t].col(b) = enc.norm_.apply(windows.inputs[idx[b]][t]);
    }
    return steps;
  };
  auto batch_targets = [&](const std::vector<std::size_t>& idx) {
    Mat y(dim, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t b = 0; b < idx.size(); ++b) y.col(b) = enc.norm_.apply(windows.targets[idx[b]]);
    return y;
  };
  // Loss in raw units over a set of windows.
  auto raw_loss = [&](std::size_t begin, std::size_t end) {
    if (begin >= end) return 0.0;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec r = enc.predict(windows.inputs[i]) - windows.targets[i];
      sum += r.squaredNorm();
      count += static_cast<std::size_t>(r.size());
    }
    return sum / static_cast<double>(count);
  };

  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<nn::Param*> params = enc.params();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled(n_train, rng);
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t stop = std::min(n_train, start + config.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      LstmEncoder::Cache cache;
      const Mat pred = enc.forward(batch_inputs(idx), &cache);
      Mat dpred;
      const double loss = nn::mse_loss(pred, batch_targets(idx), &dpred);
      require_finite_loss(loss, "train_lstm", epoch);
      enc.backward(cache, dpred);
      nn::clip_grad_norm(params, config.clip_norm);
      for (nn::Param* p : params) nn::adam_step(*p, config.adam);
    }
  }
  enc.report_.epochs = config.epochs;
  enc.report_.train_loss = raw_loss(0, n_train);
  enc.report_.heldout_loss = raw_loss(n_train, total);
  require_finite_loss(enc.report_.train_loss, "train_lstm", config.epochs);
  return enc;
}

EncodedSeries lstm_encode(const LstmEncoder& encoder, const Series& observations) {
  const int L = encoder.config().look_back;
  EncodedSeries out;
  out.source = EncodingSource::Lstm;
  out.values.reserve(observations.size());
  for (std::size_t k = 0; k < observations.size(); ++k) {
    if (k < static_cast<std::size_t>(L)) {
      out.values.push_back(observations[k]);
    } else {
      const Series window(observations.begin() + (k - L), observations.begin() + k);
      out.values.push_back(encoder.predict(window));
    }
  }
  return out;
}

nlohmann::json LstmEncoder::checkpoint() {
  nlohmann::json meta = {{"kind", "lstm"},
                         {"obs_dim", obs_dim_},
                         {"layers", config_.layers},
                         {"hidden", config_.hidden},
                         {"look_back", config_.look_back},
                         {"epochs", config_.epochs},
                         {"batch_size", config_.batch_size},
                         {"train_fraction", config_.train_fraction},
                         {"clip_norm", config_.clip_norm},
                         {"adam", adam_json(config_.adam)},
                         {"seed", config_.seed},
                         {"normalizer", normalizer_json(norm_)}};
  return nn::save_params(params(), meta);
}

LstmEncoder LstmEncoder::from_checkpoint(const nlohmann::json& ckpt) {
  const auto& meta = ckpt.at("meta");
  if (meta.value("kind", "") != "lstm") throw std::runtime_error("checkpoint is not an LSTM encoder");
  LstmConfig c;
  c.layers = meta.at("layers");
  c.hidden = meta.at("hidden");
  c.look_back = meta.at("look_back");
  c.epochs = meta.at("epochs");
  c.batch_size = meta.at("batch_size");
  c.train_fraction = meta.at("train_fraction");
  c.clip_norm = meta.at("clip_norm");
  c.adam = adam_from_json(meta.at("adam"));
  c.seed = meta.at("seed");
  LstmEncoder enc(meta.at("obs_dim").get<int>(), c);
  nn::load_params(ckpt, enc.params());
  enc.norm_ = normalizer_from_json(meta.at("normalizer"));
  return enc;
}

// ---- Transformer ------------------------------------------------------------

TransformerEncoder::TransformerEncoder(int obs_dim, int length, const TransformerConfig& config)
    : obs_dim_(obs_dim), length_(length), config_(config) {
  config_.validate();
  if (length < 1) throw std::invalid_argument("TransformerEncoder: length must be >= 1");
  if (config_.ffn_hidden == 0) config_.ffn_hidden = 4 * length;
  if (config_.attn_hidden == 0) config_.attn_hidden = length;
  Rng rng(config_.seed);
  embed_ = nn::Dense("transformer.embed", obs_dim, config_.model_dim, rng);
  for (int b = 0; b < config_.blocks; ++b) {
    blocks_.emplace_back("transformer.block" + std::to_string(b), config_.model_dim,
                         config_.heads, config_.ffn_hidden, config_.dropout_rate, rng);
  }
  head_ = nn::Dense("transformer.head", config_.model_dim, obs_dim, rng);
  norm_.mean = Vec::Zero(obs_dim);
  norm_.scale = Vec::Ones(obs_dim);
}

std::vector<nn::Param*> TransformerEncoder::params() {
  std::vector<nn::Param*> out = embed_.params();
  for (auto& b : blocks_) {
    for (nn::Param* p : b.params()) out.push_back(p);
  }
  for (nn::Param* p : head_.params()) out.push_back(p);
  return out;
}

Mat TransformerEncoder::forward(const Mat& x, bool training, Rng* rng, Cache* cache) const {
  Mat h = embed_.forward(x) + nn::positional_encoding_matrix(config_.model_dim, static_cast<int>(x.cols()));
  Mat mask;
  if (training && config_.dropout_rate > 0.0) {
    mask = nn::dropout_mask(h.rows(), h.cols(), config_.dropout_rate, *rng);
    h = h.cwiseProduct(mask);
  }
  if (cache) {
    cache->input = x;
    cache->input_mask = mask;
    cache->blocks.assign(blocks_.size(), {});
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = blocks_[b].forward(h, training, rng, cache ? &cache->blocks[b] : nullptr);
  }
  if (cache) cache->top = h;
  return head_.forward(h);
}

void TransformerEncoder::backward(const Cache& cache, const Mat& dy) {
  Mat dh = head_.backward(cache.top, dy);
  for (std::size_t b = blocks_.size(); b-- > 0;) dh = blocks_[b].backward(cache.blocks[b], dh);
  if (cache.input_mask.size()) dh = dh.cwiseProduct(cache.input_mask);
  embed_.backward(cache.input, dh);
}

double TransformerEncoder::loss(const Mat& x, const Mat& mask, bool training, Rng* rng,
                                bool accumulate_grad) {
  Cache cache;
  const Mat y = forward(x, training, rng, accumulate_grad ? &cache : nullptr);
  Mat dy;
  const double l = nn::mse_loss(y, x, accumulate_grad ? &dy : nullptr, mask);
  if (accumulate_grad) backward(cache, dy);
  return l;
}

namespace {

Mat to_matrix(const Series& s, const Normalizer& n) {
  const Eigen::Index dim = s.empty() ? 0 : s.front().size();
  Mat x(dim, static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = n.apply(s[k]);
  return x;
}

}  // namespace

Series TransformerEncoder::reconstruct(const Series& observations) const {
  const Mat z = forward(to_matrix(observations, norm_), false, nullptr, nullptr);
  Series out;
  out.reserve(observations.size());
  for (Eigen::Index k = 0; k < z.cols(); ++k) out.push_back(norm_.invert(z.col(k)));
  return out;
}

TransformerEncoder train_transformer(const Series& observations, const TransformerConfig& config) {
  config.validate();
  if (observations.size() < 2) {
    throw std::invalid_argument("train_transformer: need at least 2 observations");
  }
  const int dim = static_cast<int>(observations.front().size());
  const int n = static_cast<int>(observations.size());
  TransformerEncoder enc(dim, n, config);
  const int n_train = std::clamp(
      static_cast<int>(std::floor(config.train_fraction * static_cast<double>(n))), 1, n);
  enc.norm_ = Normalizer::fit(observations, static_cast<std::size_t>(n_train));
  const Mat x = to_matrix(observations, enc.norm_);
  Mat train_mask = Mat::Zero(dim, n);
  train_mask.leftCols(n_train).setOnes();
  const Mat heldout_mask = Mat::Ones(dim, n) - train_mask;

  Rng rng(config.seed ^ 0x2545f4914f6cdd1dULL);
  const std::vector<nn::Param*> params = enc.params();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    TransformerEncoder::Cache cache;
    const Mat y = enc.forward(x, true, &rng, &cache);
    Mat dy;
    const double loss = nn::mse_loss(y, x, &dy, train_mask);
    require_finite_loss(loss, "train_transformer", epoch);
    enc.backward(cache, dy);
    nn::clip_grad_norm(params, config.clip_norm);
    for (nn::Param* p : params) nn::adam_step(*p, config.adam);
  }

  // Report in raw units.
  const Series rec = enc.reconstruct(observations);
  auto loss_over = [&](int begin, int end) {
    if (begin >= end) return 0.0;
    double s = 0.0;
    for (int k = begin; k < end; ++k) s += (rec[k] - observations[k]).squaredNorm();
    return s / static_cast<double>((end - begin) * dim);
  };
  enc.report_.epochs = config.epochs;
  enc.report_.train_loss = loss_over(0, n_train);
  enc.report_.heldout_loss = loss_over(n_train, n);
  require_finite_loss(enc.report_.train_loss, "train_transformer", config.epochs);
  return enc;
}

EncodedSeries transformer_encode(const TransformerEncoder& encoder, const Series& observations) {
  EncodedSeries out;
  out.source = EncodingSource::Transformer;
  out.values = encoder.reconstruct(observations);
  return out;
}

EncodedSeries tl_encode(const Series& observations, const TransformerConfig& t_config,
                        const LstmConfig& l_config) {
  t_config.validate();
  l_config.validate();
  const TransformerEncoder t = train_transformer(observations, t_config);
  const EncodedSeries stage1 = transformer_encode(t, observations);
  const LstmEncoder l = train_lstm(stage1.values, l_config);
  EncodedSeries out = lstm_encode(l, stage1.values);
  out.source = EncodingSource::TransformerLstm;
  return out;
}

nlohmann::json TransformerEncoder::checkpoint() {
  nlohmann::json meta = {{"kind", "transformer"},
                         {"obs_dim", obs_dim_},
                         {"length", length_},
                         {"model_dim", config_.model_dim},
                         {"heads", config_.heads},
                         {"blocks", config_.blocks},
                         {"ffn_hidden", config_.ffn_hidden},
                         {"attn_hidden", config_.attn_hidden},
                         {"dropout_rate", config_.dropout_rate},
                         {"epochs", config_.epochs},
                         {"train_fraction", config_.train_fraction},
                         {"clip_norm", config_.clip_norm},
                         {"adam", adam_json(config_.adam)},
                         {"seed", config_.seed},
                         {"normalizer", normalizer_json(norm_)}};
  return nn::save_params(params(), meta);
}

TransformerEncoder TransformerEncoder::from_checkpoint(const nlohmann::json& ckpt) {
  const auto& meta = ckpt.at("meta");
  if (meta.value("kind", "") != "transformer") {
    throw std::runtime_error("checkpoint is not a Transformer encoder");
  }
  TransformerConfig c;
  c.model_dim = meta.at("model_dim");
  c.heads = meta.at("heads");
  c.blocks = meta.at("blocks");
  c.ffn_hidden = meta.at("ffn_hidden");
  c.attn_hidden = meta.at("attn_hidden");
  c.dropout_rate = meta.at("dropout_rate");
  c.epochs = meta.at("epochs");
  c.train_fraction = meta.at("train_fraction");
  c.clip_norm = meta.at("clip_norm");
  c.adam = adam_from_json(meta.at("adam"));
  c.seed = meta.at("seed");
  TransformerEncoder enc(meta.at("obs_dim").get<int>(), meta.at("length").get<int>(), c);
  nn::load_params(ckpt, enc.params());
  enc.norm_ = normalizer_from_json(meta.at("normalizer"));
  return enc;
}

}  // namespace tlkf
