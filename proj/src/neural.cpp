#include "tlkf/neural.hpp"

#include <cmath>
#include <stdexcept>

namespace tlkf::nn {

Param::Param(std::string n, Eigen::Index rows, Eigen::Index cols)
    : name(std::move(n)),
      value(Mat::Zero(rows, cols)),
      grad(Mat::Zero(rows, cols)),
      adam_m(Mat::Zero(rows, cols)),
      adam_v(Mat::Zero(rows, cols)) {}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("AdamConfig: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("AdamConfig: beta1 out of range");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("AdamConfig: beta2 out of range");
  if (!(eps > 0.0)) throw std::invalid_argument("AdamConfig: eps must be positive");
}

void adam_step(Param& p, const AdamConfig& c) {
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  p.adam_m = c.beta1 * p.adam_m + (1.0 - c.beta1) * p.grad;
  p.adam_v = c.beta2 * p.adam_v + (1.0 - c.beta2) * p.grad.cwiseProduct(p.grad);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  p.value.array() -=
      c.lr * (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + c.eps);
  p.grad.setZero();
}

double clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Param* p : params) p->grad *= s;
  }
  return norm;
}

void init_uniform(Param& p, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = rng.uniform(-bound, bound);
  }
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  Mat mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) mask(i, j) = rng.uniform() < rate ? 0.0 : keep;
  }
  return mask;
}

Mat dropout(const Mat& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

Mat sigmoid(const Mat& x) {
  return x.unaryExpr([](double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
  });
}

Mat tanh(const Mat& x) { return x.array().tanh().matrix(); }

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat sigmoid_backward(const Mat& y, const Mat& dy) {
  return (dy.array() * y.array() * (1.0 - y.array())).matrix();
}

Mat tanh_backward(const Mat& y, const Mat& dy) {
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

Mat relu_backward(const Mat& x, const Mat& dy) {
  return (dy.array() * (x.array() > 0.0).cast<double>()).matrix();
}

double mse_loss(const Mat& pred, const Mat& target, Mat* grad, const Mat& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("mse_loss: prediction " + shape_str(pred) + " vs target " +
                                shape_str(target));
  }
  Mat diff = pred - target;
  double count = static_cast<double>(diff.size());
  if (mask.size() != 0) {
    if (mask.rows() != pred.rows() || mask.cols() != pred.cols()) {
      throw std::invalid_argument("mse_loss: mask shape " + shape_str(mask));
    }
    diff = diff.cwiseProduct(mask);
    count = mask.sum();
  }
  if (!(count > 0.0)) throw std::invalid_argument("mse_loss: empty selection");
  if (grad) *grad = (2.0 / count) * diff;
  return diff.squaredNorm() / count;
}

// ---- Dense ---------------------------------------------------------------

Dense::Dense(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
    : w_(name + ".weight", out, in), b_(name + ".bias", out, 1) {
  init_uniform(w_, in, rng);
  init_uniform(b_, in, rng);
}

Mat Dense::forward(const Mat& x) const {
  if (x.rows() != w_.value.cols()) {
    throw std::invalid_argument("Dense " + w_.name + ": input " + shape_str(x) +
                                " for weight " + shape_str(w_.value));
  }
  return (w_.value * x).colwise() + b_.value.col(0);
}

Mat Dense::backward(const Mat& x, const Mat& dy) {
  w_.grad.noalias() += dy * x.transpose();
  b_.grad.col(0) += dy.rowwise().sum();
  return w_.value.transpose() * dy;
}

// ---- LayerNorm -----------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, Eigen::Index dim)
    : gain_(name + ".gain", dim, 1), bias_(name + ".bias", dim, 1) {
  gain_.value.setOnes();
}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
  const double d = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Mat centered = x.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.cwiseProduct(centered).colwise().sum() / d;
  const Eigen::RowVectorXd inv_std = (var.array() + kEps).rsqrt().matrix();
  Mat xhat = centered * inv_std.asDiagonal();
  Mat y = (xhat.array().colwise() * gain_.value.col(0).array()).matrix();
  y.colwise() += bias_.value.col(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

Mat LayerNorm::backward(const Cache& c, const Mat& dy) {
  const double d = static_cast<double>(dy.rows());
  gain_.grad.col(0) += dy.cwiseProduct(c.xhat).rowwise().sum();
  bias_.grad.col(0) += dy.rowwise().sum();
  const Mat dxhat = (dy.array().colwise() * gain_.value.col(0).array()).matrix();
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat).colwise().sum();
  Mat dx = d * dxhat;
  dx.rowwise() -= sum_dxhat;
  dx -= c.xhat * sum_dxhat_xhat.asDiagonal();
  return (dx * c.inv_std.asDiagonal()) / d;
}

// ---- attention -------------------------------------------------------------

Mat attention_weights(const Mat& q, const Mat& k) {
  if (q.rows() != k.rows()) {
    throw std::invalid_argument("attention: queries " + shape_str(q) + " and keys " +
                                shape_str(k) + " differ in dimension");
  }
  if (k.cols() == 0) throw std::invalid_argument("attention: no keys");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.rows()));
  Mat s = scale * (k.transpose() * q);
  for (Eigen::Index j = 0; j < s.cols(); ++j) s.col(j) = softmax(s.col(j));
  return s;
}

Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v, AttentionCache* cache) {
  if (k.cols() != v.cols()) {
    throw std::invalid_argument("attention: keys " + shape_str(k) + " and values " +
                                shape_str(v) + " differ in count");
  }
  Mat w = attention_weights(q, k);
  Mat h = v * w;
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->weights = std::move(w);
    cache->scale = 1.0 / std::sqrt(static_cast<double>(q.rows()));
  }
  return h;
}

AttentionGrads scaled_dot_attention_backward(const AttentionCache& c, const Mat& dh) {
  AttentionGrads g;
  g.dv = dh * c.weights.transpose();
  const Mat dw = c.v.transpose() * dh;
  const Eigen::RowVectorXd inner = c.weights.cwiseProduct(dw).colwise().sum();
  Mat ds = dw;
  ds.rowwise() -= inner;
  ds = c.weights.cwiseProduct(ds);
  g.dq = c.scale * (c.k * ds);
  g.dk = c.scale * (c.q * ds.transpose());
  return g;
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Eigen::Index model_dim,
                                       int heads, Rng& rng) {
  if (heads < 1 || model_dim % heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: model dim " + std::to_string(model_dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  const Eigen::Index hd = model_dim / heads;
  for (int h = 0; h < heads; ++h) {
    const std::string p = name + ".head" + std::to_string(h);
    wq_.emplace_back(p + ".query", hd, model_dim);
    wk_.emplace_back(p + ".key", hd, model_dim);
    wv_.emplace_back(p + ".value", hd, model_dim);
    init_uniform(wq_.back(), model_dim, rng);
    init_uniform(wk_.back(), model_dim, rng);
    init_uniform(wv_.back(), model_dim, rng);
  }
  wo_ = Param(name + ".output", model_dim, model_dim);
  init_uniform(wo_, model_dim, rng);
}

Mat MultiHeadAttention::forward(const Mat& xq, const Mat& xkv, Cache* cache) const {
  const Eigen::Index d = wo_.value.rows();
  if (xq.rows() != d || xkv.rows() != d) {
    throw std::invalid_argument("MultiHeadAttention: inputs " + shape_str(xq) + ", " +
                                shape_str(xkv) + " for model dim " + std::to_string(d));
  }
  const Eigen::Index hd = d / heads();
  Mat concat(d, xq.cols());
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->heads.assign(wq_.size(), AttentionCache{});
  }
  for (int h = 0; h < heads(); ++h) {
    AttentionCache* hc = cache ? &cache->heads[h] : nullptr;
    concat.middleRows(h * hd, hd) = scaled_dot_attention(
        wq_[h].value * xq, wk_[h].value * xkv, wv_[h].value * xkv, hc);
  }
  Mat y = wo_.value * concat;
  if (cache) cache->concat = std::move(concat);
  return y;
}

std::pair<Mat, Mat> MultiHeadAttention::backward(const Cache& c, const Mat& dy) {
  const Eigen::Index d = wo_.value.rows();
  const Eigen::Index hd = d / heads();
  wo_.grad.noalias() += dy * c.concat.transpose();
  const Mat dconcat = wo_.value.transpose() * dy;
  Mat dxq = Mat::Zero(c.xq.rows(), c.xq.cols());
  Mat dxkv = Mat::Zero(c.xkv.rows(), c.xkv.cols());
  for (int h = 0; h < heads(); ++h) {
    const AttentionGrads g =
        scaled_dot_attention_backward(c.heads[h], dconcat.middleRows(h * hd, hd));
    wq_[h].grad.noalias() += g.dq * c.xq.transpose();
    wk_[h].grad.noalias() += g.dk * c.xkv.transpose();
    wv_[h].grad.noalias() += g.dv * c.xkv.transpose();
    dxq.noalias() += wq_[h].value.transpose() * g.dq;
    dxkv.noalias() += wk_[h].value.transpose() * g.dk;
    dxkv.noalias() += wv_[h].value.transpose() * g.dv;
  }
  return {std::move(dxq), std::move(dxkv)};
}

std::vector<Param*> MultiHeadAttention::params() {
  std::vector<Param*> out;
  for (std::size_t h = 0; h < wq_.size(); ++h) {
    out.push_back(&wq_[h]);
    out.push_back(&wk_[h]);
    out.push_back(&wv_[h]);
  }
  out.push_back(&wo_);
  return out;
}

// ---- feed-forward / encoder block ----------------------------------------

FeedForward::FeedForward(const std::string& name, Eigen::Index dim, Eigen::Index hidden,
                         Rng& rng)
    : in_(name + ".in", dim, hidden, rng), out_(name + ".out", hidden, dim, rng) {}

Mat FeedForward::forward(const Mat& x, Cache* cache) const {
  Mat pre = in_.forward(x);
  Mat hidden = relu(pre);
  Mat y = out_.forward(hidden);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

Mat FeedForward::backward(const Cache& c, const Mat& dy) {
  Mat dhidden = out_.backward(c.hidden, dy);
  return in_.backward(c.x, relu_backward(c.pre, dhidden));
}

std::vector<Param*> FeedForward::params() {
  auto a = in_.params();
  auto b = out_.params();
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

EncoderBlock::EncoderBlock(const std::string& name, Eigen::Index dim, int heads,
                           Eigen::Index ffn_hidden, double dropout_rate, Rng& rng)
    : attn_(name + ".attn", dim, heads, rng),
      norm1_(name + ".norm1", dim),
      ffn_(name + ".ffn", dim, ffn_hidden, rng),
      norm2_(name + ".norm2", dim),
      dropout_rate_(dropout_rate) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("EncoderBlock: dropout rate must be in [0, 1)");
  }
}

Mat EncoderBlock::forward(const Mat& x, bool training, Rng* rng, Cache* cache) const {
  const bool drop = training && dropout_rate_ > 0.0;
  if (drop && !rng) throw std::invalid_argument("EncoderBlock: training dropout needs an rng");
  MultiHeadAttention::Cache* ac = cache ? &cache->attn : nullptr;
  Mat a = attn_.forward(x, x, ac);
  Mat mask1;
  if (drop) {
    mask1 = dropout_mask(a.rows(), a.cols(), dropout_rate_, *rng);
    a = a.cwiseProduct(mask1);
  }
  Mat x1 = norm1_.forward(x + a, cache ? &cache->norm1 : nullptr);
  Mat f = ffn_.forward(x1, cache ? &cache->ffn : nullptr);
  Mat mask2;
  if (drop) {
    mask2 = dropout_mask(f.rows(), f.cols(), dropout_rate_, *rng);
    f = f.cwiseProduct(mask2);
  }
  Mat y = norm2_.forward(x1 + f, cache ? &cache->norm2 : nullptr);
  if (cache) {
    cache->attn_mask = std::move(mask1);
    cache->ffn_mask = std::move(mask2);
  }
  return y;
}

Mat EncoderBlock::backward(const Cache& c, const Mat& dy) {
  const Mat dr2 = norm2_.backward(c.norm2, dy);
  Mat df = c.ffn_mask.size() ? Mat(dr2.cwiseProduct(c.ffn_mask)) : dr2;
  const Mat dx1 = dr2 + ffn_.backward(c.ffn, df);
  const Mat dr1 = norm1_.backward(c.norm1, dx1);
  Mat da = c.attn_mask.size() ? Mat(dr1.cwiseProduct(c.attn_mask)) : dr1;
  auto [dxq, dxkv] = attn_.backward(c.attn, da);
  return dr1 + dxq + dxkv;
}

std::vector<Param*> EncoderBlock::params() {
  std::vector<Param*> out = attn_.params();
  for (auto* group : {&norm1_, &norm2_}) {
    for (Param* p : group->params()) out.push_back(p);
  }
  for (Param* p : ffn_.params()) out.push_back(p);
  return out;
}

// ---- LSTM ------------------------------------------------------------------

LstmLayer::LstmLayer(const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng)
    : in_(in),
      hidden_(hidden),
      w_(name + ".weight", 4 * hidden, in + hidden),
      b_(name + ".bias", 4 * hidden, 1) {
  init_uniform(w_, hidden, rng);
  init_uniform(b_, hidden, rng);
}

std::vector<Mat> LstmLayer::forward(const std::vector<Mat>& inputs, Cache* cache) const {
  const Eigen::Index H = hidden_;
  std::vector<Mat> out;
  out.reserve(inputs.size());
  if (inputs.empty()) return out;
  const Eigen::Index batch = inputs.front().cols();
  Mat h = Mat::Zero(H, batch);
  Mat c = Mat::Zero(H, batch);
  if (cache) {
    cache->clear();
    cache->reserve(inputs.size());
  }
  for (const Mat& x : inputs) {
    if (x.rows() != in_ || x.cols() != batch) {
      throw std::invalid_argument("LstmLayer: input " + shape_str(x) + " for input dim " +
                                  std::to_string(in_));
    }
    Step s;
    s.z.resize(in_ + H, batch);
    s.z.topRows(in_) = x;
    s.z.bottomRows(H) = h;
    Mat a = (w_.value * s.z).colwise() + b_.value.col(0);
    s.i = sigmoid(a.middleRows(0, H));
    s.f = sigmoid(a.middleRows(H, H));
    s.g = tanh(a.middleRows(2 * H, H));
    s.o = sigmoid(a.middleRows(3 * H, H));
    s.c_prev = c;
    c = s.f.cwiseProduct(c) + s.i.cwiseProduct(s.g);
    s.c = c;
    s.tanh_c = tanh(c);
    h = s.o.cwiseProduct(s.tanh_c);
    out.push_back(h);
    if (cache) cache->push_back(std::move(s));
  }
  return out;
}

std::vector<Mat> LstmLayer::backward(const Cache& cache, const std::vector<Mat>& dh) {
  const Eigen::Index H = hidden_;
  const std::size_t steps = cache.size();
  if (dh.size() != steps) throw std::invalid_argument("LstmLayer::backward: step count mismatch");
  std::vector<Mat> dx(steps);
  if (steps == 0) return dx;
  const Eigen::Index batch = cache.front().z.cols();
  Mat dh_next = Mat::Zero(H, batch);
  Mat dc_next = Mat::Zero(H, batch);
  Mat da(4 * H, batch);
  for (std::size_t t = steps; t-- > 0;) {
    const Step& s = cache[t];
    const Mat dht = dh[t] + dh_next;
    const Mat dc = dc_next + tanh_backward(s.tanh_c, dht.cwiseProduct(s.o));
    const Mat d_o = dht.cwiseProduct(s.tanh_c);
    const Mat d_i = dc.cwiseProduct(s.g);
    const Mat d_g = dc.cwiseProduct(s.i);
    const Mat d_f = dc.cwiseProduct(s.c_prev);
    dc_next = dc.cwiseProduct(s.f);
    da.middleRows(0, H) = sigmoid_backward(s.i, d_i);
    da.middleRows(H, H) = sigmoid_backward(s.f, d_f);
    da.middleRows(2 * H, H) = tanh_backward(s.g, d_g);
    da.middleRows(3 * H, H) = sigmoid_backward(s.o, d_o);
    w_.grad.noalias() += da * s.z.transpose();
    b_.grad.col(0) += da.rowwise().sum();
    const Mat dz = w_.value.transpose() * da;
    dx[t] = dz.topRows(in_);
    dh_next = dz.bottomRows(H);
  }
  return dx;
}

// ---- positional encoding ---------------------------------------------------

double positional_encoding(int position, int slot, int model_dim) {
  if (position < 0 || slot < 0 || slot >= model_dim) {
    throw std::invalid_argument("positional_encoding: slot " + std::to_string(slot) +
                                " outside model dim " + std::to_string(model_dim));
  }
  const int two_lambda = slot - (slot % 2);
  const double angle =
      static_cast<double>(position) /
      std::pow(10000.0, static_cast<double>(two_lambda) / static_cast<double>(model_dim));
  return slot % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Mat positional_encoding_matrix(int model_dim, int length) {
  Mat pe(model_dim, length);
  for (int i = 0; i < length; ++i) {
    for (int j = 0; j < model_dim; ++j) pe(j, i) = positional_encoding(i, j, model_dim);
  }
  return pe;
}

// ---- checkpoints -----------------------------------------------------------

nlohmann::json save_params(const std::vector<Param*>& params, const nlohmann::json& meta) {
  nlohmann::json list = nlohmann::json::array();
  for (const Param* p : params) {
    std::vector<double> values;
    values.reserve(p->value.size());
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) values.push_back(p->value(i, j));
    }
    list.push_back({{"name", p->name},
                    {"shape", {p->value.rows(), p->value.cols()}},
                    {"values", std::move(values)}});
  }
  return {{"format", "tlkf-checkpoint"},
          {"version", kCheckpointVersion},
          {"meta", meta},
          {"params", std::move(list)}};
}

void load_params(const nlohmann::json& ckpt, const std::vector<Param*>& params) {
  if (ckpt.value("format", "") != "tlkf-checkpoint") {
    throw std::runtime_error("checkpoint: unrecognized format");
  }
  if (ckpt.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  const auto& list = ckpt.at("params");
  if (list.size() != params.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                             " parameters, found " + std::to_string(list.size()));
  }
  for (std::size_t n = 0; n < params.size(); ++n) {
    Param& p = *params[n];
    const auto& entry = list[n];
    if (entry.at("name").get<std::string>() != p.name) {
      throw std::runtime_error("checkpoint: parameter " + std::to_string(n) + " is '" +
                               entry.at("name").get<std::string>() + "', expected '" + p.name +
                               "'");
    }
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    }
    const auto values = entry.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != p.value.size()) {
      throw std::runtime_error("checkpoint: value count mismatch for " + p.name);
    }
    std::size_t idx = 0;
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = values[idx++];
    }
  }
}

}  // namespace tlkf::nn
