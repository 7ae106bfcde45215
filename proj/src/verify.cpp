#include "tlkf/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include <Eigen/Cholesky>

#include "tlkf/em.hpp"
#include "tlkf/encoders.hpp"
#include "tlkf/neural.hpp"

namespace tlkf::verify {

// ---- joint-Gaussian oracle ---------------------------------------------------

JointPosterior joint_gaussian_posterior(const LinearGaussianModel& m, const Series& y) {
  const Eigen::Index u = m.A.rows();
  const Eigen::Index v = m.C.rows();
  const Eigen::Index n = static_cast<Eigen::Index>(y.size());
  const Eigen::Index dx = (n + 1) * u;
  const Eigen::Index dy = n * v;

  // Prior over the stacked states.
  Vec mu_x(dx);
  Mat s_xx = Mat::Zero(dx, dx);
  mu_x.segment(0, u) = m.m0;
  Mat marginal = m.P0;
  for (Eigen::Index k = 0; k <= n; ++k) {
    if (k > 0) {
      mu_x.segment(k * u, u) = m.A * mu_x.segment((k - 1) * u, u);
      marginal = m.A * marginal * m.A.transpose() + m.Q;
    }
    s_xx.block(k * u, k * u, u, u) = marginal;
    // Cov(x_j, x_k) = A^{j-k} Cov(x_k) for j > k.
    for (Eigen::Index j = k + 1; j <= n; ++j) {
      s_xx.block(j * u, k * u, u, u) = m.A * s_xx.block((j - 1) * u, k * u, u, u);
      s_xx.block(k * u, j * u, u, u) = s_xx.block(j * u, k * u, u, u).transpose();
    }
  }

  Mat c_big = Mat::Zero(dy, dx);
  Mat r_big = Mat::Zero(dy, dy);
  Vec y_big(dy);
  for (Eigen::Index k = 1; k <= n; ++k) {
    c_big.block((k - 1) * v, k * u, v, u) = m.C;
    r_big.block((k - 1) * v, (k - 1) * v, v, v) = m.R;
    y_big.segment((k - 1) * v, v) = y[static_cast<std::size_t>(k - 1)];
  }
  const Vec mu_y = c_big * mu_x;
  const Mat s_xy = s_xx * c_big.transpose();
  const Mat s_yy = c_big * s_xx * c_big.transpose() + r_big;

  // Posterior of all states given the first t observations.
  auto condition = [&](Eigen::Index t, Vec& mean, Mat& cov) {
    mean = mu_x;
    cov = s_xx;
    if (t == 0) return;
    const Eigen::Index d = t * v;
    const Eigen::LDLT<Mat> ldlt(s_yy.topLeftCorner(d, d));
    const Mat gain_t = ldlt.solve(s_xy.leftCols(d).transpose());  // K^T
    mean += gain_t.transpose() * (y_big.head(d) - mu_y.head(d));
    cov -= s_xy.leftCols(d) * gain_t;
    cov = 0.5 * (cov + cov.transpose()).eval();
  };

  JointPosterior out;
  Vec mean;
  Mat cov;
  for (Eigen::Index k = 0; k <= n; ++k) {
    if (k > 0) {
      condition(k - 1, mean, cov);
      out.predicted.push_back({mean.segment(k * u, u), cov.block(k * u, k * u, u, u)});
    }
    condition(k, mean, cov);
    out.filtered.push_back({mean.segment(k * u, u), cov.block(k * u, k * u, u, u)});
  }
  condition(n, mean, cov);
  for (Eigen::Index k = 0; k <= n; ++k) {
    out.smoothed.push_back({mean.segment(k * u, u), cov.block(k * u, k * u, u, u)});
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const Mat lag = cov.block((k + 1) * u, k * u, u, u);
    out.lag_one_cov.push_back(lag);
    out.cross_moment.push_back(lag + mean.segment((k + 1) * u, u) *
                                         mean.segment(k * u, u).transpose());
  }

  if (dy > 0) {
    const Eigen::LLT<Mat> llt(s_yy);
    const Vec r = y_big - mu_y;
    const Mat l = llt.matrixL();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    out.log_likelihood = -0.5 * (r.dot(llt.solve(r)) + logdet +
                                 static_cast<double>(dy) * std::log(2.0 * std::numbers::pi));
  }
  return out;
}

namespace {

Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

Mat random_spd(Rng& rng, Eigen::Index dim) {
  const Mat b = random_matrix(rng, dim, dim, 1.0);
  return b * b.transpose() + 0.1 * Mat::Identity(dim, dim);
}

double max_abs(const Mat& a, const Mat& b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

double belief_dev(const GaussianBelief& a, const GaussianBelief& b) {
  return std::max(max_abs(a.mean, b.mean), max_abs(a.cov, b.cov));
}

}  // namespace

LinearGaussianModel random_model(Rng& rng, int state_dim, int obs_dim) {
  LinearGaussianModel m;
  m.A = random_matrix(rng, state_dim, state_dim, 1.0);
  m.C = random_matrix(rng, obs_dim, state_dim, 1.0);
  m.Q = random_spd(rng, state_dim);
  m.R = random_spd(rng, obs_dim);
  m.m0 = random_matrix(rng, state_dim, 1, 1.0);
  m.P0 = random_spd(rng, state_dim);
  return m;
}

double OracleDeviation::moments() const {
  return std::max({predicted, filtered, smoothed, lag_one, cross_moment});
}

void OracleDeviation::merge(const OracleDeviation& o) {
  models += o.models;
  predicted = std::max(predicted, o.predicted);
  filtered = std::max(filtered, o.filtered);
  smoothed = std::max(smoothed, o.smoothed);
  lag_one = std::max(lag_one, o.lag_one);
  cross_moment = std::max(cross_moment, o.cross_moment);
  log_likelihood = std::max(log_likelihood, o.log_likelihood);
}

OracleDeviation compare_with_oracle(const LinearGaussianModel& model, const Series& observations) {
  const JointPosterior ref = joint_gaussian_posterior(model, observations);
  const FilterResult f = kf_filter(model, observations);
  const SmootherResult s = ks_smooth(model, f);
  const SufficientStats stats = collect_stats(s);

  OracleDeviation d;
  d.models = 1;
  for (std::size_t k = 0; k < ref.predicted.size(); ++k) {
    d.predicted = std::max(d.predicted, belief_dev(ref.predicted[k], f.predicted[k]));
  }
  for (std::size_t k = 0; k < ref.filtered.size(); ++k) {
    d.filtered = std::max(d.filtered, belief_dev(ref.filtered[k], f.filtered[k]));
    d.smoothed = std::max(d.smoothed, belief_dev(ref.smoothed[k], s.smoothed[k]));
  }
  for (std::size_t k = 0; k < ref.lag_one_cov.size(); ++k) {
    d.lag_one = std::max(d.lag_one, max_abs(ref.lag_one_cov[k], s.lag_one_cov[k]));
    d.cross_moment = std::max(d.cross_moment, max_abs(ref.cross_moment[k], stats.exx1[k]));
  }
  d.log_likelihood = std::abs(ref.log_likelihood - f.log_likelihood);
  return d;
}

OracleDeviation run_oracle_suite(int models, std::uint64_t seed) {
  Rng rng(seed);
  OracleDeviation total;
  for (int i = 0; i < models; ++i) {
    const int u = 1 + static_cast<int>(rng.next_u64() % 3);
    const int v = 1 + static_cast<int>(rng.next_u64() % 2);
    const int n = 1 + static_cast<int>(rng.next_u64() % 6);
    const LinearGaussianModel m = random_model(rng, u, v);
    Series y;
    for (int k = 0; k < n; ++k) y.push_back(random_matrix(rng, v, 1, 2.0));
    total.merge(compare_with_oracle(m, y));
  }
  return total;
}

// ---- finite differences ------------------------------------------------------

double relative_error(const Mat& analytic, const Mat& numeric) {
  const double denom = std::max(analytic.norm() + numeric.norm(), 1e-10);
  return (analytic - numeric).norm() / denom;
}

namespace {

using Loss = std::function<double()>;

class Checker {
 public:
  explicit Checker(std::vector<GradCheck>& out) : out_(out) {}

  void begin(const std::string& name) { out_.push_back({name, 0.0, 0}); }

  /// Compares `analytic` with central differences of `loss` in `x`.
  void tensor(Mat& x, const Mat& analytic, const Loss& loss) {
    const double h = kFiniteDifferenceStep;
    Mat numeric(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + h;
      const double up = loss();
      x.data()[i] = keep - h;
      const double down = loss();
      x.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    GradCheck& g = out_.back();
    g.max_rel_error = std::max(g.max_rel_error, relative_error(analytic, numeric));
    g.entries += static_cast<long>(x.size());
  }

  /// Every parameter in `params`; their .grad must hold the analytic values.
  void params(const std::vector<nn::Param*>& params, const Loss& loss) {
    for (nn::Param* p : params) {
      const Mat analytic = p->grad;
      tensor(p->value, analytic, loss);
    }
  }

 private:
  std::vector<GradCheck>& out_;
};

void zero(const std::vector<nn::Param*>& params) {
  for (nn::Param* p : params) p->zero_grad();
}

// Nudges entries away from the ReLU kink so the central difference is smooth.
Mat away_from_zero(Mat x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (std::abs(x.data()[i]) < 0.05) x.data()[i] = x.data()[i] < 0 ? -0.05 : 0.05;
  }
  return x;
}

double contract(const Mat& a, const Mat& b) { return a.cwiseProduct(b).sum(); }

}  // namespace

std::vector<GradCheck> run_gradchecks(std::uint64_t seed) {
  std::vector<GradCheck> out;
  Checker check(out);
  Rng rng(seed);

  {
    check.begin("sigmoid");
    Mat x = random_matrix(rng, 3, 4, 3.0);
    const Mat r = random_matrix(rng, 3, 4, 1.0);
    const Mat g = nn::sigmoid_backward(nn::sigmoid(x), r);
    check.tensor(x, g, [&] { return contract(r, nn::sigmoid(x)); });
  }
  {
    check.begin("tanh");
    Mat x = random_matrix(rng, 3, 4, 3.0);
    const Mat r = random_matrix(rng, 3, 4, 1.0);
    const Mat g = nn::tanh_backward(nn::tanh(x), r);
    check.tensor(x, g, [&] { return contract(r, nn::tanh(x)); });
  }
  {
    check.begin("relu");
    Mat x = away_from_zero(random_matrix(rng, 3, 4, 2.0));
    const Mat r = random_matrix(rng, 3, 4, 1.0);
    const Mat g = nn::relu_backward(x, r);
    check.tensor(x, g, [&] { return contract(r, nn::relu(x)); });
  }
  {
    check.begin("mse_loss");
    Mat pred = random_matrix(rng, 2, 5, 1.0);
    const Mat target = random_matrix(rng, 2, 5, 1.0);
    Mat mask = Mat::Ones(2, 5);
    mask.rightCols(2).setZero();
    Mat g;
    nn::mse_loss(pred, target, &g, mask);
    check.tensor(pred, g, [&] { return nn::mse_loss(pred, target, nullptr, mask); });
  }
  {
    check.begin("dense");
    nn::Dense layer("dense", 4, 3, rng);
    Mat x = random_matrix(rng, 4, 5, 1.0);
    const Mat r = random_matrix(rng, 3, 5, 1.0);
    zero(layer.params());
    const Mat dx = layer.backward(x, r);
    const Loss loss = [&] { return contract(r, layer.forward(x)); };
    check.tensor(x, dx, loss);
    check.params(layer.params(), loss);
  }
  {
    check.begin("layer_norm");
    nn::LayerNorm layer("norm", 5);
    for (nn::Param* p : layer.params()) p->value += random_matrix(rng, 5, 1, 0.5);
    Mat x = random_matrix(rng, 5, 4, 2.0);
    const Mat r = random_matrix(rng, 5, 4, 1.0);
    zero(layer.params());
    nn::LayerNorm::Cache cache;
    layer.forward(x, &cache);
    const Mat dx = layer.backward(cache, r);
    const Loss loss = [&] { return contract(r, layer.forward(x)); };
    check.tensor(x, dx, loss);
    check.params(layer.params(), loss);
  }
  {
    check.begin("scaled_dot_attention");
    Mat q = random_matrix(rng, 4, 3, 1.0);
    Mat k = random_matrix(rng, 4, 5, 1.0);
    Mat v = random_matrix(rng, 2, 5, 1.0);
    const Mat r = random_matrix(rng, 2, 3, 1.0);
    nn::AttentionCache cache;
    nn::scaled_dot_attention(q, k, v, &cache);
    const nn::AttentionGrads g = nn::scaled_dot_attention_backward(cache, r);
    const Loss loss = [&] { return contract(r, nn::scaled_dot_attention(q, k, v)); };
    check.tensor(q, g.dq, loss);
    check.tensor(k, g.dk, loss);
    check.tensor(v, g.dv, loss);
  }
  {
    // Four heads, model dim 8, three positions; self- and cross-attention.
    check.begin("multi_head_attention");
    nn::MultiHeadAttention attn("mha", 8, 4, rng);
    Mat x = random_matrix(rng, 8, 3, 1.0);
    Mat mem = random_matrix(rng, 8, 4, 1.0);
    const Mat r = random_matrix(rng, 8, 3, 1.0);
    zero(attn.params());
    nn::MultiHeadAttention::Cache cache;
    attn.forward(x, x, &cache);
    auto [dq, dkv] = attn.backward(cache, r);
    const Loss self = [&] { return contract(r, attn.forward(x, x)); };
    check.tensor(x, dq + dkv, self);
    check.params(attn.params(), self);

    zero(attn.params());
    attn.forward(x, mem, &cache);
    auto [cq, cm] = attn.backward(cache, r);
    const Loss cross = [&] { return contract(r, attn.forward(x, mem)); };
    check.tensor(x, cq, cross);
    check.tensor(mem, cm, cross);
  }
  {
    check.begin("feed_forward");
    nn::FeedForward ffn("ffn", 4, 6, rng);
    Mat x = random_matrix(rng, 4, 3, 1.0);
    const Mat r = random_matrix(rng, 4, 3, 1.0);
    zero(ffn.params());
    nn::FeedForward::Cache cache;
    ffn.forward(x, &cache);
    const Mat dx = ffn.backward(cache, r);
    const Loss loss = [&] { return contract(r, ffn.forward(x)); };
    check.tensor(x, dx, loss);
    check.params(ffn.params(), loss);
  }
  {
    // Dropout active: every evaluation redraws the same masks from a fresh Rng.
    check.begin("encoder_block");
    nn::EncoderBlock block("block", 8, 2, 12, 0.2, rng);
    Mat x = random_matrix(rng, 8, 4, 1.0);
    const Mat r = random_matrix(rng, 8, 4, 1.0);
    const std::uint64_t mask_seed = rng.next_u64();
    zero(block.params());
    nn::EncoderBlock::Cache cache;
    Rng fwd(mask_seed);
    block.forward(x, true, &fwd, &cache);
    const Mat dx = block.backward(cache, r);
    const Loss loss = [&] {
      Rng masks(mask_seed);
      return contract(r, block.forward(x, true, &masks));
    };
    check.tensor(x, dx, loss);
    check.params(block.params(), loss);
  }
  {
    check.begin("lstm_layer");
    nn::LstmLayer layer("lstm", 2, 3, rng);
    std::vector<Mat> xs;
    std::vector<Mat> rs;
    for (int t = 0; t < 4; ++t) {
      xs.push_back(random_matrix(rng, 2, 2, 1.0));
      rs.push_back(random_matrix(rng, 3, 2, 1.0));
    }
    zero(layer.params());
    nn::LstmLayer::Cache cache;
    layer.forward(xs, &cache);
    const std::vector<Mat> dxs = layer.backward(cache, rs);
    const Loss loss = [&] {
      const std::vector<Mat> hs = layer.forward(xs);
      double s = 0.0;
      for (std::size_t t = 0; t < hs.size(); ++t) s += contract(rs[t], hs[t]);
      return s;
    };
    for (std::size_t t = 0; t < xs.size(); ++t) check.tensor(xs[t], dxs[t], loss);
    check.params(layer.params(), loss);
  }
  {
    check.begin("lstm_encoder");
    LstmConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 4;
    cfg.look_back = 3;
    cfg.seed = rng.next_u64();
    LstmEncoder enc(1, cfg);
    std::vector<Mat> steps;
    for (int t = 0; t < cfg.look_back; ++t) steps.push_back(random_matrix(rng, 1, 3, 1.0));
    const Mat target = random_matrix(rng, 1, 3, 1.0);
    zero(enc.params());
    enc.loss(steps, target, true);
    check.params(enc.params(), [&] { return enc.loss(steps, target, false); });
  }
  {
    check.begin("transformer_encoder");
    TransformerConfig cfg;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.dropout_rate = 0.1;
    cfg.seed = rng.next_u64();
    TransformerEncoder enc(1, 6, cfg);
    const Mat x = random_matrix(rng, 1, 6, 1.0);
    Mat mask = Mat::Ones(1, 6);
    mask.rightCols(2).setZero();
    const std::uint64_t mask_seed = rng.next_u64();
    zero(enc.params());
    Rng fwd(mask_seed);
    enc.loss(x, mask, true, &fwd, true);
    check.params(enc.params(), [&] {
      Rng masks(mask_seed);
      return enc.loss(x, mask, true, &masks, false);
    });
  }
  return out;
}

}  // namespace tlkf::verify
