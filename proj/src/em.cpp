#include "tlkf/em.hpp"

#include <algorithm>
#include <cmath>

namespace tlkf {

const char* param_name(ModelParam p) {
  switch (p) {
    case ModelParam::A: return "A";
    case ModelParam::C: return "C";
    case ModelParam::Q: return "Q";
    case ModelParam::R: return "R";
    case ModelParam::M0: return "m0";
    case ModelParam::P0: return "P0";
  }
  return "?";
}

void EmConfig::validate() const {
  if (max_iter < 1) throw std::invalid_argument("EmConfig: max_iter must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("EmConfig: tol must be positive");
}

SufficientStats collect_stats(const SmootherResult& smoother) {
  const std::size_t n = smoother.lag_one_cov.size();
  if (smoother.smoothed.size() != n + 1) {
    throw std::invalid_argument("collect_stats: smoother result is incomplete");
  }
  SufficientStats s;
  s.ex.reserve(n + 1);
  s.exx.reserve(n + 1);
  s.exx1.reserve(n);
  for (const auto& b : smoother.smoothed) {
    s.ex.push_back(b.mean);
    s.exx.push_back(symmetrize(b.cov + b.mean * b.mean.transpose()));
  }
  for (std::size_t k = 0; k < n; ++k) {
    s.exx1.push_back(smoother.lag_one_cov[k] +
                     smoother.smoothed[k + 1].mean * smoother.smoothed[k].mean.transpose());
  }
  return s;
}

Mat project_isotropic(const Mat& cov) {
  const double order = static_cast<double>(cov.rows());
  return (cov.trace() / order) * Mat::Identity(cov.rows(), cov.cols());
}

Vec project_mean(const Vec& m0) {
  Vec out = Vec::Zero(m0.size());
  if (m0.size() > 0) out(m0.size() - 1) = m0(m0.size() - 1);
  return out;
}

// Sums run over every transition x_{k-1} -> x_k and every observation y_k,
// k = 1..N, which makes each update the exact maximizer of the expected
// complete-data log-likelihood.
LinearGaussianModel m_step(const SufficientStats& stats, const Series& observations,
                           const LinearGaussianModel& current, const EmConfig& config) {
  const std::size_t n = observations.size();
  if (stats.ex.size() != n + 1 || stats.exx.size() != n + 1 || stats.exx1.size() != n) {
    throw std::invalid_argument("m_step: statistics do not match " + std::to_string(n) +
                                " observations");
  }
  const ParamSet& free = config.free_params;
  LinearGaussianModel next = current;
  if (free.empty() || n == 0) return next;
  const double dn = static_cast<double>(n);

  const Eigen::Index u = current.state_dim();
  const Eigen::Index v = current.obs_dim();

  // sum_{k=1}^{N} E[x_k x_{k-1}^T], sum E[x_{k-1} x_{k-1}^T], sum E[x_k x_k^T]
  Mat s10 = Mat::Zero(u, u);
  Mat s00 = Mat::Zero(u, u);
  Mat s11 = Mat::Zero(u, u);
  for (std::size_t k = 1; k <= n; ++k) {
    s10 += stats.exx1[k - 1];
    s00 += stats.exx[k - 1];
    s11 += stats.exx[k];
  }

  if (free.contains(ModelParam::A)) {
    next.A = spd_solve(symmetrize(s00), s10.transpose()).transpose();
  }
  if (free.contains(ModelParam::C)) {
    Mat yx = Mat::Zero(v, u);
    for (std::size_t k = 1; k <= n; ++k) yx += observations[k - 1] * stats.ex[k].transpose();
    next.C = spd_solve(symmetrize(s11), yx.transpose()).transpose();
  }
  if (free.contains(ModelParam::M0)) {
    next.m0 = stats.ex[0];
  }
  if (free.contains(ModelParam::Q)) {
    const Mat& A = next.A;
    Mat q = s11 - A * s10.transpose() - s10 * A.transpose() + A * s00 * A.transpose();
    next.Q = symmetrize(q / dn);
  }
  if (free.contains(ModelParam::R)) {
    const Mat& C = next.C;
    Mat r = Mat::Zero(v, v);
    for (std::size_t k = 1; k <= n; ++k) {
      const Vec& y = observations[k - 1];
      const Vec& m = stats.ex[k];
      const Mat cov = stats.exx[k] - m * m.transpose();
      const Vec res = y - C * m;
      r += res * res.transpose() + C * cov * C.transpose();
    }
    next.R = symmetrize(r / dn);
  }
  if (free.contains(ModelParam::P0)) {
    const Vec& m0 = next.m0;
    const Vec& e0 = stats.ex[0];
    next.P0 = symmetrize(stats.exx[0] - m0 * e0.transpose() - e0 * m0.transpose() +
                         m0 * m0.transpose());
  }

  if (config.structural_projection) {
    if (free.contains(ModelParam::Q)) next.Q = project_isotropic(next.Q);
    if (free.contains(ModelParam::R)) next.R = project_isotropic(next.R);
    if (free.contains(ModelParam::P0)) next.P0 = project_isotropic(next.P0);
    if (free.contains(ModelParam::M0)) next.m0 = project_mean(next.m0);
  }
  return next;
}

double param_change(const LinearGaussianModel& a, const LinearGaussianModel& b,
                    const ParamSet& free) {
  double d = 0.0;
  auto upd = [&d](const Mat& x, const Mat& y) { d = std::max(d, (x - y).cwiseAbs().maxCoeff()); };
  if (free.contains(ModelParam::A)) upd(a.A, b.A);
  if (free.contains(ModelParam::C)) upd(a.C, b.C);
  if (free.contains(ModelParam::Q)) upd(a.Q, b.Q);
  if (free.contains(ModelParam::R)) upd(a.R, b.R);
  if (free.contains(ModelParam::M0)) upd(a.m0, b.m0);
  if (free.contains(ModelParam::P0)) upd(a.P0, b.P0);
  return d;
}

EmReport em_fit(const Series& observations, const LinearGaussianModel& init,
                const EmConfig& config) {
  config.validate();
  init.validate();
  EmReport rep;
  rep.fitted = init;
  for (int it = 0; it < config.max_iter; ++it) {
    LinearGaussianModel next;
    try {
      const FilterResult filt = kf_filter(rep.fitted, observations);
      const SmootherResult sm = ks_smooth(rep.fitted, filt);
      rep.loglik_history.push_back(filt.log_likelihood);
      next = m_step(collect_stats(sm), observations, rep.fitted, config);
    } catch (const std::runtime_error& e) {
      throw EmError("em_fit: iteration " + std::to_string(it) + " failed: " + e.what(), it,
                    rep.loglik_history);
    }
    rep.iterations_run = it + 1;
    const double change = param_change(next, rep.fitted, config.free_params);
    rep.fitted = std::move(next);
    if (change < config.tol) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

namespace {

nlohmann::json mat_json(const Mat& m) {
  nlohmann::json values = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) values.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", values}};
}

}  // namespace

nlohmann::json model_to_json(const LinearGaussianModel& m) {
  return {{"A", mat_json(m.A)},   {"C", mat_json(m.C)},   {"Q", mat_json(m.Q)},
          {"R", mat_json(m.R)},   {"m0", mat_json(m.m0)}, {"P0", mat_json(m.P0)}};
}

nlohmann::json em_report_to_json(const EmReport& r) {
  return {{"fitted", model_to_json(r.fitted)},
          {"loglik_history", r.loglik_history},
          {"iterations_run", r.iterations_run},
          {"converged", r.converged}};
}

}  // namespace tlkf
