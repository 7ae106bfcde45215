#include "tlkf/kalman.hpp"

#include <cmath>
#include <numbers>

namespace tlkf {

GaussianBelief kf_predict(const LinearGaussianModel& model, const GaussianBelief& belief) {
  if (belief.mean.size() != model.state_dim() || belief.cov.rows() != model.state_dim()) {
    throw std::invalid_argument("kf_predict: belief of dimension " +
                                std::to_string(belief.mean.size()) + " for state dimension " +
                                std::to_string(model.state_dim()));
  }
  GaussianBelief out;
  out.mean = model.A * belief.mean;
  out.cov = symmetrize(model.A * belief.cov * model.A.transpose() + model.Q);
  return out;
}

UpdateResult kf_update(const LinearGaussianModel& model, const GaussianBelief& predicted,
                       const Vec& y) {
  if (y.size() != model.obs_dim()) {
    throw std::invalid_argument("kf_update: observation of length " + std::to_string(y.size()) +
                                " for observation dimension " +
                                std::to_string(model.obs_dim()));
  }
  const Mat& P = predicted.cov;
  const Mat PCt = P * model.C.transpose();
  const Mat S = symmetrize(model.C * PCt + model.R);
  const Mat L = cholesky(S);

  UpdateResult out;
  out.innovation = y - model.C * predicted.mean;
  // H = P C^T S^{-1}, computed as (S^{-1} C P)^T.
  const Mat SinvCP =
      L.transpose().triangularView<Eigen::Upper>().solve(
          L.triangularView<Eigen::Lower>().solve(PCt.transpose()));
  out.gain = SinvCP.transpose();
  out.posterior.mean = predicted.mean + out.gain * out.innovation;
  const Mat I = Mat::Identity(model.state_dim(), model.state_dim());
  out.posterior.cov = symmetrize((I - out.gain * model.C) * P);

  const Vec z = L.triangularView<Eigen::Lower>().solve(out.innovation);
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  out.log_likelihood = -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) +
                               logdet + z.squaredNorm());
  return out;
}

FilterResult kf_filter(const LinearGaussianModel& model, const Series& observations) {
  const int n = static_cast<int>(observations.size());
  FilterResult res;
  res.filtered.reserve(n + 1);
  res.predicted.reserve(n);
  res.gains.reserve(n);
  res.innovations.reserve(n);
  res.filtered.push_back({model.m0, model.P0});
  for (int k = 1; k <= n; ++k) {
    GaussianBelief pred = kf_predict(model, res.filtered.back());
    UpdateResult upd;
    try {
      upd = kf_update(model, pred, observations[k - 1]);
    } catch (const NotPositiveDefinite& e) {
      throw FilterError("kf_filter: innovation covariance not positive definite at step " +
                            std::to_string(k),
                        k);
    }
    res.log_likelihood += upd.log_likelihood;
    res.predicted.push_back(std::move(pred));
    res.filtered.push_back(std::move(upd.posterior));
    res.gains.push_back(std::move(upd.gain));
    res.innovations.push_back(std::move(upd.innovation));
  }
  return res;
}

SmootherResult ks_smooth(const LinearGaussianModel& model, const FilterResult& filter) {
  const int n = static_cast<int>(filter.predicted.size());
  if (static_cast<int>(filter.filtered.size()) != n + 1) {
    throw std::invalid_argument("ks_smooth: incomplete filter result");
  }
  SmootherResult res;
  res.smoothed.resize(n + 1);
  res.gains.resize(n);
  res.lag_one_cov.resize(n);
  res.smoothed[n] = filter.filtered[n];
  for (int k = n - 1; k >= 0; --k) {
    const GaussianBelief& filt = filter.filtered[k];
    const GaussianBelief& pred = filter.predicted[k];  // m_{k+1|k}, P_{k+1|k}
    const GaussianBelief& next = res.smoothed[k + 1];
    Mat J;
    try {
      // J = P_{k|k} A^T P_{k+1|k}^{-1}  ==  (P_{k+1|k}^{-1} A P_{k|k})^T
      J = spd_solve(pred.cov, model.A * filt.cov).transpose();
    } catch (const NotPositiveDefinite&) {
      throw FilterError("ks_smooth: predicted covariance not invertible at step " +
                            std::to_string(k + 1),
                        k + 1);
    }
    GaussianBelief sm;
    sm.mean = filt.mean + J * (next.mean - pred.mean);
    sm.cov = symmetrize(filt.cov + J * (next.cov - pred.cov) * J.transpose());
    res.lag_one_cov[k] = next.cov * J.transpose();
    res.gains[k] = std::move(J);
    res.smoothed[k] = std::move(sm);
  }
  return res;
}

}  // namespace tlkf
