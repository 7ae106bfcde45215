#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "tlkf/statespace.hpp"

namespace tlkf {

struct GaussianBelief {
  Vec mean;
  Mat cov;
};

/// A filter or smoother step could not proceed (innovation covariance or
/// predicted covariance not positive definite). `step` is the time index k.
class FilterError : public std::runtime_error {
 public:
  FilterError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

struct UpdateResult {
  GaussianBelief posterior;
  Mat gain;
  Vec innovation;
  double log_likelihood = 0.0;
};

struct FilterResult {
  std::vector<GaussianBelief> predicted;  // k = 1..N  (index k-1)
  std::vector<GaussianBelief> filtered;   // k = 0..N
  std::vector<Mat> gains;                 // k = 1..N  (index k-1)
  std::vector<Vec> innovations;           // k = 1..N  (index k-1)
  double log_likelihood = 0.0;
};

struct SmootherResult {
  std::vector<GaussianBelief> smoothed;  // k = 0..N
  std::vector<Mat> gains;                // J_k, k = 0..N-1
  std::vector<Mat> lag_one_cov;          // Cov(x_{k+1}, x_k | y_{1:N}), k = 0..N-1
};

GaussianBelief kf_predict(const LinearGaussianModel& model, const GaussianBelief& belief);

/// Throws NotPositiveDefinite when C P C^T + R is not positive definite.
UpdateResult kf_update(const LinearGaussianModel& model, const GaussianBelief& predicted,
                       const Vec& y);

/// Throws FilterError carrying the failing step.
FilterResult kf_filter(const LinearGaussianModel& model, const Series& observations);

/// Rauch-Tung-Striebel backward pass. Throws FilterError carrying the step.
SmootherResult ks_smooth(const LinearGaussianModel& model, const FilterResult& filter);

}  // namespace tlkf
