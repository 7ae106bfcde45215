#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tlkf/kalman.hpp"

// Independent reference computations used by the tests and by the `oracle`
// and `gradcheck` CLI subcommands. Nothing here calls the filter, smoother or
// backward passes it is meant to check, except to compare against them.

namespace tlkf::verify {

/// Exact posterior moments obtained by writing down the joint normal of
/// (x_0..x_N, y_1..y_N) and conditioning on the observations directly.
struct JointPosterior {
  std::vector<GaussianBelief> predicted;  // x_k | y_{1:k-1}, k = 1..N (index k-1)
  std::vector<GaussianBelief> filtered;   // x_k | y_{1:k},   k = 0..N
  std::vector<GaussianBelief> smoothed;   // x_k | y_{1:N},   k = 0..N
  std::vector<Mat> lag_one_cov;           // Cov(x_{k+1}, x_k | y_{1:N}), k = 0..N-1
  std::vector<Mat> cross_moment;          // E[x_{k+1} x_k^T | y_{1:N}],  k = 0..N-1
  double log_likelihood = 0.0;            // log p(y_{1:N})
};

JointPosterior joint_gaussian_posterior(const LinearGaussianModel& model, const Series& observations);

/// Random model with well-conditioned SPD covariances.
LinearGaussianModel random_model(Rng& rng, int state_dim, int obs_dim);

/// Largest absolute deviations between the recursive code and the oracle.
struct OracleDeviation {
  int models = 0;
  double predicted = 0.0;
  double filtered = 0.0;
  double smoothed = 0.0;
  double lag_one = 0.0;
  double cross_moment = 0.0;
  double log_likelihood = 0.0;

  /// Worst deviation over all moments (log-likelihood excluded).
  double moments() const;
  void merge(const OracleDeviation& other);
};

OracleDeviation compare_with_oracle(const LinearGaussianModel& model, const Series& observations);

/// `models` random systems with state_dim <= 3, obs_dim <= 2, N <= 6.
OracleDeviation run_oracle_suite(int models, std::uint64_t seed);

struct GradCheck {
  std::string name;
  double max_rel_error = 0.0;
  long entries = 0;
};

/// Relative error ||a - n|| / max(||a|| + ||n||, 1e-10) between an analytic
/// and a numeric gradient.
double relative_error(const Mat& analytic, const Mat& numeric);

/// Central differences of every differentiable piece (activations, loss,
/// dense, layer norm, attention, multi-head attention, feed-forward, encoder
/// block, LSTM layer, both full encoders). Step 1e-5.
std::vector<GradCheck> run_gradchecks(std::uint64_t seed);

inline constexpr double kFiniteDifferenceStep = 1e-5;

}  // namespace tlkf::verify
