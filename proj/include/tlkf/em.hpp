#pragma once

#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"

#include "tlkf/kalman.hpp"

namespace tlkf {

enum class ModelParam { A, C, Q, R, M0, P0 };

/// Small set of ModelParam values.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(std::initializer_list<ModelParam> params) {
    for (ModelParam p : params) insert(p);
  }
  void insert(ModelParam p) { bits_ |= bit(p); }
  bool contains(ModelParam p) const { return (bits_ & bit(p)) != 0; }
  bool empty() const { return bits_ == 0; }
  bool operator==(const ParamSet&) const = default;

 private:
  static unsigned bit(ModelParam p) { return 1u << static_cast<unsigned>(p); }
  unsigned bits_ = 0;
};

const char* param_name(ModelParam p);

struct SufficientStats {
  std::vector<Vec> ex;   // E[x_k], k = 0..N
  std::vector<Mat> exx;  // E[x_k x_k^T], k = 0..N
  std::vector<Mat> exx1; // E[x_{k+1} x_k^T], k = 0..N-1
};

struct EmConfig {
  int max_iter = 10;
  double tol = 1e-6;
  ParamSet free_params{ModelParam::Q, ModelParam::R, ModelParam::M0, ModelParam::P0};
  bool structural_projection = true;

  void validate() const;
};

struct EmReport {
  LinearGaussianModel fitted;
  std::vector<double> loglik_history;
  int iterations_run = 0;
  bool converged = false;
};

/// Raised when an EM iteration cannot be completed. Carries the iteration
/// (zero-based) and the log-likelihoods recorded before the failure.
class EmError : public std::runtime_error {
 public:
  EmError(const std::string& what, int iteration, std::vector<double> partial)
      : std::runtime_error(what), iteration_(iteration), partial_(std::move(partial)) {}
  int iteration() const noexcept { return iteration_; }
  const std::vector<double>& partial_history() const noexcept { return partial_; }

 private:
  int iteration_;
  std::vector<double> partial_;
};

SufficientStats collect_stats(const SmootherResult& smoother);

/// Covariances become (trace/order) I; the mean keeps only its last component.
Mat project_isotropic(const Mat& cov);
Vec project_mean(const Vec& m0);

/// Closed-form maximizers of the expected complete-data log-likelihood for
/// each free parameter; others pass through. Throws NotPositiveDefinite when
/// the normal equations for A or C are singular.
LinearGaussianModel m_step(const SufficientStats& stats, const Series& observations,
                           const LinearGaussianModel& current, const EmConfig& config);

/// Largest absolute entrywise change over the free parameters.
double param_change(const LinearGaussianModel& a, const LinearGaussianModel& b,
                    const ParamSet& free_params);

EmReport em_fit(const Series& observations, const LinearGaussianModel& init,
                const EmConfig& config);

nlohmann::json model_to_json(const LinearGaussianModel& m);
nlohmann::json em_report_to_json(const EmReport& r);

}  // namespace tlkf
