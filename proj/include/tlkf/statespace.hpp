#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tlkf/numerics.hpp"

namespace tlkf {

using Series = std::vector<Vec>;

/// x_k = A x_{k-1} + w_k,  y_k = C x_k + v_k,  w ~ N(0,Q), v ~ N(0,R),
/// x_0 ~ N(m0, P0).
struct LinearGaussianModel {
  Mat A;
  Mat C;
  Mat Q;
  Mat R;
  Vec m0;
  Mat P0;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int obs_dim() const { return static_cast<int>(C.rows()); }

  /// Throws std::invalid_argument on inconsistent shapes, asymmetric or
  /// indefinite covariances, or non-finite entries.
  void validate() const;
};

/// Constant-acceleration robot observed in displacement only.
LinearGaussianModel robot_model(double T, double q_var, double r_var, double m_a,
                                double p_var);

struct Trajectory {
  Series states;        // x_0 .. x_N
  Series observations;  // y_1 .. y_N
  std::uint64_t seed = 0;

  int length() const { return static_cast<int>(observations.size()); }
};

Trajectory simulate(const LinearGaussianModel& model, int n, std::uint64_t seed);

/// Columns k, x_displacement, x_velocity, x_acceleration, y. Row k=0 has an
/// empty y. For state dimensions other than 3 the state columns are x_0..x_{u-1}.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace tlkf
