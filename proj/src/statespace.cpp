#include "tlkf/statespace.hpp"

#include <ostream>
#include <string>

#include "tlkf/format.hpp"

namespace tlkf {

namespace {

void require_cov(const Mat& m, Eigen::Index n, const char* name, bool strict) {
  if (m.rows() != n || m.cols() != n) {
    throw std::invalid_argument(std::string("model: ") + name + " has shape " + shape_str(m) +
                                ", expected " + std::to_string(n) + "x" + std::to_string(n));
  }
  require_finite(m, name);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument(std::string("model: ") + name + " is not symmetric");
  }
  const double lo = min_eigenvalue(m);
  if (strict ? !(lo > 0.0) : lo < -1e-9 * scale) {
    throw std::invalid_argument(std::string("model: ") + name +
                                (strict ? " is not positive definite"
                                        : " is not positive semidefinite"));
  }
}

}  // namespace

void LinearGaussianModel::validate() const {
  const Eigen::Index u = A.rows();
  const Eigen::Index v = C.rows();
  if (A.cols() != u) throw std::invalid_argument("model: A must be square, got " + shape_str(A));
  if (C.cols() != u) {
    throw std::invalid_argument("model: C has shape " + shape_str(C) + " but state dim is " +
                                std::to_string(u));
  }
  if (m0.size() != u) throw std::invalid_argument("model: m0 length mismatch");
  require_finite(A, "A");
  require_finite(C, "C");
  require_finite(m0, "m0");
  require_cov(Q, u, "Q", false);
  require_cov(R, v, "R", false);
  require_cov(P0, u, "P0", false);
}

LinearGaussianModel robot_model(double T, double q_var, double r_var, double m_a,
                                double p_var) {
  if (!(T > 0.0)) throw std::invalid_argument("robot_model: T must be positive");
  if (!(q_var > 0.0)) throw std::invalid_argument("robot_model: q_var must be positive");
  if (!(r_var > 0.0)) throw std::invalid_argument("robot_model: r_var must be positive");
  if (!(p_var > 0.0)) throw std::invalid_argument("robot_model: p_var must be positive");
  LinearGaussianModel m;
  m.A.resize(3, 3);
  m.A << 1.0, T, 0.5 * T * T,
         0.0, 1.0, T,
         0.0, 0.0, 1.0;
  m.C.resize(1, 3);
  m.C << 1.0, 0.0, 0.0;
  m.Q = q_var * Mat::Identity(3, 3);
  m.R = r_var * Mat::Identity(1, 1);
  m.m0 = Vec::Zero(3);
  m.m0(2) = m_a;
  m.P0 = p_var * Mat::Identity(3, 3);
  return m;
}

Trajectory simulate(const LinearGaussianModel& model, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate: N must be at least 1");
  Rng rng(seed);
  const Vec zero_u = Vec::Zero(model.state_dim());
  const Vec zero_v = Vec::Zero(model.obs_dim());

  Trajectory traj;
  traj.seed = seed;
  traj.states.reserve(n + 1);
  traj.observations.reserve(n);
  traj.states.push_back(sample_gaussian(model.m0, model.P0, rng));
  for (int k = 1; k <= n; ++k) {
    Vec x = model.A * traj.states.back() + sample_gaussian(zero_u, model.Q, rng);
    Vec y = model.C * x + sample_gaussian(zero_v, model.R, rng);
    traj.states.push_back(std::move(x));
    traj.observations.push_back(std::move(y));
  }
  return traj;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index u = traj.states.empty() ? 0 : traj.states.front().size();
  os << "k";
  if (u == 3) {
    os << ",x_displacement,x_velocity,x_acceleration";
  } else {
    for (Eigen::Index i = 0; i < u; ++i) os << ",x_" << i;
  }
  os << ",y\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    os << k;
    for (Eigen::Index i = 0; i < u; ++i) os << ',' << format_double(traj.states[k](i));
    os << ',';
    if (k > 0) {
      const Vec& y = traj.observations[k - 1];
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (i > 0) os << ';';
        os << format_double(y(i));
      }
    }
    os << '\n';
  }
}

}  // namespace tlkf
