#include <sstream>

#include "doctest.h"
#include "tlkf/statespace.hpp"

using namespace tlkf;

TEST_SUITE("statespace") {

TEST_CASE("robot model matrices") {
  const auto m = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  Mat a(3, 3);
  a << 1, 0.01, 5e-5, 0, 1, 0.01, 0, 0, 1;
  CHECK((m.A - a).cwiseAbs().maxCoeff() < 1e-18);
  CHECK(m.C.rows() == 1);
  CHECK(m.C(0, 0) == 1.0);
  CHECK(m.C(0, 1) == 0.0);
  CHECK(m.Q == 1e-2 * Mat::Identity(3, 3));
  CHECK(m.R(0, 0) == 5e-3);
  CHECK(m.m0(2) == 0.1);
  CHECK(m.m0.head(2).isZero());
  CHECK(m.P0 == 0.1 * Mat::Identity(3, 3));

  const auto unit = robot_model(1.0, 1, 1, 0, 1);
  Mat a1(3, 3);
  a1 << 1, 1, 0.5, 0, 1, 1, 0, 0, 1;
  CHECK(unit.A == a1);
}

TEST_CASE("robot model rejects non-positive inputs") {
  CHECK_THROWS_AS(robot_model(0.0, 1, 1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(robot_model(0.01, -1, 1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(robot_model(0.01, 1, 0, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(robot_model(0.01, 1, 1, 0, -0.1), std::invalid_argument);
}

TEST_CASE("noise-free simulation is the deterministic recursion") {
  auto m = robot_model(0.01, 1, 1, 0.3, 1);
  m.Q.setZero();
  m.R.setZero();
  m.P0.setZero();
  m.m0 << 1.0, 2.0, 0.3;
  const Trajectory t = simulate(m, 20, 4);
  Vec x = m.m0;
  CHECK(t.states[0] == x);
  for (int k = 1; k <= 20; ++k) {
    x = m.A * x;
    CHECK(t.states[k] == x);
    CHECK(t.observations[k - 1] == m.C * x);
  }
}

TEST_CASE("zero velocity and acceleration keep displacement constant") {
  auto m = robot_model(0.01, 1, 1, 0.0, 1);
  m.Q.setZero();
  m.P0.setZero();
  m.m0 << 2.5, 0, 0;
  const Trajectory t = simulate(m, 50, 1);
  for (const Vec& x : t.states) CHECK(x(0) == 2.5);
}

TEST_CASE("simulation is deterministic per seed") {
  const auto m = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  const Trajectory a = simulate(m, 100, 42);
  const Trajectory b = simulate(m, 100, 42);
  const Trajectory c = simulate(m, 100, 43);
  for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);
  for (std::size_t k = 0; k < a.observations.size(); ++k) CHECK(a.observations[k] == b.observations[k]);
  CHECK(a.observations[0] != c.observations[0]);
}

TEST_CASE("observation noise variance is close to R") {
  const auto m = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  const Trajectory t = simulate(m, 200, 7);
  double s = 0.0, s2 = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double e = t.observations[k - 1](0) - t.states[k](0);
    s += e;
    s2 += e * e;
  }
  const double var = s2 / 200 - (s / 200) * (s / 200);
  CHECK(var > 0.7 * 5e-3);
  CHECK(var < 1.3 * 5e-3);
}

TEST_CASE("validate rejects indefinite covariances") {
  auto m = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  m.Q(1, 1) = -1.0;
  CHECK_THROWS(m.validate());
  CHECK_THROWS(simulate(m, 10, 1));
}

TEST_CASE("trajectory csv layout") {
  const auto m = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  const Trajectory t = simulate(m, 3, 1);
  std::ostringstream os;
  write_trajectory_csv(os, t);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,x_displacement,x_velocity,x_acceleration,y");
  std::getline(in, line);
  CHECK(line.back() == ',');
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
}

}
