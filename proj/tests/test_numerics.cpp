#include <cmath>

#include "doctest.h"
#include "tlkf/format.hpp"
#include "tlkf/numerics.hpp"

using namespace tlkf;

namespace {

Mat m2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

Mat random_spd(Rng& rng, int n) {
  Mat b(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b(i, j) = rng.uniform(-1, 1);
  return b * b.transpose() + 0.5 * Mat::Identity(n, n);
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("mat_mul hand cases") {
  CHECK(mat_mul(Mat::Identity(2, 2), m2(1, 2, 3, 4)) == m2(1, 2, 3, 4));
  CHECK(mat_mul(m2(1, 2, 3, 4), Mat::Zero(2, 2)) == Mat::Zero(2, 2));
  Mat row(1, 2), col(2, 1);
  row << 1, 2;
  col << 3, 4;
  const Mat p = mat_mul(row, col);
  REQUIRE(p.rows() == 1);
  CHECK(p(0, 0) == 11.0);
}

TEST_CASE("shape mismatch names both shapes") {
  try {
    mat_mul(Mat::Zero(2, 3), Mat::Zero(2, 3));
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(mat_add(Mat::Zero(2, 2), Mat::Zero(3, 2)), std::invalid_argument);
}

TEST_CASE("spd_inverse") {
  CHECK(spd_inverse(m2(2, 0, 0, 4)).isApprox(m2(0.5, 0, 0, 0.25), 1e-15));
  CHECK(spd_inverse(Mat::Identity(3, 3)).isApprox(Mat::Identity(3, 3)));
  const Mat inv = spd_inverse(m2(2, 1, 1, 2));
  CHECK(inv.isApprox(m2(2.0 / 3, -1.0 / 3, -1.0 / 3, 2.0 / 3), 1e-14));
  CHECK((inv * m2(2, 1, 1, 2) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("spd_inverse is an involution on random SPD up to 6x6") {
  Rng rng(11);
  for (int n = 1; n <= 6; ++n) {
    for (int rep = 0; rep < 5; ++rep) {
      const Mat m = random_spd(rng, n);
      CHECK((spd_inverse(spd_inverse(m)) - m).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("cholesky reports the failing leading minor") {
  Mat m = Mat::Identity(3, 3);
  m(2, 2) = -1.0;
  try {
    cholesky(m);
    FAIL("expected throw");
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.minor_index() == 2);
  }
  CHECK_THROWS_AS(spd_inverse(m2(1, 2, 2, 1)), NotPositiveDefinite);
}

TEST_CASE("softmax examples") {
  Vec v(2);
  v << 0, 0;
  CHECK(softmax(v).isApprox(Vec::Constant(2, 0.5)));
  Vec big = Vec::Constant(3, 1000.0);
  const Vec s = softmax(big);
  for (int i = 0; i < 3; ++i) CHECK(s(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  Vec w(2);
  w << 0, std::log(3.0);
  const Vec t = softmax(w);
  CHECK(t(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(t(1) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK_THROWS_AS(softmax(Vec()), std::invalid_argument);
}

TEST_CASE("softmax sums to one, including entries of magnitude 1e3") {
  Rng rng(5);
  for (int rep = 0; rep < 1000; ++rep) {
    Vec v(1 + rep % 9);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-1e3, 1e3);
    const Vec s = softmax(v);
    CHECK(std::abs(s.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("symmetrize is exactly symmetric") {
  Rng rng(3);
  Mat m(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = rng.uniform(-3, 3);
  const Mat s = symmetrize(m);
  CHECK(s == s.transpose());
}

TEST_CASE("sampling covariance matches within 5% Frobenius") {
  Mat sigma(3, 3);
  sigma << 2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.5;
  Rng rng(2024);
  const Vec mean = Vec::Zero(3);
  Mat acc = Mat::Zero(3, 3);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Vec x = sample_gaussian(mean, sigma, rng);
    acc += x * x.transpose();
  }
  acc /= n;
  CHECK((acc - sigma).norm() / sigma.norm() < 0.05);
}

TEST_CASE("sampling from a singular covariance stays on its support") {
  Mat sigma = Mat::Zero(2, 2);
  sigma(0, 0) = 1.0;
  Rng rng(1);
  for (int i = 0; i < 10; ++i) CHECK(sample_gaussian(Vec::Zero(2), sigma, rng)(1) == 0.0);
}

TEST_CASE("gaussian_logpdf matches the scalar formula") {
  Vec x(1), m(1);
  x << 1.0;
  m << 0.0;
  Mat c(1, 1);
  c << 4.0;
  const double expect = -0.5 * (std::log(2 * M_PI * 4.0) + 0.25);
  CHECK(gaussian_logpdf(x, m, c) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1e-300, 123456.789, -2.5e-7, 0.0}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("rng is deterministic") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
}

}
