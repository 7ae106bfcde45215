#include "tlkf/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace tlkf {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

bool all_finite(const Mat& m) { return m.allFinite(); }

void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + " has non-finite entries");
  }
}

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
  }
}

void require_square(const Mat& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument(std::string(op) + ": expected square matrix, got " +
                                shape_str(a));
  }
}

void require_symmetric(const Mat& a, const char* op) {
  require_square(a, op);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument(std::string(op) + ": matrix is not symmetric");
  }
}

}  // namespace

Mat mat_mul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("mat_mul: cannot multiply " + shape_str(a) + " by " +
                                shape_str(b));
  }
  return a * b;
}

Mat mat_add(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "mat_add");
  return a + b;
}

Mat mat_sub(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "mat_sub");
  return a - b;
}

Mat transpose(const Mat& a) { return a.transpose(); }

Mat scalar_mul(double s, const Mat& a) { return s * a; }

double trace(const Mat& a) {
  require_square(a, "trace");
  return a.trace();
}

Mat symmetrize(const Mat& m) {
  require_square(m, "symmetrize");
  Mat out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out(i, i) = m(i, i);
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

double quad_form(const Mat& m, const Vec& x) {
  require_square(m, "quad_form");
  if (m.rows() != x.size()) {
    throw std::invalid_argument("quad_form: " + shape_str(m) + " with vector of length " +
                                std::to_string(x.size()));
  }
  return x.dot(m * x);
}

Mat cholesky(const Mat& a) {
  require_symmetric(a, "cholesky");
  const Eigen::Index n = a.rows();
  Mat l = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) {
      throw NotPositiveDefinite(
          "cholesky: leading minor " + std::to_string(j) + " is not positive definite",
          static_cast<int>(j));
    }
    d = std::sqrt(d);
    l(j, j) = d;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / d;
    }
  }
  return l;
}

Mat cholesky_psd(const Mat& a, double tol) {
  require_symmetric(a, "cholesky_psd");
  const Eigen::Index n = a.rows();
  Mat l = Mat::Zero(n, n);
  if (n == 0) return l;
  const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (d > tol * scale) {
      const double s = std::sqrt(d);
      l(j, j) = s;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / s;
      }
      continue;
    }
    if (d < -tol * scale) {
      throw NotPositiveDefinite(
          "cholesky_psd: leading minor " + std::to_string(j) + " is negative",
          static_cast<int>(j));
    }
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double r = a(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      if (std::abs(r) > std::sqrt(tol) * scale) {
        throw NotPositiveDefinite(
            "cholesky_psd: leading minor " + std::to_string(j) + " is indefinite",
            static_cast<int>(j));
      }
    }
  }
  return l;
}

Mat spd_solve(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("spd_solve: " + shape_str(a) + " with rhs " + shape_str(b));
  }
  const Mat l = cholesky(a);
  const Mat z = l.triangularView<Eigen::Lower>().solve(b);
  return l.transpose().triangularView<Eigen::Upper>().solve(z);
}

Mat spd_inverse(const Mat& a) {
  return spd_solve(a, Mat::Identity(a.rows(), a.cols()));
}

double spd_logdet(const Mat& a) {
  const Mat l = cholesky(a);
  return 2.0 * l.diagonal().array().log().sum();
}

Vec softmax(const Vec& v) {
  if (v.size() == 0) throw std::invalid_argument("softmax: empty input");
  const double mx = v.maxCoeff();
  Vec e = (v.array() - mx).exp();
  return e / e.sum();
}

Vec sample_gaussian(const Vec& mean, const Mat& cov, Rng& rng) {
  if (cov.rows() != mean.size()) {
    throw std::invalid_argument("sample_gaussian: mean length " +
                                std::to_string(mean.size()) + " vs covariance " +
                                shape_str(cov));
  }
  const Mat l = cholesky_psd(cov);
  Vec z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + l * z;
}

double gaussian_logpdf(const Vec& x, const Vec& mean, const Mat& cov) {
  const Mat l = cholesky(cov);
  const Vec r = x - mean;
  const Vec z = l.triangularView<Eigen::Lower>().solve(r);
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet +
                 z.squaredNorm());
}

double min_eigenvalue(const Mat& sym) {
  require_square(sym, "min_eigenvalue");
  if (sym.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace tlkf
