#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace tlkf {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised when a matrix that must be positive definite is not. `minor_index`
/// is the zero-based leading minor at which the factorization broke down.
class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(const std::string& what, int minor_index)
      : std::runtime_error(what), minor_index_(minor_index) {}
  int minor_index() const noexcept { return minor_index_; }

 private:
  int minor_index_;
};

/// Deterministic random source: mt19937_64 for uniforms, Box-Muller for
/// normals. Passed explicitly; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::string shape_str(const Mat& m);

bool all_finite(const Mat& m);
void require_finite(const Mat& m, const char* what);

Mat mat_mul(const Mat& a, const Mat& b);
Mat mat_add(const Mat& a, const Mat& b);
Mat mat_sub(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat scalar_mul(double s, const Mat& a);
double trace(const Mat& a);

/// (M + M^T) / 2. The result is exactly symmetric.
Mat symmetrize(const Mat& m);

/// x^T M x
double quad_form(const Mat& m, const Vec& x);

/// Lower-triangular L with L L^T = a. Throws NotPositiveDefinite.
Mat cholesky(const Mat& a);

/// Like cholesky() but accepts positive semidefinite input: a pivot that is
/// zero within `tol` (relative to the largest diagonal entry) yields a zero
/// column provided the rest of that column vanishes too.
Mat cholesky_psd(const Mat& a, double tol = 1e-12);

/// Inverse of a symmetric positive definite matrix via Cholesky.
Mat spd_inverse(const Mat& a);

/// Solves a x = b for SPD a (b may have several columns).
Mat spd_solve(const Mat& a, const Mat& b);

/// log det of an SPD matrix via Cholesky.
double spd_logdet(const Mat& a);

Vec softmax(const Vec& v);

/// Draw from N(mean, cov). cov may be singular PSD.
Vec sample_gaussian(const Vec& mean, const Mat& cov, Rng& rng);

/// log N(x | mean, cov), cov SPD.
double gaussian_logpdf(const Vec& x, const Vec& mean, const Mat& cov);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Mat& sym);

}  // namespace tlkf
