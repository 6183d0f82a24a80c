// Gaussian layer on top of the specimen database: state covariances, a
// linear feature map fitted by least squares, propagation and ellipses.
#pragma once

#include <smc/tensor.hpp>

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace smc::uq {

using Mat2 = Eigen::Matrix2d;
using MatX = Eigen::MatrixXd;

struct GaussianState {
  Vec2 mean = Vec2::Zero();  // (f, a)
  Mat2 cov = Mat2::Identity();
};

inline double gaussian_pdf(const Vec2& x, const GaussianState& g) {
  const double det = g.cov.determinant();
  if (!(det > 1e-300) || !std::isfinite(det)) throw std::domain_error("gaussian_pdf: degenerate covariance");
  const Vec2 d = x - g.mean;
  const double m = d.dot(g.cov.ldlt().solve(d));
  return std::exp(-0.5 * m) / (2 * kPi * std::sqrt(det));
}

// Compounding scatter plus molding scatter, assumed independent.
inline Mat2 compose_molding_cov(const Mat2& compounding, double sigma_mold_f, double sigma_mold_a) {
  if (sigma_mold_f < 0 || sigma_mold_a < 0) throw std::invalid_argument("compose_molding_cov: negative deviation");
  Mat2 s = compounding;
  s(0, 0) += sigma_mold_f * sigma_mold_f;
  s(1, 1) += sigma_mold_a * sigma_mold_a;
  return s;
}

struct ScalingLaw {
  double c_f_per_mm = 0.058;  // f deviation in percent
  double c_a_per_mm = 4.184;
};

// Returns (sigma_f as a fraction, sigma_a).
inline Vec2 sigma_of_size(double L_mm, const ScalingLaw& law = {}) {
  if (!(L_mm > 0)) throw std::invalid_argument("sigma_of_size: L must be positive");
  return Vec2(0.01 / (law.c_f_per_mm * L_mm), 1.0 / (law.c_a_per_mm * L_mm));
}

enum class Case { Base, FVF, FVF_ORI };
inline const char* label(Case c) {
  switch (c) {
    case Case::Base: return "Base";
    case Case::FVF: return "FVF";
    case Case::FVF_ORI: return "FVF+ORI";
  }
  return "?";
}

inline std::array<Mat2, 3> case_covariances(double L_mm, double sigma_cf = 0.014, double sigma_ca = 0.05,
                                            const ScalingLaw& law = {}) {
  const Vec2 s = sigma_of_size(L_mm, law);
  const Mat2 base = compose_molding_cov(Mat2::Zero(), s[0], s[1]);
  Mat2 fvf = base, ori = base;
  fvf(0, 0) += sigma_cf * sigma_cf;
  ori(0, 0) += sigma_cf * sigma_cf;
  ori(1, 1) += sigma_ca * sigma_ca;
  return {base, fvf, ori};
}

struct FeatureModel {
  MatX M;                  // features x 2
  Eigen::VectorXd rms;     // per-feature residual rms
  Eigen::VectorXd orthogonality;  // |X^T r| per feature
};

// Per-feature least squares y ~ M x, no intercept.
inline FeatureModel fit_feature_matrix(const MatX& X, const MatX& Y) {
  if (X.cols() != 2 || X.rows() != Y.rows()) throw std::invalid_argument("fit_feature_matrix: shape mismatch");
  if (X.rows() < 2) throw std::invalid_argument("fit_feature_matrix: need at least two rows");
  Eigen::ColPivHouseholderQR<MatX> qr(X);
  // Rank from the R diagonal relative to its largest entry.
  qr.setThreshold(1e-10);
  if (qr.rank() < 2) throw std::domain_error("fit_feature_matrix: rank-deficient design");
  FeatureModel fm;
  fm.M = qr.solve(Y).transpose();
  const MatX R = X * fm.M.transpose() - Y;
  fm.rms = (R.colwise().squaredNorm() / double(X.rows())).cwiseSqrt().transpose();
  fm.orthogonality = (X.transpose() * R).colwise().norm().transpose();
  return fm;
}

inline MatX propagate_cov(const MatX& M, const Mat2& cov) {
  if (M.cols() != 2) throw std::invalid_argument("propagate_cov: M must have two columns");
  const MatX S = M * cov * M.transpose();
  return 0.5 * (S + S.transpose());
}

struct Ellipse {
  Vec2 center_offset = Vec2::Zero();
  Vec2 semi_axes = Vec2::Zero();  // major, minor
  double angle = 0;               // of the major axis
};

// Exact probability mass inside the k-sigma ellipse of a 2-D Gaussian.
inline double ellipse_mass(double n_sigma) { return 1 - std::exp(-0.5 * n_sigma * n_sigma); }

inline Ellipse confidence_ellipse(const Mat2& cov, double n_sigma = 3) {
  const Mat2 s = 0.5 * (cov + cov.transpose());
  const Eigen::SelfAdjointEigenSolver<Mat2> es(s);
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, s.norm())) throw std::domain_error("confidence_ellipse: covariance not PSD");
  Ellipse e;
  const double l1 = std::max(es.eigenvalues()[1], 0.0), l0 = std::max(es.eigenvalues()[0], 0.0);
  e.semi_axes = Vec2(n_sigma * std::sqrt(l1), n_sigma * std::sqrt(l0));
  const Vec2 v = es.eigenvectors().col(1);
  e.angle = std::atan2(v[1], v[0]);
  if (e.angle > kPi / 2) e.angle -= kPi;
  if (e.angle <= -kPi / 2) e.angle += kPi;
  return e;
}

inline std::vector<Vec2> ellipse_polyline(const Vec2& center, const Ellipse& e, int n = 97) {
  std::vector<Vec2> p;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  for (int k = 0; k < n; ++k) {
    const double t = 2 * kPi * k / (n - 1);
    const double x = e.semi_axes[0] * std::cos(t), y = e.semi_axes[1] * std::sin(t);
    p.push_back(center + e.center_offset + Vec2(c * x - s * y, s * x + c * y));
  }
  return p;
}

}  // namespace smc::uq
