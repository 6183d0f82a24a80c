// Symmetric tensor algebra in the orthonormal Mandel basis.
//
// Component order is (11, 22, 33, 23, 13, 12); shear entries carry a factor
// sqrt(2) so that dot products and matrix inverses need no extra weights.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace smc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

using SymTensor2 = Vec6;
using SymTensor4 = Mat6;

inline constexpr double kSqrt2 = std::numbers::sqrt2;
inline constexpr double kPi = std::numbers::pi;

inline constexpr std::array<std::array<int, 2>, 6> kMandelPairs{
    {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};

inline constexpr double mandel_weight(int k) { return k < 3 ? 1.0 : kSqrt2; }

inline SymTensor2 to_mandel(const Mat3& m, double tol = 1e-12) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw std::invalid_argument("to_mandel: matrix is not symmetric");
  SymTensor2 v;
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kMandelPairs[k];
    v[k] = mandel_weight(k) * 0.5 * (m(i, j) + m(j, i));
  }
  return v;
}

inline Mat3 from_mandel(const SymTensor2& v) {
  Mat3 m;
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kMandelPairs[k];
    m(i, j) = m(j, i) = v[k] / mandel_weight(k);
  }
  return m;
}

// Mandel vector of sym(a (x) b).
inline SymTensor2 sym_dyad(const Vec3& a, const Vec3& b) {
  SymTensor2 v;
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kMandelPairs[k];
    v[k] = mandel_weight(k) * 0.5 * (a[i] * b[j] + a[j] * b[i]);
  }
  return v;
}

// N(n) with N * a = mandel(sym(a (x) n)); the traction of a stress s on the
// plane with normal n is N(n)^T s.
inline Mat63 jump_operator(const Vec3& n) {
  Mat63 N = Mat63::Zero();
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kMandelPairs[k];
    const double w = mandel_weight(k) * 0.5;
    N(k, i) += w * n[j];
    N(k, j) += w * n[i];
  }
  return N;
}

inline Vec6 identity2() {
  Vec6 v;
  v << 1, 1, 1, 0, 0, 0;
  return v;
}

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}
  explicit Rotation(const Mat3& m, double tol = 1e-12) : m_(m) {
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(m.determinant() - 1.0) > tol)
      throw std::invalid_argument("Rotation: matrix is not proper orthogonal");
  }

  static Rotation about_axis(const Vec3& axis, double angle) {
    return Rotation(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), 1e-10);
  }
  static Rotation about_z(double angle) { return unchecked(rz(angle)); }
  static Rotation euler_zxz(double phi, double theta, double psi) {
    return unchecked(rz(phi) * rx(theta) * rz(psi));
  }

  const Mat3& matrix() const { return m_; }
  Rotation transpose() const { return unchecked(m_.transpose()); }
  Rotation operator*(const Rotation& o) const { return unchecked(m_ * o.m_); }

  static Mat3 rz(double t) {
    Mat3 r;
    r << std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t), 0, 0, 0, 1;
    return r;
  }
  static Mat3 rx(double t) {
    Mat3 r;
    r << 1, 0, 0, 0, std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t);
    return r;
  }
  static Mat3 drz(double t) {
    Mat3 r;
    r << -std::sin(t), -std::cos(t), 0, std::cos(t), -std::sin(t), 0, 0, 0, 0;
    return r;
  }
  static Mat3 drx(double t) {
    Mat3 r;
    r << 0, 0, 0, 0, -std::sin(t), -std::cos(t), 0, std::cos(t), -std::sin(t);
    return r;
  }

 private:
  static Rotation unchecked(const Mat3& m) {
    Rotation r;
    r.m_ = m;
    return r;
  }
  Mat3 m_;
};

// Q(R) with mandel(R e R^T) = Q(R) mandel(e). Q is orthogonal.
inline Mat6 mandel_rotation(const Mat3& R) {
  Mat6 Q;
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kMandelPairs[k];
    for (int l = 0; l < 6; ++l) {
      const auto [p, q] = kMandelPairs[l];
      const double v = (p == q) ? R(i, p) * R(j, q)
                                : (R(i, p) * R(j, q) + R(i, q) * R(j, p)) / kSqrt2;
      Q(k, l) = mandel_weight(k) * v;
    }
  }
  return Q;
}

inline Mat6 mandel_rotation(const Rotation& R) { return mandel_rotation(R.matrix()); }

// d Q(R) along the direction dR (linear in dR).
inline Mat6 mandel_rotation_derivative(const Mat3& R, const Mat3& dR) {
  Mat6 dQ;
  for (int l = 0; l < 6; ++l) {
    Vec6 e = Vec6::Zero();
    e[l] = 1.0;
    const Mat3 E = from_mandel(e);
    const Mat3 M = dR * E * R.transpose();
    dQ.col(l) = to_mandel(M + M.transpose(), 1e300);
  }
  return dQ;
}

inline SymTensor2 rotate_tensor2(const SymTensor2& v, const Rotation& R) {
  return mandel_rotation(R) * v;
}

inline SymTensor4 rotate_tensor4(const SymTensor4& C, const Rotation& R) {
  const Mat6 Q = mandel_rotation(R);
  return Q * C * Q.transpose();
}

inline SymTensor4 isotropic_stiffness(double E, double nu) {
  if (!(E > 0.0)) throw std::invalid_argument("isotropic_stiffness: E must be positive");
  if (!(nu > -1.0 && nu < 0.5))
    throw std::invalid_argument("isotropic_stiffness: Poisson ratio outside (-1, 0.5)");
  const double lambda = E * nu / ((1 + nu) * (1 - 2 * nu));
  const double mu = E / (2 * (1 + nu));
  const Vec6 i = identity2();
  return lambda * i * i.transpose() + 2 * mu * Mat6::Identity();
}

inline SymTensor4 isotropic_from_bulk_shear(double K, double G) {
  const Vec6 i = identity2();
  const Mat6 P1 = i * i.transpose() / 3.0;
  return 3 * K * P1 + 2 * G * (Mat6::Identity() - P1);
}

struct IsotropicConstants {
  double bulk, shear, young, poisson;
};

// Projects onto the isotropic subspace; exact for isotropic input.
inline IsotropicConstants isotropic_constants(const SymTensor4& C) {
  const Vec6 i = identity2();
  const Mat6 P1 = i * i.transpose() / 3.0;
  const Mat6 P2 = Mat6::Identity() - P1;
  const double K = (P1.cwiseProduct(C)).sum() / 3.0;
  const double G = (P2.cwiseProduct(C)).sum() / 10.0;
  return {K, G, 9 * K * G / (3 * K + G), (3 * K - 2 * G) / (2 * (3 * K + G))};
}

struct TransverseIsotropy {
  double E_L, E_T, nu_LT, nu_TT, G_LT;
  double G_TT() const { return E_T / (2 * (1 + nu_TT)); }
};

// Any proper rotation whose first column is the given axis.
inline Rotation frame_from_axis(const Vec3& axis) {
  const Vec3 e1 = axis.normalized();
  Vec3 t = std::abs(e1.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 e2 = (t - t.dot(e1) * e1).normalized();
  Vec3 e3 = e1.cross(e2);
  Mat3 R;
  R.col(0) = e1;
  R.col(1) = e2;
  R.col(2) = e3;
  return Rotation(R, 1e-10);
}

inline SymTensor4 transversely_isotropic_compliance(const TransverseIsotropy& p) {
  Mat6 S = Mat6::Zero();
  S(0, 0) = 1 / p.E_L;
  S(1, 1) = S(2, 2) = 1 / p.E_T;
  S(0, 1) = S(1, 0) = S(0, 2) = S(2, 0) = -p.nu_LT / p.E_L;
  S(1, 2) = S(2, 1) = -p.nu_TT / p.E_T;
  S(3, 3) = 1 / (2 * p.G_TT());
  S(4, 4) = S(5, 5) = 1 / (2 * p.G_LT);
  return S;
}

inline SymTensor4 transversely_isotropic_stiffness(const TransverseIsotropy& p,
                                                   const Vec3& axis = Vec3::UnitX()) {
  const Mat6 S = transversely_isotropic_compliance(p);
  Eigen::SelfAdjointEigenSolver<Mat6> es(S);
  const double lmin = es.eigenvalues().minCoeff();
  if (!(lmin > 0.0)) {
    std::ostringstream os;
    os << "transversely_isotropic_stiffness: compliance not positive definite, "
          "smallest eigenvalue "
       << lmin;
    throw std::invalid_argument(os.str());
  }
  const Mat6 C = S.inverse();
  const Mat6 Cs = 0.5 * (C + C.transpose());
  if (axis == Vec3::UnitX()) return Cs;
  return rotate_tensor4(Cs, frame_from_axis(axis));
}

// Engineering constants of a stiffness that is transversely isotropic about e1.
inline TransverseIsotropy engineering_constants(const SymTensor4& C) {
  const Mat6 S = C.inverse();
  TransverseIsotropy p;
  p.E_L = 1 / S(0, 0);
  p.E_T = 1 / S(1, 1);
  p.nu_LT = -S(0, 1) * p.E_L;
  p.nu_TT = -S(1, 2) * p.E_T;
  p.G_LT = 1 / (2 * S(5, 5));
  return p;
}

inline bool is_spd(const Mat6& C, double rel_tol = 0.0) {
  if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-9 * C.cwiseAbs().maxCoeff()) return false;
  Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (C + C.transpose()));
  return es.eigenvalues().minCoeff() > rel_tol * es.eigenvalues().cwiseAbs().maxCoeff();
}

class OrientationTensor2 {
 public:
  OrientationTensor2() : m_(Mat3::Identity() / 3.0) {}
  explicit OrientationTensor2(const Mat3& m, double tol = 1e-10) : m_(m) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol)
      throw std::invalid_argument("OrientationTensor2: not symmetric");
    if (std::abs(m.trace() - 1.0) > tol)
      throw std::invalid_argument("OrientationTensor2: trace differs from one");
    Eigen::SelfAdjointEigenSolver<Mat3> es(m);
    if (es.eigenvalues().minCoeff() < -tol)
      throw std::invalid_argument("OrientationTensor2: not positive semi-definite");
  }
  static OrientationTensor2 planar(double a) {
    return OrientationTensor2(Vec3(a, 1 - a, 0).asDiagonal().toDenseMatrix());
  }
  const Mat3& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Mat3 m_;
};

// Plain-text serialization: a header line "mandel <rows> <cols>", then the
// entries row by row.
template <class Derived>
void write_mandel(std::ostream& os, const Eigen::MatrixBase<Derived>& m) {
  const auto prec = os.precision(17);
  os << "mandel " << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << '\n';
  }
  os.precision(prec);
}

inline Mat6 read_mandel6x6(std::istream& is) {
  std::string tag;
  int r = 0, c = 0;
  if (!(is >> tag >> r >> c) || tag != "mandel" || r != 6 || c != 6)
    throw std::runtime_error("read_mandel6x6: bad header");
  Mat6 m;
  for (int i = 0; i < 36; ++i)
    if (!(is >> m(i / 6, i % 6))) throw std::runtime_error("read_mandel6x6: truncated");
  return m;
}

inline Vec6 read_mandel6(std::istream& is) {
  std::string tag;
  int r = 0, c = 0;
  if (!(is >> tag >> r >> c) || tag != "mandel" || r * c != 6)
    throw std::runtime_error("read_mandel6: bad header");
  Vec6 v;
  for (int i = 0; i < 6; ++i)
    if (!(is >> v[i])) throw std::runtime_error("read_mandel6: truncated");
  return v;
}

}  // namespace smc
