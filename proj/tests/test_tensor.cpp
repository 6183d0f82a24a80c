#include <smc/tensor.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace smc;

namespace {

Mat3 random_symmetric(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = n(rng);
  return 0.5 * (m + m.transpose());
}

Rotation random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return Rotation(q.toRotationMatrix(), 1e-10);
}

// Full-index fourth-order tensor from a Mandel matrix.
using Full4 = std::array<double, 81>;
int mandel_index(int i, int j) {
  for (int k = 0; k < 6; ++k) {
    auto [p, q] = kMandelPairs[k];
    if ((p == i && q == j) || (p == j && q == i)) return k;
  }
  return -1;
}
Full4 to_full(const Mat6& C) {
  Full4 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
          int a = mandel_index(i, j), b = mandel_index(k, l);
          t[27 * i + 9 * j + 3 * k + l] = C(a, b) / (mandel_weight(a) * mandel_weight(b));
        }
  return t;
}

}  // namespace

TEST(MandelCodec, IdentityMatrix) {
  Vec6 v = to_mandel(Mat3::Identity());
  Vec6 expect;
  expect << 1, 1, 1, 0, 0, 0;
  EXPECT_EQ(v, expect);
}

TEST(MandelCodec, ShearScaling) {
  Mat3 m = Mat3::Zero();
  m(0, 1) = m(1, 0) = 1.0;
  Vec6 v = to_mandel(m);
  EXPECT_DOUBLE_EQ(v[5], std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(v.head<5>().norm(), 0.0);
}

TEST(MandelCodec, RoundTripAndNorms) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    Mat3 a = random_symmetric(rng), b = random_symmetric(rng);
    EXPECT_LT((from_mandel(to_mandel(a)) - a).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(to_mandel(a).norm(), a.norm(), 1e-13);
    EXPECT_NEAR(to_mandel(a).dot(to_mandel(b)), (a.cwiseProduct(b)).sum(), 1e-12);
  }
}

TEST(MandelCodec, RejectsNonSymmetric) {
  Mat3 m = Mat3::Identity();
  m(0, 2) = 1.0;
  EXPECT_THROW(to_mandel(m), std::invalid_argument);
}

TEST(MandelCodec, FourthOrderContractionMatchesFullIndex) {
  std::mt19937_64 rng(3);
  Mat6 A = Mat6::Random(), B = Mat6::Random();
  A = A + A.transpose();
  B = B + B.transpose();
  Full4 a = to_full(A), b = to_full(B);
  double full = 0;
  for (int i = 0; i < 81; ++i) full += a[i] * b[i];
  EXPECT_NEAR((A.cwiseProduct(B)).sum(), full, 1e-12 * std::abs(full) + 1e-12);
  // C : eps in full index notation.
  Mat3 e = random_symmetric(rng);
  Mat3 s = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) s(i, j) += a[27 * i + 9 * j + 3 * k + l] * e(k, l);
  EXPECT_LT((to_mandel(s, 1e-10) - A * to_mandel(e)).norm(), 1e-12);
}

TEST(JumpOperator, MatchesSymmetricDyad) {
  Vec3 n = Vec3(0.3, -0.5, 0.8).normalized(), a(1.0, 2.0, -0.5);
  EXPECT_LT((jump_operator(n) * a - sym_dyad(a, n)).norm(), 1e-15);
  // Traction: N^T s equals sigma n.
  Mat3 s;
  s << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  EXPECT_LT((jump_operator(n).transpose() * to_mandel(s) - s * n).norm(), 1e-14);
}

TEST(IsotropicStiffness, MatrixShearModulus) {
  Mat6 C = isotropic_stiffness(3450.0, 0.385);
  const double G = C(5, 5) / 2;
  EXPECT_NEAR(G, 3450.0 / (2 * 1.385), 1e-9);
  EXPECT_NEAR(G, 1250.0, 0.005 * 1250.0);
}

TEST(IsotropicStiffness, FiberShearModulus) {
  Mat6 C = isotropic_stiffness(72000.0, 0.22);
  EXPECT_NEAR(C(3, 3) / 2, 29508.2, 0.1);
  EXPECT_NEAR(C(3, 3) / 2, 29510.0, 0.001 * 29510.0);
}

TEST(IsotropicStiffness, ZeroPoisson) {
  Mat6 C = isotropic_stiffness(200.0, 0.0);
  EXPECT_DOUBLE_EQ(C(0, 0), 200.0);
  EXPECT_DOUBLE_EQ(C(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(C(1, 2), 0.0);
}

TEST(IsotropicStiffness, RejectsBadPoisson) {
  EXPECT_THROW(isotropic_stiffness(1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(isotropic_stiffness(1.0, -1.0), std::invalid_argument);
  EXPECT_THROW(isotropic_stiffness(-1.0, 0.2), std::invalid_argument);
}

TEST(IsotropicStiffness, RotationInvariant) {
  std::mt19937_64 rng(11);
  Mat6 C = isotropic_stiffness(3450.0, 0.385);
  for (int t = 0; t < 20; ++t)
    EXPECT_LT((rotate_tensor4(C, random_rotation(rng)) - C).cwiseAbs().maxCoeff(), 1e-12 * C.norm());
  auto k = isotropic_constants(C);
  EXPECT_NEAR(k.young, 3450.0, 1e-9);
  EXPECT_NEAR(k.poisson, 0.385, 1e-12);
}

const TransverseIsotropy kBundle{51480, 18660, 0.26, 0.402, 6820};

TEST(TransverseIsotropy, BundleTableIsPositiveDefinite) {
  Mat6 C = transversely_isotropic_stiffness(kBundle);
  EXPECT_TRUE(is_spd(C));
  auto p = engineering_constants(C);
  EXPECT_NEAR(p.E_L / 51480, 1.0, 1e-8);
  EXPECT_NEAR(p.E_T / 18660, 1.0, 1e-8);
  EXPECT_NEAR(p.nu_LT / 0.26, 1.0, 1e-8);
  EXPECT_NEAR(p.nu_TT / 0.402, 1.0, 1e-8);
  EXPECT_NEAR(p.G_LT / 6820, 1.0, 1e-8);
  EXPECT_NEAR(kBundle.G_TT(), 6654.8, 0.1);
}

TEST(TransverseIsotropy, DegeneratesToIsotropic) {
  const double E = 5000, nu = 0.3;
  Mat6 C = transversely_isotropic_stiffness({E, E, nu, nu, E / (2 * (1 + nu))});
  EXPECT_LT((C - isotropic_stiffness(E, nu)).cwiseAbs().maxCoeff(), 1e-9 * E);
}

TEST(TransverseIsotropy, AxisE2IsRotatedAxisE1) {
  Mat6 C1 = transversely_isotropic_stiffness(kBundle, Vec3::UnitX());
  Mat6 C2 = transversely_isotropic_stiffness(kBundle, Vec3::UnitY());
  Mat6 R = rotate_tensor4(C1, Rotation::about_z(kPi / 2));
  EXPECT_LT((R - C2).cwiseAbs().maxCoeff(), 1e-9 * C1.norm());
  EXPECT_NEAR(C2(1, 1), C1(0, 0), 1e-8 * C1(0, 0));
  EXPECT_NEAR(C2(0, 0), C1(1, 1), 1e-8 * C1(0, 0));
}

TEST(TransverseIsotropy, RejectsIndefinite) {
  try {
    transversely_isotropic_stiffness({1000, 1000, 0.9, 0.9, 100});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("eigenvalue"), std::string::npos);
  }
}

TEST(RotateTensor4, IdentityAndComposition) {
  std::mt19937_64 rng(5);
  Mat6 C = transversely_isotropic_stiffness(kBundle, Vec3(1, 2, 3));
  EXPECT_LT((rotate_tensor4(C, Rotation()) - C).cwiseAbs().maxCoeff(), 1e-15 * C.norm());
  for (int t = 0; t < 20; ++t) {
    Rotation R1 = random_rotation(rng), R2 = random_rotation(rng);
    Mat6 a = rotate_tensor4(C, R1 * R2), b = rotate_tensor4(rotate_tensor4(C, R2), R1);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10 * C.norm());
  }
}

TEST(RotateTensor4, ActsOnRotatedStrain) {
  std::mt19937_64 rng(9);
  Mat6 C = transversely_isotropic_stiffness(kBundle, Vec3(0.2, 1, 0.1));
  for (int t = 0; t < 20; ++t) {
    Rotation R = random_rotation(rng);
    Mat3 e = random_symmetric(rng);
    const Mat3& r = R.matrix();
    // (R*C)(R e R^T) = R (C e) R^T
    Vec6 lhs = rotate_tensor4(C, R) * to_mandel(r * e * r.transpose(), 1e-10);
    Vec6 rhs = to_mandel(r * from_mandel(C * to_mandel(e)) * r.transpose(), 1e-9);
    EXPECT_LT((lhs - rhs).norm(), 1e-10 * rhs.norm());
  }
}

TEST(RotateTensor4, PreservesSpectrum) {
  std::mt19937_64 rng(13);
  Mat6 C = transversely_isotropic_stiffness(kBundle);
  Eigen::SelfAdjointEigenSolver<Mat6> e0(C);
  for (int t = 0; t < 20; ++t) {
    Eigen::SelfAdjointEigenSolver<Mat6> e1(rotate_tensor4(C, random_rotation(rng)));
    EXPECT_LT((e1.eigenvalues() - e0.eigenvalues()).cwiseAbs().maxCoeff(), 1e-10 * C.norm());
  }
}

TEST(MandelRotation, DerivativeMatchesFiniteDifference) {
  const double t = 0.37, h = 1e-6;
  Mat6 d = mandel_rotation_derivative(Rotation::rz(t), Rotation::drz(t));
  Mat6 fd = (mandel_rotation(Rotation::rz(t + h)) - mandel_rotation(Rotation::rz(t - h))) / (2 * h);
  EXPECT_LT((d - fd).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(RotationType, RejectsNonOrthogonal) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = 1.1;
  EXPECT_THROW(Rotation{m}, std::invalid_argument);
  EXPECT_THROW(Rotation{Mat3(-Mat3::Identity())}, std::invalid_argument);
}

TEST(OrientationTensor, Invariants) {
  EXPECT_NO_THROW(OrientationTensor2::planar(0.7));
  EXPECT_THROW(OrientationTensor2{Mat3::Identity()}, std::invalid_argument);
}

TEST(Serialization, RoundTrip) {
  Mat6 C = transversely_isotropic_stiffness(kBundle, Vec3(1, 1, 0));
  std::stringstream ss;
  write_mandel(ss, C);
  EXPECT_EQ(ss.str().substr(0, 11), "mandel 6 6\n");
  EXPECT_EQ(read_mandel6x6(ss), C);
  Vec6 v = Vec6::LinSpaced(6, -1.0 / 3, 7.0 / 3);
  std::stringstream s2;
  write_mandel(s2, v);
  EXPECT_EQ(read_mandel6(s2), v);
}
