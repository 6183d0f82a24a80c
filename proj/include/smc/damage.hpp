// Convex anisotropic damage with compliance growth S = S0 + 2 sum (q_i/k_i) E_i^2
// and a strain-driven active-set return mapping.
#pragma once

#include <smc/tensor.hpp>

#include <algorithm>
#include <array>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smc::damage {

inline constexpr int kMaxMechanisms = 3;

struct Frame {
  Vec3 e1 = Vec3::UnitX(), e2 = Vec3::UnitY(), e3 = Vec3::UnitZ();

  void validate(double tol = 1e-10) const {
    Mat3 m;
    m << e1, e2, e3;
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
      throw std::invalid_argument("damage frame is not orthonormal");
  }
  static Frame from_rotation(const Mat3& R) { return {R.col(0), R.col(1), R.col(2)}; }
};

inline Mat6 extraction_matrix() {
  const Vec6 i = identity2();
  return i * i.transpose() / 3.0;
}

inline Mat6 extraction_bundle_normal(const Frame& f) {
  f.validate();
  const Vec6 a = sym_dyad(f.e2, f.e2) + sym_dyad(f.e3, f.e3);
  const Vec6 b = sym_dyad(f.e2, f.e2) - sym_dyad(f.e3, f.e3);
  const Vec6 c = sym_dyad(f.e2, f.e3);
  return kSqrt2 / 2 * a * a.transpose() + kSqrt2 / 4 * b * b.transpose() + c * c.transpose();
}

inline Mat6 extraction_bundle_shear(const Frame& f) {
  f.validate();
  const Vec6 a = sym_dyad(f.e1, f.e2);
  const Vec6 b = sym_dyad(f.e1, f.e3);
  return a * a.transpose() + b * b.transpose();
}

struct Mechanism {
  std::string label;
  Mat6 extraction;
  double sigma0 = 0, kappa = 0, m = 1;
  Mat6 extraction_sq;  // E^T E, cached

  Mechanism() = default;
  Mechanism(std::string l, const Mat6& E, double s0, double k, double exponent)
      : label(std::move(l)), extraction(E), sigma0(s0), kappa(k), m(exponent) {
    if ((E - E.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, E.norm()))
      throw std::invalid_argument("extraction tensor must be symmetric");
    if (!(s0 > 0 && k > 0 && exponent > 0))
      throw std::invalid_argument("mechanism parameters must be positive");
    extraction_sq = E * E;
  }
};

// Table values, MPa.
struct MechanismParams {
  double sigma0, kappa, m;
};
inline constexpr MechanismParams kMatrixDilatation{36.88, 213.92, 1.0};
inline constexpr MechanismParams kBundleNormal{46.03, 529.00, 1.0};
inline constexpr MechanismParams kBundleShear{44.08, 283.92, 1.0};

struct Material {
  Mat6 S0;
  Mat6 C0;
  std::vector<Mechanism> mechanisms;

  Material() = default;
  Material(const Mat6& compliance, std::vector<Mechanism> mech)
      : S0(compliance), C0(compliance.inverse()), mechanisms(std::move(mech)) {
    if (mechanisms.size() > kMaxMechanisms) throw std::invalid_argument("too many mechanisms");
    C0 = 0.5 * (C0 + C0.transpose());
  }
  int size() const { return static_cast<int>(mechanisms.size()); }
  double sigma0_min() const {
    double s = 1e300;
    for (const auto& m : mechanisms) s = std::min(s, m.sigma0);
    return s;
  }
  // Rotates elastic law and extraction tensors together.
  Material rotated(const Rotation& R) const {
    const Mat6 Q = mandel_rotation(R);
    std::vector<Mechanism> mech;
    for (const auto& m : mechanisms)
      mech.emplace_back(m.label, Q * m.extraction * Q.transpose(), m.sigma0, m.kappa, m.m);
    Material out(Q * S0 * Q.transpose(), std::move(mech));
    return out;
  }
};

inline Material matrix_material(double E = 3450.0, double nu = 0.385,
                                MechanismParams p = kMatrixDilatation) {
  return Material(isotropic_stiffness(E, nu).inverse(),
                  {Mechanism("matrix", extraction_matrix(), p.sigma0, p.kappa, p.m)});
}

inline constexpr TransverseIsotropy kBundleElastic{51480, 18660, 0.26, 0.402, 6820};

inline Material bundle_material(const TransverseIsotropy& el = kBundleElastic,
                                MechanismParams normal = kBundleNormal,
                                MechanismParams shear = kBundleShear) {
  const Frame f;
  return Material(transversely_isotropic_compliance(el),
                  {Mechanism("bundle-normal", extraction_bundle_normal(f), normal.sigma0,
                             normal.kappa, normal.m),
                   Mechanism("bundle-shear", extraction_bundle_shear(f), shear.sigma0,
                             shear.kappa, shear.m)});
}

struct State {
  std::array<double, kMaxMechanisms> q{};
  Mat6 S;  // compliance for q
  Mat6 C;  // its inverse

  static State fresh(const Material& mat) {
    State s;
    s.S = mat.S0;
    s.C = mat.C0;
    return s;
  }
  bool damaged() const { return q[0] > 0 || q[1] > 0 || q[2] > 0; }
};

inline double activation(const Vec6& sigma, double q, const Mechanism& mech) {
  const double e = (mech.extraction * sigma).squaredNorm();
  return e - mech.sigma0 * mech.sigma0 - mech.kappa * mech.kappa * std::pow(q, mech.m);
}

inline Mat6 compliance_from_state(const Mat6& S0, std::span<const Mechanism> mech,
                                  std::span<const double> q) {
  if (q.size() < mech.size()) throw std::invalid_argument("compliance_from_state: q too short");
  Mat6 S = S0;
  for (std::size_t i = 0; i < mech.size(); ++i) {
    if (q[i] < 0) throw std::invalid_argument("compliance_from_state: negative q");
    if (q[i] > 0) S.noalias() += (2.0 * q[i] / mech[i].kappa) * mech[i].extraction_sq;
  }
  return S;
}

inline double free_energy(const Vec6& strain, const State& s, const Material& mat) {
  double psi = 0.5 * strain.dot(s.C * strain);
  for (int i = 0; i < mat.size(); ++i) {
    const auto& m = mat.mechanisms[i];
    psi += m.kappa / (m.m + 1) * std::pow(s.q[i], m.m + 1);
  }
  return psi;
}

class ReturnMapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReturnMapOptions {
  double tol_g_rel = 1e-8;  // times sigma0_min^2
  int max_newton = 50;
  int max_sweeps = 5;
  bool finite_difference_jacobian = false;
  double fd_step = 1e-8;
};

struct ReturnMapResult {
  Vec6 stress;
  State state;
  Mat6 tangent;
  int iterations = 0;
  bool active = false;
};

namespace detail {

struct Work {
  Mat6 S, C;
  Vec6 sigma;
};

inline void evaluate(const Vec6& eps, const Material& mat, const std::array<double, 3>& q,
                     Work& w) {
  w.S = compliance_from_state(mat.S0, mat.mechanisms, q);
  Eigen::LLT<Mat6> llt(w.S);
  w.C = llt.solve(Mat6::Identity());
  w.sigma = w.C * eps;
}

}  // namespace detail

// Strain-driven update from the converged state `old`. Returns the stress,
// the new state and the algorithmic tangent.
inline ReturnMapResult return_map(const Vec6& eps, const State& old, const Material& mat,
                                  const ReturnMapOptions& opt = {}) {
  using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxMechanisms, 1>;
  using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxMechanisms,
                                 kMaxMechanisms>;
  const int n = mat.size();
  const double tol_g = opt.tol_g_rel * mat.sigma0_min() * mat.sigma0_min();
  ReturnMapResult r;
  r.state = old;
  r.stress = old.C * eps;

  std::array<bool, kMaxMechanisms> act{};
  bool any = false;
  for (int i = 0; i < n; ++i) {
    act[i] = activation(r.stress, old.q[i], mat.mechanisms[i]) > tol_g;
    any = any || act[i];
  }
  if (!any) {
    r.tangent = old.C;
    return r;
  }
  r.active = true;

  std::array<double, kMaxMechanisms> q = old.q;
  detail::Work w;
  std::array<int, kMaxMechanisms> idx{};
  int na = 0;
  SmallVec g;
  SmallMat J;

  auto residual = [&](const std::array<double, kMaxMechanisms>& qq, detail::Work& ww,
                      SmallVec& gg) {
    detail::evaluate(eps, mat, qq, ww);
    gg.resize(na);
    for (int a = 0; a < na; ++a)
      gg[a] = activation(ww.sigma, qq[idx[a]], mat.mechanisms[idx[a]]);
  };
  auto jacobian = [&]() {
    J.resize(na, na);
    if (opt.finite_difference_jacobian) {
      detail::Work wp;
      SmallVec gp;
      for (int b = 0; b < na; ++b) {
        auto qp = q;
        const double h = opt.fd_step * std::max(1.0, std::abs(q[idx[b]]));
        qp[idx[b]] += h;
        residual(qp, wp, gp);
        J.col(b) = (gp - g) / h;
      }
      return;
    }
    for (int b = 0; b < na; ++b) {
      const auto& mb = mat.mechanisms[idx[b]];
      const Vec6 ds = -w.C * ((2.0 / mb.kappa) * (mb.extraction_sq * w.sigma));
      for (int a = 0; a < na; ++a)
        J(a, b) = 2.0 * (mat.mechanisms[idx[a]].extraction_sq * w.sigma).dot(ds);
      J(b, b) -= mb.kappa * mb.kappa * mb.m * std::pow(q[idx[b]], mb.m - 1);
    }
  };

  bool done = false;
  for (int sweep = 0; sweep < opt.max_sweeps && !done; ++sweep) {
    na = 0;
    for (int i = 0; i < n; ++i)
      if (act[i]) idx[na++] = i;
    for (int a = 0; a < na; ++a)
      if (mat.mechanisms[idx[a]].m != 1.0 && q[idx[a]] <= 0) q[idx[a]] = 1e-12;

    bool converged = false;
    residual(q, w, g);
    for (int it = 0; it < opt.max_newton; ++it) {
      ++r.iterations;
      if (g.cwiseAbs().maxCoeff() <= tol_g) {
        converged = true;
        break;
      }
      jacobian();
      const SmallVec dq = -J.partialPivLu().solve(g);
      // Backtracking on the residual norm; q never drops below its old value.
      double step = 1.0;
      const double g0 = g.norm();
      auto q_try = q;
      detail::Work w_try;
      SmallVec g_try;
      for (int ls = 0; ls < 30; ++ls) {
        for (int a = 0; a < na; ++a)
          q_try[idx[a]] = std::max(old.q[idx[a]], q[idx[a]] + step * dq[a]);
        residual(q_try, w_try, g_try);
        if (g_try.norm() < g0 || ls == 29) break;
        step *= 0.5;
      }
      q = q_try;
      w = w_try;
      g = g_try;
    }
    if (!converged) {
      std::ostringstream os;
      os << "return_map: corrector did not converge, residuals";
      for (int a = 0; a < na; ++a) os << ' ' << mat.mechanisms[idx[a]].label << '=' << g[a];
      throw ReturnMapError(os.str());
    }

    // Active-set update: drop mechanisms stuck at their old value with a
    // negative residual, add inactive ones that are violated.
    done = true;
    for (int a = 0; a < na; ++a) {
      const int i = idx[a];
      if (q[i] <= old.q[i] && g[a] < -tol_g) {
        act[i] = false;
        done = false;
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!act[i] && activation(w.sigma, q[i], mat.mechanisms[i]) > tol_g) {
        act[i] = true;
        done = false;
      }
    }
    if (!done) {
      for (int i = 0; i < n; ++i)
        if (!act[i]) q[i] = old.q[i];
    }
  }
  if (!done) throw ReturnMapError("return_map: active set did not settle");

  // Mechanisms whose q did not grow carry no tangent contribution.
  na = 0;
  for (int i = 0; i < n; ++i)
    if (act[i] && q[i] > old.q[i]) idx[na++] = i;

  r.state.q = q;
  r.state.S = w.S;
  r.state.C = w.C;
  r.stress = w.sigma;
  r.tangent = w.C;
  if (na == 0) return r;
  r.active = true;

  jacobian();
  // dq/deps = -J^{-1} B, B_a = 2 C E_a^2 sigma; dsigma/deps = C + sum_b dsigma/dq_b dq_b/deps
  Eigen::Matrix<double, Eigen::Dynamic, 6, 0, kMaxMechanisms, 6> B(na, 6);
  Eigen::Matrix<double, 6, Eigen::Dynamic, 0, 6, kMaxMechanisms> D(6, na);
  for (int a = 0; a < na; ++a) {
    const auto& m = mat.mechanisms[idx[a]];
    const Vec6 es = m.extraction_sq * w.sigma;
    B.row(a) = 2.0 * (w.C * es).transpose();
    D.col(a) = -(2.0 / m.kappa) * (w.C * es);
  }
  const auto dq = (-J.partialPivLu().solve(B)).eval();
  r.tangent.noalias() += D * dq;
  return r;
}

struct UniaxialResult {
  Vec6 strain;
  ReturnMapResult point;
};

// Prescribed axial strain along component `axis`, all other stress
// components driven to zero. `guess` seeds the free strain components.
inline UniaxialResult uniaxial_stress(const Material& mat, const State& old, double axial_strain,
                                      const Vec6& guess, int axis = 0, double tol = 1e-10,
                                      const ReturnMapOptions& opt = {}) {
  Vec6 eps = guess;
  eps[axis] = axial_strain;
  std::array<int, 5> free{};
  for (int k = 0, j = 0; k < 6; ++k)
    if (k != axis) free[j++] = k;
  for (int it = 0; it < 50; ++it) {
    ReturnMapResult rm = return_map(eps, old, mat, opt);
    Eigen::Matrix<double, 5, 1> rf;
    Eigen::Matrix<double, 5, 5> Kff;
    for (int a = 0; a < 5; ++a) {
      rf[a] = rm.stress[free[a]];
      for (int b = 0; b < 5; ++b) Kff(a, b) = rm.tangent(free[a], free[b]);
    }
    const double scale = std::max(std::abs(rm.stress[axis]), 1e-12 * mat.C0.norm());
    if (rf.cwiseAbs().maxCoeff() <= tol * scale) return {eps, rm};
    const Eigen::Matrix<double, 5, 1> d = Kff.partialPivLu().solve(rf);
    for (int a = 0; a < 5; ++a) eps[free[a]] -= d[a];
  }
  throw ReturnMapError("uniaxial_stress: free components did not converge");
}

}  // namespace smc::damage
