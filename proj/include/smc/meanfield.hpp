// Mori-Tanaka with aligned cylinders, planar orientation averaging, training
// targets for the material network, and a secant mean-field reference for
// nonlinear validation.
#pragma once

#include <smc/damage.hpp>
#include <smc/tensor.hpp>

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace smc::meanfield {

// Eshelby tensor (Mandel form) of an infinite circular cylinder along e1 in an
// isotropic matrix with Poisson ratio nu.
inline Mat6 eshelby_cylinder(double nu) {
  const double d = 8 * (1 - nu);
  Mat6 S = Mat6::Zero();
  S(1, 1) = S(2, 2) = (5 - 4 * nu) / d;
  S(1, 2) = S(2, 1) = (4 * nu - 1) / d;
  S(1, 0) = S(2, 0) = nu / (2 * (1 - nu));
  S(3, 3) = 2 * (3 - 4 * nu) / d;
  S(4, 4) = S(5, 5) = 0.5;
  return S;
}

// Mori-Tanaka estimate for inclusions Ci at fraction v in matrix Cm.
inline Mat6 mori_tanaka(const Mat6& Cm, const Mat6& Ci, double v, const Mat6& eshelby) {
  if (!(v >= 0 && v <= 1)) throw std::invalid_argument("mori_tanaka: fraction outside [0,1]");
  const Mat6 I = Mat6::Identity();
  const Mat6 A = (I + eshelby * Cm.inverse() * (Ci - Cm)).inverse();
  const Mat6 C = Cm + v * (Ci - Cm) * A * ((1 - v) * I + v * A).inverse();
  return 0.5 * (C + C.transpose());
}

inline bool is_isotropic(const Mat6& C, double tol = 1e-8) {
  const auto k = isotropic_constants(C);
  return (isotropic_from_bulk_shear(k.bulk, k.shear) - C).cwiseAbs().maxCoeff() <=
         tol * C.cwiseAbs().maxCoeff();
}

inline Mat6 mori_tanaka_cylinder(const Mat6& Cf, const Mat6& Cm, double vf) {
  if (!(vf >= 0 && vf <= 1))
    throw std::invalid_argument("mori_tanaka_cylinder: fraction outside [0,1]");
  if (!is_isotropic(Cf) || !is_isotropic(Cm))
    throw std::invalid_argument("mori_tanaka_cylinder: phases must be isotropic");
  return mori_tanaka(Cm, Cf, vf, eshelby_cylinder(isotropic_constants(Cm).poisson));
}

struct PlanarQuadrature {
  std::vector<double> angles, weights;
  double concentration = 0;
};

// N equally spaced in-plane angles on [0, pi) with weights proportional to
// exp(k (cos 2t - 1)); k is found by bisection so that sum w cos^2 t = a.
inline PlanarQuadrature planar_orientation_quadrature(double a, int n = 64) {
  if (!(a >= 0.5 && a <= 1.0))
    throw std::invalid_argument("planar_orientation_quadrature: a outside [0.5, 1]");
  PlanarQuadrature q;
  if (a == 1.0) {
    q.angles = {0.0};
    q.weights = {1.0};
    q.concentration = INFINITY;
    return q;
  }
  q.angles.resize(n);
  q.weights.resize(n);
  for (int k = 0; k < n; ++k) q.angles[k] = kPi * k / n;
  auto moment = [&](double kappa) {
    double s = 0, m = 0;
    for (int k = 0; k < n; ++k) {
      const double w = std::exp(kappa * (std::cos(2 * q.angles[k]) - 1));
      q.weights[k] = w;
      s += w;
      m += w * std::cos(q.angles[k]) * std::cos(q.angles[k]);
    }
    for (auto& w : q.weights) w /= s;
    return m / s;
  };
  double lo = 0, hi = 1;
  while (moment(hi) < a) {
    lo = hi;
    hi *= 2;
    if (hi > 1e8) throw std::domain_error("planar_orientation_quadrature: a not reachable");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double m = moment(mid);
    if (std::abs(m - a) <= 1e-13) {
      lo = hi = mid;
      break;
    }
    (m < a ? lo : hi) = mid;
  }
  q.concentration = 0.5 * (lo + hi);
  const double m = moment(q.concentration);
  if (std::abs(m - a) > 1e-12) throw std::domain_error("planar_orientation_quadrature: no root");
  for (double w : q.weights)
    if (w < 0) throw std::domain_error("planar_orientation_quadrature: negative weight");
  return q;
}

inline Mat6 orientation_average(const Mat6& C_ud, double a, int n = 64) {
  if (a == 1.0) return C_ud;
  const auto q = planar_orientation_quadrature(a, n);
  Mat6 C = Mat6::Zero();
  for (std::size_t k = 0; k < q.angles.size(); ++k)
    C += q.weights[k] * rotate_tensor4(C_ud, Rotation::about_z(q.angles[k]));
  return 0.5 * (C + C.transpose());
}

struct PhasePair {
  Mat6 C1, C2;
  double fraction2 = 0;
};

struct TrainingSample {
  Mat6 C1, C2;
  double f = 0, a = 0;
  Mat6 target;
};

// Aligned cylinders of C2 in C1 at fraction f, then planar averaging with a.
inline Mat6 two_step_oracle(const Mat6& C1, const Mat6& C2, double f, double a) {
  const double nu = isotropic_constants(C1).poisson;
  return orientation_average(mori_tanaka(C1, C2, f, eshelby_cylinder(nu)), a);
}

inline Mat6 voigt_bound(const Mat6& C1, const Mat6& C2_avg, double f) {
  return (1 - f) * C1 + f * C2_avg;
}
inline Mat6 reuss_bound(const Mat6& S1, const Mat6& S2_avg, double f) {
  return ((1 - f) * S1 + f * S2_avg).inverse();
}

// 41 (f, a) tuples on [0.15, 0.35] x [0.5, 0.8]: nine a-columns alternating
// between five and four f-levels.
inline std::vector<std::pair<double, double>> training_grid_41() {
  std::vector<std::pair<double, double>> g;
  for (int c = 0; c < 9; ++c) {
    const double a = 0.5 + 0.0375 * c;
    if (c % 2 == 0)
      for (int i = 0; i < 5; ++i) g.emplace_back(0.15 + 0.05 * i, a);
    else
      for (int i = 0; i < 4; ++i) g.emplace_back(0.175 + 0.05 * i, a);
  }
  return g;
}

inline constexpr double kIntraBundleFraction = 0.7;

inline PhasePair sample_phase_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(std::log(lo) + u(rng) * (std::log(hi) - std::log(lo)));
  };
  const double E1 = log_uniform(1000.0, 10000.0);
  const double nu1 = 0.2 + 0.25 * u(rng);
  const double Ef = log_uniform(40000.0, 100000.0);
  const double nuf = 0.15 + 0.15 * u(rng);
  PhasePair p;
  p.C1 = isotropic_stiffness(E1, nu1);
  p.C2 = mori_tanaka_cylinder(isotropic_stiffness(Ef, nuf), p.C1, kIntraBundleFraction);
  return p;
}

inline std::vector<TrainingSample> build_training_set(
    const std::vector<std::pair<double, double>>& grid, int n_samples, std::uint64_t seed) {
  for (auto [f, a] : grid)
    if (f < 0.15 - 1e-12 || f > 0.35 + 1e-12 || a < 0.5 - 1e-12 || a > 0.8 + 1e-12)
      throw std::invalid_argument("build_training_set: grid point outside the training domain");
  if (grid.empty()) throw std::invalid_argument("build_training_set: empty grid");
  std::mt19937_64 rng(seed);
  std::vector<TrainingSample> out;
  out.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    const PhasePair p = sample_phase_pair(rng);
    const auto [f, a] = grid[s % grid.size()];
    out.push_back({p.C1, p.C2, f, a, two_step_oracle(p.C1, p.C2, f, a)});
  }
  return out;
}

// Secant Mori-Tanaka with damaged phases, Voigt-averaged over the planar
// orientation quadrature. Used as the nonlinear reference for the network.
class SecantReference {
 public:
  SecantReference(damage::Material matrix, damage::Material bundle, double f, double a,
                  int n_theta = 64)
      : m_(std::move(matrix)), b_(std::move(bundle)), f_(f), quad_(planar_orientation_quadrature(a, n_theta)) {
    for (double t : quad_.angles) {
      Q_.push_back(mandel_rotation(Rotation::about_z(t)));
      sm_.push_back(damage::State::fresh(m_));
      sb_.push_back(damage::State::fresh(b_));
    }
  }

  // Strain-driven step from the last committed state; commits the new one.
  Vec6 step(const Vec6& strain) {
    Vec6 sigma = Vec6::Zero();
    for (std::size_t k = 0; k < Q_.size(); ++k) {
      const Vec6 local = Q_[k].transpose() * strain;
      sigma += quad_.weights[k] * (Q_[k] * solve_point(local, sm_[k], sb_[k]));
    }
    return sigma;
  }

 private:
  Vec6 solve_point(const Vec6& eps, damage::State& sm, damage::State& sb) const {
    const Mat6 I = Mat6::Identity();
    damage::State tm = sm, tb = sb;
    damage::ReturnMapResult rm, rb;
    double omega = 1.0, last = INFINITY;
    for (int it = 0; it < 500; ++it) {
      const double nu = isotropic_constants(tm.C).poisson;
      const Mat6 A = (I + eshelby_cylinder(nu) * tm.S * (tb.C - tm.C)).inverse();
      const Vec6 em = ((1 - f_) * I + f_ * A).inverse() * eps;
      const Vec6 eb = A * em;
      rm = damage::return_map(em, sm, m_);
      rb = damage::return_map(eb, sb, b_);
      double diff = 0;
      for (int i = 0; i < 3; ++i)
        diff += std::abs(rm.state.q[i] - tm.q[i]) + std::abs(rb.state.q[i] - tb.q[i]);
      if (diff <= 1e-13) {
        sm = rm.state;
        sb = rb.state;
        return (1 - f_) * rm.stress + f_ * rb.stress;
      }
      if (diff > last) omega = std::max(0.05, 0.5 * omega);
      last = diff;
      for (int i = 0; i < 3; ++i) {
        tm.q[i] += omega * (rm.state.q[i] - tm.q[i]);
        tb.q[i] += omega * (rb.state.q[i] - tb.q[i]);
      }
      tm.S = damage::compliance_from_state(m_.S0, m_.mechanisms, tm.q);
      tm.C = tm.S.inverse();
      tb.S = damage::compliance_from_state(b_.S0, b_.mechanisms, tb.q);
      tb.C = tb.S.inverse();
    }
    throw std::runtime_error("SecantReference: fixed point did not converge");
  }

  damage::Material m_, b_;
  double f_;
  PlanarQuadrature quad_;
  std::vector<Mat6> Q_;
  std::vector<damage::State> sm_, sb_;
};

}  // namespace smc::meanfield
