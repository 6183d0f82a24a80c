// Binary tree of rank-one laminates with a leaf rotation layer. All
// parameters are affine in the orientation parameter a; leaf weights scale
// with the fiber fraction f.
//
// Heap layout: node j has children 2j+1 and 2j+2; indices >= nodes() are
// leaves. Even leaves hold phase 1 (matrix), odd leaves phase 2 (bundle).
#pragma once

#include <smc/tensor.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace smc::dmn {

using Vec = Eigen::VectorXd;

inline Mat6 laminate_homogenize(const Mat6& C1, const Mat6& C2, double c1, const Vec3& n) {
  if (!(c1 >= 0 && c1 <= 1)) throw std::invalid_argument("laminate_homogenize: c1 outside [0,1]");
  if (c1 == 0) return C2;
  if (c1 == 1) return C1;
  const double c2 = 1 - c1;
  const Mat63 N = jump_operator(n.normalized());
  const Mat6 dC = C1 - C2;
  const Eigen::Matrix3d K = N.transpose() * (c2 * C1 + c1 * C2) * N;
  Eigen::LDLT<Eigen::Matrix3d> ldlt(K);
  if (ldlt.info() != Eigen::Success || !(std::abs(K.determinant()) > 0))
    throw std::domain_error("laminate_homogenize: singular traction system");
  const Mat36 B = N.transpose() * dC;
  const Mat6 C = c1 * C1 + c2 * C2 - c1 * c2 * B.transpose() * ldlt.solve(B);
  return 0.5 * (C + C.transpose());
}

inline bool is_bundle_leaf(int leaf) { return leaf % 2 == 1; }

struct Params {
  int depth = 0;
  std::vector<Vec3> n0, n1;                     // per node
  std::vector<double> v;                        // per leaf
  std::vector<std::array<double, 3>> ang0, ang1;  // per leaf, Z-X-Z Euler angles
  double f_min = 0.15, f_max = 0.35, a_min = 0.5, a_max = 0.8;

  int nodes() const { return (1 << depth) - 1; }
  int leaves() const { return 1 << depth; }
  int size() const { return 6 * nodes() + leaves() + 6 * leaves(); }

  static Params random(int depth, std::uint64_t seed) {
    if (depth < 1 || depth > 12) throw std::invalid_argument("Params::random: depth out of range");
    Params p;
    p.depth = depth;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nrm;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int j = 0; j < p.nodes(); ++j) {
      p.n0.push_back(Vec3(nrm(rng), nrm(rng), nrm(rng)).normalized());
      p.n1.push_back(Vec3::Zero());
    }
    double se = 0, so = 0;
    for (int i = 0; i < p.leaves(); ++i) {
      p.v.push_back(0.2 + 0.8 * u(rng));
      (is_bundle_leaf(i) ? so : se) += p.v.back();
    }
    for (int i = 0; i < p.leaves(); ++i) p.v[i] /= is_bundle_leaf(i) ? so : se;
    // In-plane angle spread shrinks linearly to zero at a = 1.
    for (int i = 0; i < p.leaves(); ++i) {
      const double phi = kPi * (u(rng) - 0.5);
      p.ang0.push_back({2 * phi, 0.0, 0.0});
      p.ang1.push_back({-2 * phi, 0.0, 0.0});
    }
    return p;
  }

  Vec pack() const {
    Vec x(size());
    int k = 0;
    for (const auto& n : n0) x.segment<3>(k) = n, k += 3;
    for (const auto& n : n1) x.segment<3>(k) = n, k += 3;
    for (double w : v) x[k++] = w;
    for (const auto& a : ang0)
      for (double t : a) x[k++] = t;
    for (const auto& a : ang1)
      for (double t : a) x[k++] = t;
    return x;
  }
  void unpack(const Vec& x) {
    if (x.size() != size()) throw std::invalid_argument("Params::unpack: size mismatch");
    int k = 0;
    for (auto& n : n0) n = x.segment<3>(k), k += 3;
    for (auto& n : n1) n = x.segment<3>(k), k += 3;
    for (double& w : v) w = x[k++];
    for (auto& a : ang0)
      for (double& t : a) t = x[k++];
    for (auto& a : ang1)
      for (double& t : a) t = x[k++];
  }
  // Offsets into the packed vector.
  int off_n0() const { return 0; }
  int off_n1() const { return 3 * nodes(); }
  int off_v() const { return 6 * nodes(); }
  int off_ang0() const { return 6 * nodes() + leaves(); }
  int off_ang1() const { return 6 * nodes() + 4 * leaves(); }

  // Consistency residuals sum<v_even> - 1 and sum<v_odd> - 1.
  std::array<double, 2> weight_residuals() const {
    double se = 0, so = 0;
    for (int i = 0; i < leaves(); ++i) (is_bundle_leaf(i) ? so : se) += std::max(v[i], 0.0);
    return {se - 1, so - 1};
  }
};

// Network evaluated at (f, a).
struct Instance {
  int depth = 0;
  double f = 0, a = 0;
  std::vector<Vec3> normal;         // per node, unit
  std::vector<double> weight;       // per leaf
  std::vector<double> node_weight;  // per node, subtree sum
  std::vector<Mat3> R;              // per leaf
  std::vector<Mat6> Q;              // per leaf, Mandel form of R

  int nodes() const { return (1 << depth) - 1; }
  int leaves() const { return 1 << depth; }
  double child_weight(int c) const { return c >= nodes() ? weight[c - nodes()] : node_weight[c]; }
  double total_weight() const { return node_weight[0]; }
};

inline Mat3 euler_matrix(const std::array<double, 3>& e) {
  return Rotation::rz(e[0]) * Rotation::rx(e[1]) * Rotation::rz(e[2]);
}

inline Instance instantiate(const Params& p, double f, double a) {
  if (!(f >= 0 && f <= 1)) throw std::invalid_argument("instantiate: f outside [0,1]");
  Instance in;
  in.depth = p.depth;
  in.f = f;
  in.a = a;
  const int nn = p.nodes(), nl = p.leaves();
  in.normal.resize(nn);
  for (int j = 0; j < nn; ++j) {
    const Vec3 m = p.n0[j] + a * p.n1[j];
    const double len = m.norm();
    if (!(len > 1e-12)) throw std::domain_error("instantiate: lamination direction vanishes");
    in.normal[j] = m / len;
  }
  in.weight.resize(nl);
  in.R.resize(nl);
  in.Q.resize(nl);
  for (int i = 0; i < nl; ++i) {
    in.weight[i] = (is_bundle_leaf(i) ? f : 1 - f) * std::max(p.v[i], 0.0);
    std::array<double, 3> e;
    for (int k = 0; k < 3; ++k) e[k] = p.ang0[i][k] + a * p.ang1[i][k];
    in.R[i] = euler_matrix(e);
    in.Q[i] = mandel_rotation(in.R[i]);
  }
  in.node_weight.assign(nn, 0.0);
  for (int j = nn - 1; j >= 0; --j) in.node_weight[j] = in.child_weight(2 * j + 1) + in.child_weight(2 * j + 2);
  if (!(in.node_weight[0] > 0)) throw std::domain_error("instantiate: all weights vanish");
  return in;
}

// Node kinds during the bottom-up collapse.
enum class NodeMode : std::uint8_t { Empty, Left, Right, Laminate };

struct Tape {
  std::vector<Mat6> C;  // per heap slot (nodes then leaves)
  std::vector<NodeMode> mode;
  std::vector<double> c1;
  std::vector<Eigen::Matrix3d> Kinv;
  std::vector<Mat63> N;
  std::vector<Mat6> dC, P;
};

inline Mat6 forward(const Instance& in, const Mat6& C1, const Mat6& C2, Tape* tape = nullptr) {
  const int nn = in.nodes(), nl = in.leaves();
  std::vector<Mat6> local;
  std::vector<Mat6>& C = tape ? tape->C : local;
  C.resize(nn + nl);
  for (int i = 0; i < nl; ++i) {
    const Mat6& Cp = is_bundle_leaf(i) ? C2 : C1;
    C[nn + i] = in.Q[i] * Cp * in.Q[i].transpose();
  }
  if (tape) {
    tape->mode.assign(nn, NodeMode::Empty);
    tape->c1.assign(nn, 0.0);
    tape->Kinv.resize(nn);
    tape->N.resize(nn);
    tape->dC.resize(nn);
    tape->P.resize(nn);
  }
  for (int j = nn - 1; j >= 0; --j) {
    const int l = 2 * j + 1, r = 2 * j + 2;
    const double wl = in.child_weight(l), wr = in.child_weight(r);
    NodeMode mode;
    if (wl <= 0 && wr <= 0) {
      mode = NodeMode::Empty;
      C[j].setZero();
    } else if (wr <= 0) {
      mode = NodeMode::Left;
      C[j] = C[l];
    } else if (wl <= 0) {
      mode = NodeMode::Right;
      C[j] = C[r];
    } else {
      mode = NodeMode::Laminate;
      const double c1 = wl / (wl + wr), c2 = 1 - c1;
      const Mat63 N = jump_operator(in.normal[j]);
      const Mat6 dC = C[l] - C[r];
      const Eigen::Matrix3d K = N.transpose() * (c2 * C[l] + c1 * C[r]) * N;
      const Eigen::Matrix3d Kinv = K.inverse();
      const Mat6 P = N * Kinv * N.transpose();
      C[j] = c1 * C[l] + c2 * C[r] - c1 * c2 * dC * P * dC;
      if (tape) {
        tape->c1[j] = c1;
        tape->Kinv[j] = Kinv;
        tape->N[j] = N;
        tape->dC[j] = dC;
        tape->P[j] = P;
      }
    }
    if (tape) tape->mode[j] = mode;
  }
  return C[0];
}

inline Mat6 effective_stiffness(const Params& p, const Mat6& C1, const Mat6& C2, double f, double a) {
  return forward(instantiate(p, f, a), C1, C2);
}

// Adjoint of N(n) = jump_operator(n): returns dL/dn given dL/dN.
inline Vec3 jump_operator_adjoint(const Mat63& Nbar) {
  Vec3 g = Vec3::Zero();
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kMandelPairs[k];
    const double w = mandel_weight(k) * 0.5;
    g[j] += w * Nbar(k, i);
    g[i] += w * Nbar(k, j);
  }
  return g;
}

// Reverse pass: given dL/dC_root, accumulates dL/dparams into grad (packed
// layout of Params).
inline void backward(const Params& p, const Instance& in, const Tape& t, const Mat6& C1,
                     const Mat6& C2, const Mat6& Gbar_root, Vec& grad) {
  const int nn = in.nodes(), nl = in.leaves();
  std::vector<Mat6> G(nn + nl, Mat6::Zero());
  std::vector<double> Wbar(nn + nl, 0.0);
  G[0] = Gbar_root;
  for (int j = 0; j < nn; ++j) {
    const int l = 2 * j + 1, r = 2 * j + 2;
    Wbar[l] += Wbar[j];
    Wbar[r] += Wbar[j];
    switch (t.mode[j]) {
      case NodeMode::Empty:
        break;
      case NodeMode::Left:
        G[l] += G[j];
        break;
      case NodeMode::Right:
        G[r] += G[j];
        break;
      case NodeMode::Laminate: {
        const double c1 = t.c1[j], c2 = 1 - c1;
        const Mat6& Gj = G[j];
        const Mat6& dC = t.dC[j];
        const Mat6& P = t.P[j];
        const Mat63& N = t.N[j];
        const Eigen::Matrix3d& Kinv = t.Kinv[j];
        const Mat6 X = dC * P * dC;
        const Mat6 dCbar = -c1 * c2 * (Gj * dC * P + P * dC * Gj);
        const Mat6 Pbar = -c1 * c2 * dC * Gj * dC;
        const Eigen::Matrix3d Kbar = -Kinv * N.transpose() * Pbar * N * Kinv;
        const Mat6 M = c2 * t.C[l] + c1 * t.C[r];
        const Mat6 Mbar = N * Kbar * N.transpose();
        const Mat63 NK = N * Kinv;
        const Mat63 Nbar = Pbar * NK + Pbar.transpose() * NK + M * N * Kbar.transpose() +
                           M.transpose() * N * Kbar;
        G[l] += c1 * Gj + dCbar + c2 * Mbar;
        G[r] += c2 * Gj - dCbar + c1 * Mbar;
        const double gx = Gj.cwiseProduct(X).sum();
        const double c1bar = Gj.cwiseProduct(t.C[l]).sum() - c2 * gx + Mbar.cwiseProduct(t.C[r]).sum();
        const double c2bar = Gj.cwiseProduct(t.C[r]).sum() - c1 * gx + Mbar.cwiseProduct(t.C[l]).sum();
        const double W = in.node_weight[j];
        Wbar[l] += (c1bar - c2bar) * c2 / W;
        Wbar[r] += (c2bar - c1bar) * c1 / W;
        // Through n = m/|m|, m = n0 + a n1.
        const Vec3 nbar = jump_operator_adjoint(Nbar);
        const Vec3 m = p.n0[j] + in.a * p.n1[j];
        const Vec3& n = in.normal[j];
        const Vec3 mbar = (nbar - n * n.dot(nbar)) / m.norm();
        grad.segment<3>(p.off_n0() + 3 * j) += mbar;
        grad.segment<3>(p.off_n1() + 3 * j) += in.a * mbar;
        break;
      }
    }
  }
  for (int i = 0; i < nl; ++i) {
    const int s = nn + i;
    const bool bundle = is_bundle_leaf(i);
    if (p.v[i] > 0) grad[p.off_v() + i] += Wbar[s] * (bundle ? in.f : 1 - in.f);
    const Mat6& Gl = G[s];
    if (Gl.isZero(0.0)) continue;
    const Mat6& Cp = bundle ? C2 : C1;
    const Mat6 Qbar = (Gl + Gl.transpose()) * in.Q[i] * Cp;
    std::array<double, 3> e;
    for (int k = 0; k < 3; ++k) e[k] = p.ang0[i][k] + in.a * p.ang1[i][k];
    const Mat3 Z1 = Rotation::rz(e[0]), X = Rotation::rx(e[1]), Z2 = Rotation::rz(e[2]);
    const std::array<Mat3, 3> dR{Rotation::drz(e[0]) * X * Z2, Z1 * Rotation::drx(e[1]) * Z2,
                                 Z1 * X * Rotation::drz(e[2])};
    for (int k = 0; k < 3; ++k) {
      const double g = Qbar.cwiseProduct(mandel_rotation_derivative(in.R[i], dR[k])).sum();
      grad[p.off_ang0() + 3 * i + k] += g;
      grad[p.off_ang1() + 3 * i + k] += in.a * g;
    }
  }
}

inline double l1(const Mat6& m) { return m.cwiseAbs().sum(); }

// Relative entrywise L1 error of one sample and (optionally) its gradient.
inline double sample_loss(const Params& p, const Mat6& C1, const Mat6& C2, double f, double a,
                          const Mat6& target, Vec* grad, double scale = 1.0) {
  const Instance in = instantiate(p, f, a);
  Tape tape;
  const Mat6 C = forward(in, C1, C2, grad ? &tape : nullptr);
  const double denom = l1(target);
  const Mat6 diff = C - target;
  if (grad) {
    const Mat6 G = diff.unaryExpr([](double x) { return double((x > 0) - (x < 0)); }) * (scale / denom);
    backward(p, in, tape, C1, C2, G, *grad);
  }
  return l1(diff) / denom;
}

inline double penalty(const Params& p, double lambda, Vec* grad) {
  const auto r = p.weight_residuals();
  if (grad)
    for (int i = 0; i < p.leaves(); ++i)
      if (p.v[i] > 0) (*grad)[p.off_v() + i] += 2 * lambda * r[is_bundle_leaf(i) ? 1 : 0];
  return lambda * (r[0] * r[0] + r[1] * r[1]);
}

inline constexpr const char* kModelMagic = "SMC-DMN-MODEL v1";

inline void write_params(std::ostream& os, const Params& p) {
  const auto prec = os.precision(17);
  os << kModelMagic << '\n';
  os << "depth " << p.depth << '\n';
  os << "domain_f " << p.f_min << ' ' << p.f_max << '\n';
  os << "domain_a " << p.a_min << ' ' << p.a_max << '\n';
  // Directions are listed in reversed breadth-first order of the heap.
  os << "directions " << p.nodes() << '\n';
  for (int j = p.nodes() - 1; j >= 0; --j)
    os << j << ' ' << p.n0[j].transpose() << ' ' << p.n1[j].transpose() << '\n';
  os << "weights " << p.leaves() << '\n';
  for (int i = 0; i < p.leaves(); ++i) os << i << ' ' << p.v[i] << '\n';
  os << "rotations " << p.leaves() << '\n';
  for (int i = 0; i < p.leaves(); ++i) {
    os << i;
    for (double t : p.ang0[i]) os << ' ' << t;
    for (double t : p.ang1[i]) os << ' ' << t;
    os << '\n';
  }
  os.precision(prec);
}

inline Params read_params(std::istream& is) {
  std::string line, tag;
  std::getline(is, line);
  if (line != kModelMagic) throw std::runtime_error("read_params: bad magic string");
  Params p;
  int count = 0;
  auto expect = [&](const char* t) {
    if (!(is >> tag) || tag != t) throw std::runtime_error(std::string("read_params: expected ") + t);
  };
  expect("depth");
  is >> p.depth;
  if (p.depth < 1 || p.depth > 12) throw std::runtime_error("read_params: bad depth");
  expect("domain_f");
  is >> p.f_min >> p.f_max;
  expect("domain_a");
  is >> p.a_min >> p.a_max;
  expect("directions");
  is >> count;
  if (count != p.nodes()) throw std::runtime_error("read_params: node count mismatch");
  p.n0.resize(count);
  p.n1.resize(count);
  for (int k = 0; k < count; ++k) {
    int j;
    is >> j;
    if (j < 0 || j >= count) throw std::runtime_error("read_params: bad node index");
    is >> p.n0[j][0] >> p.n0[j][1] >> p.n0[j][2] >> p.n1[j][0] >> p.n1[j][1] >> p.n1[j][2];
  }
  expect("weights");
  is >> count;
  if (count != p.leaves()) throw std::runtime_error("read_params: leaf count mismatch");
  p.v.resize(count);
  for (int k = 0; k < count; ++k) {
    int i;
    is >> i >> p.v[k];
  }
  expect("rotations");
  is >> count;
  p.ang0.resize(count);
  p.ang1.resize(count);
  for (int k = 0; k < count; ++k) {
    int i;
    is >> i >> p.ang0[k][0] >> p.ang0[k][1] >> p.ang0[k][2] >> p.ang1[k][0] >> p.ang1[k][1] >> p.ang1[k][2];
  }
  if (!is) throw std::runtime_error("read_params: truncated model file");
  return p;
}

}  // namespace smc::dmn
