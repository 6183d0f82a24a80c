// Implicit nonlinear evaluation of a network with damage materials at the
// leaves. Unknowns are the jump vectors of the active laminate nodes; the
// Jacobian couples a node only with its ancestors, so it is factorized by
// eliminating the tree from the leaves upwards.
#pragma once

#include <smc/damage.hpp>
#include <smc/dmn.hpp>

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace smc::dmn {

class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkState {
  std::vector<damage::State> leaf;
  std::vector<Mat6> stiffness;  // committed secant stiffness per leaf, global frame
  Vec u;                        // 3 per node
};

// Prescribed strain components in a control frame; the remaining components
// are driven to the prescribed stress. frame maps network-frame Mandel vectors
// to the control frame.
struct Control {
  Mat6 frame = Mat6::Identity();
  std::array<bool, 6> strain_given{true, true, true, true, true, true};
  Vec6 strain = Vec6::Zero();  // free components are the initial guess; updated
  Vec6 stress = Vec6::Zero();  // target for free components

  static Control uniaxial(double axial_strain, const Vec6& guess, const Mat6& frame = Mat6::Identity()) {
    Control c;
    c.frame = frame;
    c.strain_given = {true, false, false, false, false, false};
    c.strain = guess;
    c.strain[0] = axial_strain;
    return c;
  }
};

struct StepResult {
  Vec6 stress;   // control frame
  Mat6 tangent;  // control frame, all components
  int iterations = 0;
  bool damage_growth = false;
};

struct SolverOptions {
  double tol_rel = 1e-10;
  double tol_mixed_rel = 1e-9;
  int max_iterations = 25;
  int max_halvings = 8;
  damage::ReturnMapOptions return_map;
};

class NonlinearNetwork {
 public:
  NonlinearNetwork(const Instance& in, damage::Material phase1, damage::Material phase2,
                   SolverOptions opt = {})
      : in_(in), mat_{std::move(phase1), std::move(phase2)}, opt_(opt) {
    const int nn = in_.nodes(), nl = in_.leaves();
    iso_[0] = rotation_invariant(mat_[0]);
    iso_[1] = rotation_invariant(mat_[1]);
    const double W = in_.total_weight();
    w_.resize(nl);
    for (int i = 0; i < nl; ++i) w_[i] = in_.weight[i] / W;
    active_.assign(nn, false);
    c1_.assign(nn, 0.0);
    N_.resize(nn);
    for (int j = 0; j < nn; ++j) {
      const double wl = in_.child_weight(2 * j + 1), wr = in_.child_weight(2 * j + 2);
      active_[j] = wl > 0 && wr > 0;
      c1_[j] = active_[j] ? wl / (wl + wr) : 0.0;
      N_[j] = jump_operator(in_.normal[j]);
    }
    // Active ancestors of every active node, root first, with the jump
    // coefficient seen from that node's side.
    anc_.resize(nn);
    coef_.resize(nn);
    for (int b = 0; b < nn; ++b) {
      if (!active_[b]) continue;
      std::vector<std::pair<int, double>> chain;
      for (int c = b; c > 0;) {
        const int a = (c - 1) / 2;
        if (active_[a]) chain.emplace_back(a, (c == 2 * a + 1) ? 1 - c1_[a] : -c1_[a]);
        c = a;
      }
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        anc_[b].push_back(it->first);
        coef_[b].push_back(it->second);
      }
    }
    for (int j = nn - 1; j >= 0; --j)
      if (active_[j]) order_.push_back(j);
    Dg_.resize(nn);
    Up_.resize(nn);
    Lo_.resize(nn);
    Zup_.resize(nn);
    rhs_.resize(nn);
    H_.resize(nn);
    for (int j = 0; j < nn; ++j) {
      Up_[j].resize(anc_[j].size());
      Lo_[j].resize(anc_[j].size());
      Zup_[j].resize(anc_[j].size());
    }
    Ssig_.resize(nn + nl);
    ST_.resize(nn + nl);
    off_.resize(nn + nl);
    eps_.resize(nl);
    sig_.resize(nl);
    trial_.resize(nl);
    Ttrial_.resize(nl);
    const NetworkState s = fresh();
    Cref_ = 0;
    Mat6 Cavg = Mat6::Zero();
    for (int i = 0; i < nl; ++i) Cavg += w_[i] * s.stiffness[i];
    Cref_ = Cavg.norm();
  }

  const Instance& instance() const { return in_; }
  double normalized_weight(int leaf) const { return w_[leaf]; }
  const damage::Material& material(int leaf) const { return mat_[is_bundle_leaf(leaf) ? 1 : 0]; }

  NetworkState fresh() const {
    NetworkState s;
    const int nl = in_.leaves();
    s.leaf.reserve(nl);
    s.stiffness.resize(nl);
    for (int i = 0; i < nl; ++i) {
      const auto& m = material(i);
      s.leaf.push_back(damage::State::fresh(m));
      s.stiffness[i] = global(i, m.C0);
    }
    s.u = Vec::Zero(3 * in_.nodes());
    return s;
  }

  StepResult strain_step(const Vec6& strain, const NetworkState& old, NetworkState& out) {
    Control c;
    c.strain = strain;
    return solve(c, old, out);
  }

  // Newton solve from `old`; the converged state is written to `out`.
  StepResult solve(Control& ctl, const NetworkState& old, NetworkState& out) {
    std::array<int, 6> freec{};
    int nf = 0;
    for (int k = 0; k < 6; ++k)
      if (!ctl.strain_given[k]) freec[nf++] = k;

    const Mat6& G = ctl.frame;
    Vec u = old.u;
    Vec6 es = ctl.strain;
    StepResult res;
    double merit_prev = INFINITY;
    Vec du_prev = Vec::Zero(u.size());
    Vec6 des_prev = Vec6::Zero();
    int halvings = 0;

    for (int it = 0;; ++it) {
      const Vec6 ed = G.transpose() * es;
      evaluate(ed, u, old);
      const Vec6 ss = G * Ssig_[0];
      double ru = 0;
      for (int j : order_) ru += rhs_[j].col(0).squaredNorm();
      double rm = 0;
      for (int a = 0; a < nf; ++a) rm += std::pow(ss[freec[a]] - ctl.stress[freec[a]], 2);
      const double merit = ru + rm;
      const double tol_u = opt_.tol_rel * Cref_ * std::max(ed.norm(), 1e-12);
      const double tol_m = std::max(opt_.tol_mixed_rel * ss.norm(), tol_u);
      const bool conv = std::sqrt(ru) <= tol_u && std::sqrt(rm) <= tol_m;

      if (!conv && it > 0 && merit > merit_prev && halvings < opt_.max_halvings) {
        // Backtrack along the last Newton direction.
        du_prev *= 0.5;
        des_prev *= 0.5;
        u -= du_prev;
        es -= des_prev;
        ++halvings;
        continue;
      }
      if (conv) {
        res.stress = ss;
        factorize();
        res.tangent = G * macro_tangent() * G.transpose();
        res.iterations = it;
        commit(u, old, out, res.damage_growth);
        ctl.strain = es;
        return res;
      }
      if (it >= opt_.max_iterations) {
        std::ostringstream os;
        os << "network Newton did not converge: |r_u| = " << std::sqrt(ru) << " (tol " << tol_u
           << "), |r_mixed| = " << std::sqrt(rm) << " (tol " << tol_m << ")";
        throw SolveError(os.str());
      }
      merit_prev = merit;
      halvings = 0;

      factorize();
      // Linearized macro stress and tangent after eliminating u.
      Vec6 slin = Ssig_[0];
      Mat6 Cmac = ST_[0];
      for (int j : order_) {
        slin.noalias() -= H_[j] * X_(j).col(0);
        Cmac.noalias() -= H_[j] * X_(j).rightCols<6>();
      }
      Vec6 des = Vec6::Zero();
      if (nf > 0) {
        const Mat6 Cs = G * Cmac * G.transpose();
        const Vec6 sl = G * slin;
        Eigen::MatrixXd A(nf, nf);
        Eigen::VectorXd b(nf);
        for (int a = 0; a < nf; ++a) {
          b[a] = ctl.stress[freec[a]] - sl[freec[a]];
          for (int c = 0; c < nf; ++c) A(a, c) = Cs(freec[a], freec[c]);
        }
        const Eigen::VectorXd x = A.partialPivLu().solve(b);
        for (int a = 0; a < nf; ++a) des[freec[a]] = x[a];
      }
      const Vec6 ded = G.transpose() * des;
      for (int j : order_) du_prev.segment<3>(3 * j) = -X_(j).col(0) - X_(j).rightCols<6>() * ded;
      des_prev = des;
      u += du_prev;
      es += des;
    }
  }

  // Leaf strain and stress of the last evaluation (global frame).
  const Vec6& leaf_strain(int i) const { return eps_[i]; }
  const Vec6& leaf_stress(int i) const { return sig_[i]; }

  double phase_average(const NetworkState& s, int phase, int variable) const {
    double num = 0, den = 0;
    for (int i = 0; i < in_.leaves(); ++i) {
      if ((is_bundle_leaf(i) ? 1 : 0) != phase) continue;
      num += in_.weight[i] * s.leaf[i].q[variable];
      den += in_.weight[i];
    }
    if (!(den > 0)) throw std::domain_error("phase_average: phase carries no weight");
    return num / den;
  }

  // Elastic strain concentration: leaf strains per unit macro strain for the
  // committed secant stiffnesses. Returns per-leaf 6x6 maps (global frame).
  std::vector<Mat6> concentration(const NetworkState& s) {
    const int nl = in_.leaves();
    for (int i = 0; i < nl; ++i) {
      ST_[in_.nodes() + i] = w_[i] * s.stiffness[i];
      Ssig_[in_.nodes() + i].setZero();
    }
    assemble_from_leaves();
    factorize();
    // du = -Y de (Y = right block of X); leaf strain = de + sum s N du.
    std::vector<Mat6> A(nl);
    std::vector<Mat6> off(in_.nodes() + nl, Mat6::Zero());
    for (int j = 0; j < in_.nodes(); ++j) {
      const int l = 2 * j + 1, r = 2 * j + 2;
      off[l] = off[j];
      off[r] = off[j];
      if (!active_[j]) continue;
      const Mat6 jump = -N_[j] * X_(j).rightCols<6>();
      off[l] += (1 - c1_[j]) * jump;
      off[r] -= c1_[j] * jump;
    }
    for (int i = 0; i < nl; ++i) A[i] = Mat6::Identity() + off[in_.nodes() + i];
    return A;
  }

  const damage::Material& phase_material(int phase) const { return mat_[phase]; }
  bool phase_isotropic(int phase) const { return iso_[phase]; }

 private:
  using Rhs = Eigen::Matrix<double, 3, 7>;

  static bool rotation_invariant(const damage::Material& m) {
    const Rotation R = Rotation::euler_zxz(0.3, 0.7, 1.1);
    const damage::Material r = m.rotated(R);
    if ((r.S0 - m.S0).cwiseAbs().maxCoeff() > 1e-12 * m.S0.cwiseAbs().maxCoeff()) return false;
    for (int i = 0; i < m.size(); ++i)
      if ((r.mechanisms[i].extraction - m.mechanisms[i].extraction).cwiseAbs().maxCoeff() > 1e-12)
        return false;
    return true;
  }

  Mat6 global(int leaf, const Mat6& local) const {
    if (iso_[is_bundle_leaf(leaf) ? 1 : 0]) return local;
    return in_.Q[leaf] * local * in_.Q[leaf].transpose();
  }

  Rhs& X_(int j) { return rhs_[j]; }

  void evaluate(const Vec6& ed, const Vec& u, const NetworkState& old) {
    const int nn = in_.nodes(), nl = in_.leaves();
    off_[0].setZero();
    for (int j = 0; j < nn; ++j) {
      const int l = 2 * j + 1, r = 2 * j + 2;
      off_[l] = off_[j];
      off_[r] = off_[j];
      if (!active_[j]) continue;
      const Vec6 jump = N_[j] * u.segment<3>(3 * j);
      off_[l] += (1 - c1_[j]) * jump;
      off_[r] -= c1_[j] * jump;
    }
    for (int i = 0; i < nl; ++i) {
      const int s = nn + i;
      if (!(w_[i] > 0)) {
        Ssig_[s].setZero();
        ST_[s].setZero();
        continue;
      }
      eps_[i] = ed + off_[s];
      const int ph = is_bundle_leaf(i) ? 1 : 0;
      const bool iso = iso_[ph];
      const Vec6 el = iso ? eps_[i] : Vec6(in_.Q[i].transpose() * eps_[i]);
      damage::ReturnMapResult rm = damage::return_map(el, old.leaf[i], mat_[ph], opt_.return_map);
      sig_[i] = iso ? rm.stress : Vec6(in_.Q[i] * rm.stress);
      if (rm.active)
        Ttrial_[i] = global(i, rm.tangent);
      else
        Ttrial_[i] = old.stiffness[i];
      trial_[i] = rm.state;
      Ssig_[s] = w_[i] * sig_[i];
      ST_[s] = w_[i] * Ttrial_[i];
    }
    assemble_from_leaves();
  }

  void assemble_from_leaves() {
    const int nn = in_.nodes();
    for (int j = nn - 1; j >= 0; --j) {
      const int l = 2 * j + 1, r = 2 * j + 2;
      Ssig_[j] = Ssig_[l] + Ssig_[r];
      ST_[j] = ST_[l] + ST_[r];
      if (!active_[j]) continue;
      const double c1 = c1_[j], c2 = 1 - c1;
      const Mat63& N = N_[j];
      const Mat6 Y = c2 * ST_[l] - c1 * ST_[r];
      H_[j] = Y * N;
      const Mat36 GY = N.transpose() * Y;
      rhs_[j].col(0) = N.transpose() * (c2 * Ssig_[l] - c1 * Ssig_[r]);
      rhs_[j].rightCols<6>() = GY;
      Dg_[j] = N.transpose() * (c2 * c2 * ST_[l] + c1 * c1 * ST_[r]) * N;
      for (std::size_t k = 0; k < anc_[j].size(); ++k) {
        const Mat63& Na = N_[anc_[j][k]];
        const double s = coef_[j][k];
        Lo_[j][k] = s * Na.transpose() * H_[j];
        Up_[j][k] = s * GY * Na;
      }
    }
  }

  // Block elimination from the deepest nodes up; afterwards rhs_[j] holds
  // the solution blocks X_j for [r | G].
  void factorize() {
    for (int b : order_) {
      const auto& A = anc_[b];
      const Eigen::Matrix3d Dinv = Dg_[b].inverse();
      rhs_[b] = Dinv * rhs_[b];
      for (std::size_t l = 0; l < A.size(); ++l) Zup_[b][l] = Dinv * Up_[b][l];
      for (std::size_t k = 0; k < A.size(); ++k) {
        const int ak = A[k];
        rhs_[ak].noalias() -= Lo_[b][k] * rhs_[b];
        for (std::size_t l = 0; l < A.size(); ++l) {
          const Eigen::Matrix3d upd = Lo_[b][k] * Zup_[b][l];
          if (k == l)
            Dg_[ak] -= upd;
          else if (k > l)
            Up_[ak][l] -= upd;
          else
            Lo_[A[l]][k] -= upd;
        }
      }
    }
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const int b = *it;
      for (std::size_t l = 0; l < anc_[b].size(); ++l) rhs_[b].noalias() -= Zup_[b][l] * rhs_[anc_[b][l]];
    }
  }

  Mat6 macro_tangent() {
    Mat6 C = ST_[0];
    for (int j : order_) C.noalias() -= H_[j] * rhs_[j].rightCols<6>();
    return C;
  }

  void commit(const Vec& u, const NetworkState& old, NetworkState& out, bool& growth) {
    const int nl = in_.leaves();
    if (&out != &old) out = old;
    out.u = u;
    growth = false;
    for (int i = 0; i < nl; ++i) {
      if (!(w_[i] > 0)) continue;
      const bool changed = trial_[i].q != old.leaf[i].q;
      if (changed) {
        growth = true;
        out.leaf[i] = trial_[i];
        out.stiffness[i] = global(i, trial_[i].C);
      }
    }
  }

  Instance in_;
  std::array<damage::Material, 2> mat_;
  SolverOptions opt_;
  std::array<bool, 2> iso_{};
  std::vector<double> w_;
  std::vector<bool> active_;
  std::vector<double> c1_;
  std::vector<Mat63> N_;
  std::vector<std::vector<int>> anc_;
  std::vector<std::vector<double>> coef_;
  std::vector<int> order_;
  double Cref_ = 1;

  std::vector<Eigen::Matrix3d> Dg_;
  std::vector<std::vector<Eigen::Matrix3d>> Up_, Lo_, Zup_;
  std::vector<Rhs> rhs_;
  std::vector<Mat63> H_;
  std::vector<Vec6> Ssig_;
  std::vector<Mat6> ST_;
  std::vector<Vec6> off_;
  std::vector<Vec6> eps_, sig_;
  std::vector<damage::State> trial_;
  std::vector<Mat6> Ttrial_;
};

}  // namespace smc::dmn
