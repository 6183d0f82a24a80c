#include <smc/dmn_solver.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace smc;
using namespace smc::dmn;

namespace {

struct Net {
  Instance in;
  NonlinearNetwork nn;
  Net(int depth, unsigned seed, double f = 0.26, double a = 0.62)
      : in(instantiate(Params::random(depth, seed), f, a)),
        nn(in, damage::matrix_material(), damage::bundle_material()) {}
};

double hill_mandel_gap(const NonlinearNetwork& nn, const Vec6& macro_strain, const Vec6& macro_stress) {
  double micro = 0;
  for (int i = 0; i < nn.instance().leaves(); ++i)
    micro += nn.normalized_weight(i) * nn.leaf_stress(i).dot(nn.leaf_strain(i));
  return std::abs(micro - macro_stress.dot(macro_strain)) / std::abs(macro_stress.dot(macro_strain));
}

}  // namespace

TEST(NetworkSolver, ElasticStepMatchesLinearNetwork) {
  Net t(4, 3);
  const Mat6 C = forward(t.in, damage::matrix_material().C0, damage::bundle_material().C0);
  Vec6 e;
  e << 2e-4, -1e-4, 5e-5, 3e-5, -4e-5, 1e-4;
  NetworkState s0 = t.nn.fresh(), s1;
  const StepResult r = t.nn.strain_step(e, s0, s1);
  EXPECT_FALSE(r.damage_growth);
  EXPECT_LT((r.stress - C * e).norm(), 1e-9 * (C * e).norm());
  EXPECT_LT((r.tangent - C).norm(), 1e-9 * C.norm());
}

TEST(NetworkSolver, ZeroStrainZeroStress) {
  Net t(3, 8);
  NetworkState s0 = t.nn.fresh(), s1;
  const StepResult r = t.nn.strain_step(Vec6::Zero(), s0, s1);
  EXPECT_EQ(r.stress.norm(), 0.0);
}

TEST(NetworkSolver, HillMandelOverNonlinearPath) {
  Net t(4, 11);
  NetworkState s = t.nn.fresh();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Vec6 dir;
  for (int k = 0; k < 6; ++k) dir[k] = nd(rng);
  dir[0] = 4;
  dir.normalize();
  bool grew = false;
  for (int k = 1; k <= 50; ++k) {
    const Vec6 e = (0.03 * k / 50) * dir;
    NetworkState next;
    const StepResult r = t.nn.strain_step(e, s, next);
    grew |= r.damage_growth;
    EXPECT_LT(hill_mandel_gap(t.nn, e, r.stress), 1e-8) << "step " << k;
    s = next;
  }
  EXPECT_TRUE(grew);
}

TEST(NetworkSolver, ConsistentTangentMatchesDifferences) {
  Net t(3, 21);
  NetworkState s = t.nn.fresh(), tmp;
  Vec6 e = Vec6::Zero();
  e[0] = 0.012;
  e[1] = 0.003;
  t.nn.strain_step(0.5 * e, s, tmp);
  s = tmp;
  const StepResult r = t.nn.strain_step(e, s, tmp);
  ASSERT_TRUE(r.damage_growth);
  const double h = 1e-7;
  Mat6 fd;
  for (int k = 0; k < 6; ++k) {
    Vec6 ep = e, em = e;
    ep[k] += h;
    em[k] -= h;
    NetworkState a, b;
    fd.col(k) = (t.nn.strain_step(ep, s, a).stress - t.nn.strain_step(em, s, b).stress) / (2 * h);
  }
  EXPECT_LT((fd - r.tangent).norm(), 1e-4 * fd.norm());
}

TEST(NetworkSolver, MixedControlUniaxialStress) {
  Net t(4, 5);
  const Mat6 G = mandel_rotation(Rotation::about_z(0.6));
  NetworkState s = t.nn.fresh();
  Vec6 guess = Vec6::Zero();
  for (int k = 1; k <= 20; ++k) {
    Control c = Control::uniaxial(0.001 * k, guess, G);
    NetworkState next;
    const StepResult r = t.nn.solve(c, s, next);
    for (int j = 1; j < 6; ++j) EXPECT_LE(std::abs(r.stress[j]), 1e-6 * std::abs(r.stress[0]));
    EXPECT_GT(r.stress[0], 0.0);
    EXPECT_DOUBLE_EQ(c.strain[0], 0.001 * k);
    guess = c.strain;
    s = next;
  }
  // Lateral contraction.
  EXPECT_LT(guess[1], 0.0);
}

TEST(NetworkSolver, PhaseAverage) {
  Params p = Params::random(1, 2);
  p.v = {1.0, 1.0};
  const Instance in = instantiate(p, 0.25, 0.6);
  NonlinearNetwork nn(in, damage::matrix_material(), damage::bundle_material());
  NetworkState s = nn.fresh();
  s.leaf[0].q[0] = 0.02;
  s.leaf[1].q[1] = 0.05;
  EXPECT_DOUBLE_EQ(nn.phase_average(s, 0, 0), 0.02);
  EXPECT_DOUBLE_EQ(nn.phase_average(s, 1, 1), 0.05);

  // Two matrix leaves with weights 1:3.
  Params d = Params::random(2, 2);
  d.v = {1.0, 0.0, 3.0, 0.0};
  const Instance in2 = instantiate(d, 0.25, 0.6);
  NonlinearNetwork nn2(in2, damage::matrix_material(), damage::bundle_material());
  NetworkState s2 = nn2.fresh();
  s2.leaf[2].q[0] = 0.04;
  EXPECT_NEAR(nn2.phase_average(s2, 0, 0), 0.03, 1e-15);
  EXPECT_THROW(nn2.phase_average(s2, 1, 0), std::domain_error);
}

TEST(NetworkSolver, ConcentrationReproducesLeafStrains) {
  Net t(4, 6);
  NetworkState s0 = t.nn.fresh(), s1;
  Vec6 e;
  e << 1e-4, 2e-5, -3e-5, 1e-5, 0, 4e-5;
  t.nn.strain_step(e, s0, s1);
  const auto A = t.nn.concentration(s0);
  for (int i = 0; i < t.in.leaves(); ++i) {
    if (!(t.nn.normalized_weight(i) > 0)) continue;
    EXPECT_LT((A[i] * e - t.nn.leaf_strain(i)).norm(), 1e-9 * e.norm());
  }
}
