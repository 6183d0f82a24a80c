// Molding stand-ins: the paste viscosity and wall friction laws as plain
// functions, and an affine plug-flow map that turns a stack into a plate.
#pragma once

#include <smc/microstructure.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace smc::molding {

struct ViscosityParams {
  double D1_Pa_s = 72e3;
  double alpha1 = 7.94;
  double alpha2_C = 105.96;
  double T_star_C = 40.73;
  double n = 0.385;
  double gamma_dot0_per_s = 0.1;
};

// Cross-WLF type law, Pa s.
inline double viscosity(double T_C, double gamma_dot, const ViscosityParams& p = {}) {
  if (gamma_dot < 0) throw std::invalid_argument("viscosity: negative shear rate");
  if (T_C <= p.T_star_C - p.alpha2_C) throw std::domain_error("viscosity: temperature at or below the singular point");
  const double dT = T_C - p.T_star_C;
  const double eta0 = p.D1_Pa_s * std::exp(-p.alpha1 * dT / (p.alpha2_C + dT));
  return eta0 / (1 + std::pow(gamma_dot / p.gamma_dot0_per_s, 1 - p.n));
}

struct FrictionParams {
  double lambda_N_s_per_m3 = 3.0e6;
  double k = 0.6;
  double v0_mm_per_s = 1.0;
};

// Wall shear traction in Pa for a slip velocity given in mm/s.
inline Vec2 friction_traction(const Vec2& v_mm_s, const FrictionParams& p = {}) {
  const double s = v_mm_s.norm();
  if (s == 0) return Vec2::Zero();
  return -p.lambda_N_s_per_m3 * std::pow(s / p.v0_mm_per_s, p.k - 1) * (v_mm_s * 1e-3);
}

struct PlugFlowParams {
  double h0_mm = 12, h_mm = 3;
  double beta = 0.5;  // share of the in-plane stretch taken by x
  micro::Box plate;   // kept region after molding
};

struct PlugFlowResult {
  std::vector<micro::Bundle> bundles;
  double volume_before_clip = 0;
  int dropped = 0;  // bundles entirely outside the plate
};

inline Vec3 plug_flow_scales(const PlugFlowParams& p) {
  const double r = p.h0_mm / p.h_mm;
  return Vec3(std::pow(r, p.beta), std::pow(r, 1 - p.beta), 1 / r);
}

// Affine isochoric map about the in-plane origin and z = 0. Bundle areas are
// rescaled so each bundle keeps its volume; pieces outside the plate are cut.
inline PlugFlowResult plug_flow_transform(const std::vector<micro::Bundle>& in, const micro::Box& stack,
                                          const PlugFlowParams& p) {
  if (!(p.h0_mm > p.h_mm && p.h_mm > 0)) throw std::invalid_argument("plug_flow_transform: need h0 > h > 0");
  if (!(p.beta >= 0 && p.beta <= 1)) throw std::invalid_argument("plug_flow_transform: beta outside [0,1]");
  const Vec3 s = plug_flow_scales(p);
  const micro::Box out{stack.lo.cwiseProduct(s), stack.hi.cwiseProduct(s)};
  for (int k = 0; k < 2; ++k)
    if (p.plate.lo[k] < out.lo[k] - 1e-9 || p.plate.hi[k] > out.hi[k] + 1e-9)
      throw std::domain_error("plug_flow_transform: molded footprint does not cover the plate");
  PlugFlowResult r;
  r.bundles.reserve(in.size());
  for (const auto& b : in) {
    for (const auto& x : b.nodes)
      if (!stack.contains(x)) throw std::invalid_argument("plug_flow_transform: node outside the stack");
    micro::Bundle m;
    m.nodes.reserve(b.nodes.size());
    for (const auto& x : b.nodes) m.nodes.push_back(x.cwiseProduct(s));
    const double l0 = b.length(), l1 = m.length();
    m.area = b.area * l0 / l1;
    r.volume_before_clip += m.area * l1;
    // Straight bundles meet the convex plate in one interval.
    const Vec3 a = m.nodes.front(), d = m.nodes.back() - a;
    auto [t0, t1] = micro::clip_line(p.plate, a, d);
    t0 = std::max(t0, 0.0);
    t1 = std::min(t1, 1.0);
    if (!(t1 - t0 > 1e-12)) {
      ++r.dropped;
      continue;
    }
    if (t0 > 0 || t1 < 1) {
      micro::Bundle c;
      c.area = m.area;
      c.nodes.push_back(a + t0 * d);
      for (std::size_t k = 1; k + 1 < m.nodes.size(); ++k) {
        const double t = (m.nodes[k] - a).dot(d) / d.squaredNorm();
        if (t > t0 + 1e-12 && t < t1 - 1e-12) c.nodes.push_back(m.nodes[k]);
      }
      c.nodes.push_back(a + t1 * d);
      m = std::move(c);
    }
    r.bundles.push_back(std::move(m));
  }
  return r;
}

}  // namespace smc::molding
