// Virtual tensile specimens cut from plate fields. The structural model is a
// chain of 3 mm cross-sections in series (equal force); cells inside a section
// share the axial strain and are laterally free. Each cell is a network
// material point.
#pragma once

#include <smc/dmn.hpp>
#include <smc/dmn_solver.hpp>
#include <smc/microstructure.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace smc::specimen {

using dmn::Control;
using dmn::NetworkState;
using dmn::NonlinearNetwork;
using dmn::Params;
using dmn::SolverOptions;
using dmn::StepResult;

enum class Shape { R1, R2, B1, B2 };

inline const char* label(Shape s) {
  switch (s) {
    case Shape::R1: return "R1";
    case Shape::R2: return "R2";
    case Shape::B1: return "B1";
    case Shape::B2: return "B2";
  }
  return "?";
}

inline Shape shape_from_label(const std::string& s) {
  if (s == "R1") return Shape::R1;
  if (s == "R2") return Shape::R2;
  if (s == "B1") return Shape::B1;
  if (s == "B2") return Shape::B2;
  throw std::invalid_argument("unknown specimen shape '" + s + "'");
}

// Cells across the width for each of the sections along the free length.
struct Geometry {
  double cell_mm = 3;
  std::vector<int> width_cells;
  int narrow_cells = 0;
  double gauge_length_mm = 70;

  int sections() const { return int(width_cells.size()); }
  double free_length_mm() const { return cell_mm * sections(); }
};

// Free length 90 mm; dog-bones keep two wider sections at each end.
inline Geometry geometry(Shape s) {
  Geometry g;
  const int n = 30;
  const int narrow = (s == Shape::R1 || s == Shape::B1) ? 5 : 10;
  const int shoulder = s == Shape::B1 ? 8 : s == Shape::B2 ? 13 : narrow;
  g.narrow_cells = narrow;
  g.width_cells.assign(n, narrow);
  for (int k : {0, 1, n - 2, n - 1}) g.width_cells[k] = shoulder;
  return g;
}

struct CellState {
  double f = 0, a = 0, theta = 0;  // theta in the specimen frame
};

struct Placement {
  double cx_mm = 0, cy_mm = 0;
  int quarter_turns = 0;  // loading axis at quarter_turns * 90 deg in the plate
};

struct Model {
  Shape shape = Shape::R1;
  Geometry geom;
  std::vector<std::vector<CellState>> sections;
  std::vector<bool> gauge;  // per section
  int empty_cells = 0, clamped_f = 0, clamped_a = 0;
  double mean_f = 0, mean_a = 0;  // volume-weighted over all cells before clamping
  double narrow_area_mm2() const { return geom.narrow_cells * geom.cell_mm * geom.cell_mm; }
};

struct Domain {
  double f_min = 0.15, f_max = 0.35, a_min = 0.5, a_max = 0.8;
};

inline double wrap_half_turn(double t) {
  while (t <= -kPi / 2) t += kPi;
  while (t > kPi / 2) t -= kPi;
  return t;
}

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The center is snapped so that every sampling point is a plate cell center.
inline Model extract_specimen(const micro::FieldGrid& plate, Shape shape, const Placement& pl, const Domain& dom = {}) {
  const micro::GridSpec& g = plate.spec;
  Model m;
  m.shape = shape;
  m.geom = geometry(shape);
  if (std::abs(m.geom.cell_mm - g.edge_mm) > 1e-12) throw std::invalid_argument("extract_specimen: cell size mismatch");
  const int k = ((pl.quarter_turns % 4) + 4) % 4;
  const Vec2 ax = k == 0 ? Vec2(1, 0) : k == 1 ? Vec2(0, 1) : k == 2 ? Vec2(-1, 0) : Vec2(0, -1);
  const Vec2 perp(-ax[1], ax[0]);
  const int ns = m.geom.sections();
  int wmax = 0;
  for (int w : m.geom.width_cells) wmax = std::max(wmax, w);
  // Sampling offsets along/across are (i - (n-1)/2) * edge; snap the center so
  // those land on cell centers.
  auto snap = [&](double c, double o, int n) {
    const double shift = 0.5 * (n - 1) * g.edge_mm;
    const double t = (c - shift - o) / g.edge_mm - 0.5;
    return o + (std::round(t) + 0.5) * g.edge_mm + shift;
  };
  const int nx_dir = (k % 2 == 0) ? ns : wmax, ny_dir = (k % 2 == 0) ? wmax : ns;
  const double cx = snap(pl.cx_mm, g.origin[0], nx_dir), cy = snap(pl.cy_mm, g.origin[1], ny_dir);
  const double dth = k * kPi / 2;
  double sf = 0, sa = 0;
  int cnt = 0;
  m.sections.resize(ns);
  m.gauge.resize(ns);
  for (int s = 0; s < ns; ++s) {
    const double u = (s - 0.5 * (ns - 1)) * g.edge_mm;
    m.gauge[s] = std::abs(u) <= 0.5 * m.geom.gauge_length_mm + 1e-9;
    const int w = m.geom.width_cells[s];
    // Odd and even widths need different parity; shift narrow rows within the
    // wide envelope so all sampling points stay on cell centers.
    const double base = 0.5 * ((wmax - w) % 2);
    for (int c = 0; c < w; ++c) {
      const double v = (c - 0.5 * (w - 1) + base) * g.edge_mm;
      const Vec2 p = Vec2(cx, cy) + u * ax + v * perp;
      const int i = int(std::floor((p[0] - g.origin[0]) / g.edge_mm));
      const int j = int(std::floor((p[1] - g.origin[1]) / g.edge_mm));
      if (i < 0 || j < 0 || i >= g.nx || j >= g.ny) throw PlacementError("extract_specimen: outline exceeds the plate");
      for (int z = 0; z < g.nz; ++z) {
        const micro::Cell& cell = plate.at(i, j, z);
        CellState st;
        if (cell.empty()) {
          ++m.empty_cells;
          st.f = dom.f_min;
          st.a = 0.5;
          st.theta = 0;
        } else {
          st.f = cell.f;
          st.a = cell.a;
          st.theta = wrap_half_turn(cell.theta - dth);
        }
        sf += cell.f;
        sa += cell.empty() ? 0.5 : cell.a;
        ++cnt;
        if (st.f < dom.f_min || st.f > dom.f_max) ++m.clamped_f;
        if (st.a < dom.a_min || st.a > dom.a_max) ++m.clamped_a;
        st.f = std::clamp(st.f, dom.f_min, dom.f_max);
        st.a = std::clamp(st.a, dom.a_min, dom.a_max);
        m.sections[s].push_back(st);
      }
    }
  }
  m.mean_f = sf / cnt;
  m.mean_a = sa / cnt;
  return m;
}

// ---------------------------------------------------------------- loading

struct Options {
  double elongation_mm = 3;
  int steps = 60;
  int max_halvings = 3;
  double failure_threshold = 0.013;  // phase mean of matrix damage
  double force_tol_rel = 1e-8;
  int max_iterations = 30;
  SolverOptions solver;
};

struct Result {
  std::vector<double> strain, stress;  // gauge strain, force / narrow area (MPa)
  bool failed = false;
  int failure_section = -1, failure_cell = -1;
  double max_force_deviation = 0;  // over recorded steps, relative
  double max_work_gap = 0;         // |external - internal| / external per step
  int halvings = 0;
};

class LoadingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One cell as a material point under axial strain with the other stress
// components free. Stays on a linear branch until the first leaf could
// activate.
class CellPoint {
 public:
  CellPoint(const Params& p, const CellState& c, const damage::Material& m1, const damage::Material& m2,
            const SolverOptions& opt)
      : net_(dmn::instantiate(p, c.f, c.a), m1, m2, opt),
        G_(mandel_rotation(Rotation::about_z(c.theta))),
        state_(net_.fresh()) {
    const Mat6 Cd = dmn::forward(net_.instance(), m1.C0, m2.C0);
    const Mat6 S = (G_ * Cd * G_.transpose()).inverse();
    E_ = 1 / S(0, 0);
    dir_ = S.col(0) / S(0, 0);  // control-frame strain per unit axial strain
    guess_ = dir_;
    // First activation along the elastic uniaxial path.
    const Vec6 ed = G_.transpose() * dir_;
    const auto A = net_.concentration(state_);
    onset_ = INFINITY;
    const auto& in = net_.instance();
    for (int i = 0; i < in.leaves(); ++i) {
      if (!(net_.normalized_weight(i) > 0)) continue;
      const auto& mat = net_.material(i);
      const int ph = dmn::is_bundle_leaf(i) ? 1 : 0;
      Vec6 el = A[i] * ed;
      if (!net_.phase_isotropic(ph)) el = in.Q[i].transpose() * el;
      const Vec6 sig = mat.C0 * el;
      for (const auto& mech : mat.mechanisms) {
        const double n = (mech.extraction * sig).norm();
        if (n > 0) onset_ = std::min(onset_, mech.sigma0 / n);
      }
    }
  }

  double modulus() const { return E_; }
  double onset() const { return onset_; }
  bool nonlinear() const { return nonlinear_; }

  // Trial response from the committed state.
  std::pair<double, double> trial(double e) {
    trial_linear_ = !nonlinear_ && std::abs(e) < onset_ * (1 - 1e-9);
    if (trial_linear_) return {E_ * e, E_};
    Control c = Control::uniaxial(e, nonlinear_ ? guess_ : Vec6(e * dir_), G_);
    const StepResult r = net_.solve(c, state_, trial_state_);
    trial_guess_ = c.strain;
    const double k = 1 / r.tangent.inverse()(0, 0);
    return {r.stress[0], k};
  }

  void commit() {
    if (trial_linear_) return;
    nonlinear_ = true;
    std::swap(state_, trial_state_);
    guess_ = trial_guess_;
  }

  // Rollback point for step cutting.
  void save() {
    saved_nonlinear_ = nonlinear_;
    if (nonlinear_) saved_state_ = state_, saved_guess_ = guess_;
  }
  void restore() {
    nonlinear_ = saved_nonlinear_;
    if (nonlinear_) state_ = saved_state_, guess_ = saved_guess_;
  }

  double matrix_damage() const { return nonlinear_ ? net_.phase_average(state_, 0, 0) : 0.0; }

 private:
  NonlinearNetwork net_;
  Mat6 G_;
  NetworkState state_, trial_state_, saved_state_;
  double E_ = 0, onset_ = 0;
  Vec6 dir_, guess_, trial_guess_, saved_guess_;
  bool nonlinear_ = false, trial_linear_ = true, saved_nonlinear_ = false;
};

inline Result simulate_tension(const Model& m, const Params& p, const damage::Material& matrix,
                               const damage::Material& bundle, const Options& opt = {}) {
  if (m.sections.empty()) throw std::invalid_argument("simulate_tension: empty model");
  const int ns = int(m.sections.size());
  const double ell = m.geom.cell_mm, Ac = m.geom.cell_mm * m.geom.cell_mm;
  std::vector<std::vector<CellPoint>> cells(ns);
  for (int s = 0; s < ns; ++s) {
    cells[s].reserve(m.sections[s].size());
    for (const auto& c : m.sections[s]) cells[s].emplace_back(p, c, matrix, bundle, opt.solver);
  }
  Result r;
  r.strain.push_back(0);
  r.stress.push_back(0);
  std::vector<double> e(ns, 0.0), F(ns), K(ns);
  double delta = 0, force = 0;
  int ngauge = 0;
  for (bool b : m.gauge) ngauge += b;

  auto eval = [&](const std::vector<double>& es) {
    for (int s = 0; s < ns; ++s) {
      F[s] = K[s] = 0;
      for (auto& c : cells[s]) {
        const auto [sig, k] = c.trial(es[s]);
        F[s] += sig * Ac;
        K[s] += k * Ac;
      }
    }
  };

  // Equal-force solve for a prescribed total elongation; commits on success.
  auto solve_step = [&](double target) {
    std::vector<double> es(ns);
    double sum_flex = 0;
    for (int s = 0; s < ns; ++s) sum_flex += ell / std::max(K[s], 1e-300);
    // Predictor: distribute the increment by the last section flexibilities.
    const double dD = target - delta;
    for (int s = 0; s < ns; ++s) es[s] = e[s] + dD * (1 / K[s]) / sum_flex;
    for (int it = 0;; ++it) {
      eval(es);
      double mean = 0;
      for (double x : F) mean += x / ns;
      double dev = 0;
      for (double x : F) dev = std::max(dev, std::abs(x - mean));
      if (dev <= opt.force_tol_rel * std::abs(mean) || (mean == 0 && dev == 0)) {
        const double dev_rel = mean != 0 ? dev / std::abs(mean) : 0.0;
        // Work check: external increment against the section-wise sum.
        double internal = 0;
        for (int s = 0; s < ns; ++s) internal += 0.5 * (force + F[s]) * (es[s] - e[s]) * ell;
        const double external = 0.5 * (force + mean) * (target - delta);
        if (external != 0) r.max_work_gap = std::max(r.max_work_gap, std::abs(external - internal) / std::abs(external));
        for (auto& row : cells)
          for (auto& c : row) c.commit();
        e = es;
        delta = target;
        force = mean;
        r.max_force_deviation = std::max(r.max_force_deviation, dev_rel);
        return;
      }
      if (it >= opt.max_iterations) throw LoadingError("simulate_tension: section Newton did not converge");
      double a = 0, b = 0, c = 0;
      for (int s = 0; s < ns; ++s) {
        if (!(K[s] > 0)) throw LoadingError("simulate_tension: non-positive section tangent");
        a += ell * es[s];
        b += ell * F[s] / K[s];
        c += ell / K[s];
      }
      const double Fn = (target - a + b) / c;
      for (int s = 0; s < ns; ++s) es[s] += (Fn - F[s]) / K[s];
    }
  };

  eval(e);  // elastic tangents at zero strain
  const double step = opt.elongation_mm / opt.steps;
  for (int n = 1; n <= opt.steps; ++n) {
    // Sub-steps on failure: 1, 2, 4, 8 pieces.
    const double start = delta;
    for (auto& row : cells)
      for (auto& c : row) c.save();
    const auto saved_e = e;
    const double saved_force = force;
    for (int h = 0;; ++h) {
      const int pieces = 1 << h;
      try {
        for (int q = 1; q <= pieces; ++q) solve_step(start + step * q / pieces);
        r.halvings += h;
        break;
      } catch (const std::runtime_error&) {
        if (h == opt.max_halvings) throw;
      }
      for (auto& row : cells)
        for (auto& c : row) c.restore();
      e = saved_e;
      delta = start;
      force = saved_force;
      eval(e);
    }
    double eg = 0;
    for (int s = 0; s < ns; ++s)
      if (m.gauge[s]) eg += e[s] / ngauge;
    r.strain.push_back(eg);
    r.stress.push_back(force / m.narrow_area_mm2());
    for (int s = 0; s < ns && !r.failed; ++s)
      for (std::size_t c = 0; c < cells[s].size(); ++c)
        if (cells[s][c].matrix_damage() > opt.failure_threshold) {
          r.failed = true;
          r.failure_section = s;
          r.failure_cell = int(c);
          break;
        }
    if (r.failed) break;
  }
  return r;
}

// ---------------------------------------------------------------- features

inline constexpr int kFeatureCount = 18;

inline std::array<std::string, kFeatureCount> feature_names() {
  std::array<std::string, kFeatureCount> n{"E_MPa", "strength_MPa", "failure_strain"};
  for (int k = 1; k <= 15; ++k) n[2 + k] = "stress_at_" + std::to_string(k) + "e-3_MPa";
  return n;
}

struct Features {
  std::array<double, kFeatureCount> y{};
  std::array<bool, kFeatureCount> filled{};
};

inline double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
  for (std::size_t k = 1; k < x.size(); ++k)
    if (at <= x[k]) {
      const double t = (at - x[k - 1]) / (x[k] - x[k - 1]);
      return y[k - 1] + t * (y[k] - y[k - 1]);
    }
  throw std::out_of_range("interpolate: beyond the curve");
}

// Modulus from the secant between 0.05% and 0.25%; stresses at 0.1% ... 1.5%.
// The last point of the curve is the failure point (or the end of loading).
inline Features extract_features(const std::vector<double>& strain, const std::vector<double>& stress) {
  if (strain.size() < 2 || strain.size() != stress.size()) throw std::invalid_argument("extract_features: need at least two points");
  const double eu = strain.back();
  if (eu < 5e-4) throw std::domain_error("extract_features: failure before 0.05% strain");
  Features f;
  auto at = [&](double x, int idx) {
    if (x <= eu) return interpolate(strain, stress, x);
    f.filled[idx] = true;
    return stress.back();
  };
  const double s1 = at(5e-4, 0), s2 = at(2.5e-3, 0);
  f.y[0] = (s2 - s1) / 2e-3;
  f.y[1] = stress.back();
  f.y[2] = eu;
  for (int k = 1; k <= 15; ++k) f.y[2 + k] = at(1e-3 * k, 2 + k);
  return f;
}

// ---------------------------------------------------------------- layout

struct PlanEntry {
  Shape shape;
  Placement placement;
  int position = 0;
};

// 16 positions (2 columns x 8 rows, shapes cycling by row) times 4 quarter
// turns; all outlines stay inside the central 250 mm square.
inline std::vector<PlanEntry> cutting_plan() {
  const std::array<Shape, 4> shapes{Shape::R1, Shape::R2, Shape::B1, Shape::B2};
  std::vector<PlanEntry> plan;
  for (int q = 0; q < 4; ++q)
    for (int pos = 0; pos < 16; ++pos) {
      const int col = pos % 2, row = pos / 2;
      const double u = col == 0 ? -60.0 : 60.0, v = -105.0 + 30.0 * row;
      // Rotate the placement with the axis so turned specimens cover the
      // same region.
      const double c = std::cos(q * kPi / 2), s = std::sin(q * kPi / 2);
      PlanEntry e{shapes[row % 4], {std::round(c * u - s * v), std::round(s * u + c * v), q}, pos};
      plan.push_back(e);
    }
  return plan;
}

// Disc samples (25 mm) for fiber-fraction statistics.
inline std::vector<Vec2> tga_positions() {
  std::vector<Vec2> p;
  for (double y : {-80.0, 0.0, 80.0})
    for (double x : {-100.0, -50.0, 0.0, 50.0, 100.0}) p.emplace_back(x, y);
  return p;
}

inline double disc_fraction(const micro::FieldGrid& fg, const Vec2& c, double diameter_mm = 25) {
  const auto& g = fg.spec;
  double s = 0;
  int n = 0;
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const Vec2 x(g.origin[0] + (i + 0.5) * g.edge_mm, g.origin[1] + (j + 0.5) * g.edge_mm);
        if ((x - c).norm() <= 0.5 * diameter_mm) s += fg.at(i, j, k).f, ++n;
      }
  if (n == 0) throw std::invalid_argument("disc_fraction: disc misses the grid");
  return s / n;
}

}  // namespace smc::specimen
