// Straight-bundle stacks, length-weighted orientation statistics and per-cell
// fields on a regular grid.
#pragma once

#include <smc/tensor.hpp>

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smc::micro {

struct StackConfig {
  double f0 = 0.26;
  double a0 = 0.5;
  double length_mm = 270, width_mm = 270, height_mm = 12;
  double bundle_length_mm = 25;
  double segment_length_mm = 2.5;
  double bundle_area_mm2 = 0.03;
  std::uint64_t seed = 1;
  double packing_cap = 0.6;

  double volume() const { return length_mm * width_mm * height_mm; }

  void validate() const {
    if (!(length_mm > 0 && width_mm > 0 && height_mm > 0 && bundle_length_mm > 0 && segment_length_mm > 0 &&
          bundle_area_mm2 > 0))
      throw std::invalid_argument("StackConfig: dimensions must be positive");
    const double r = bundle_length_mm / segment_length_mm;
    if (std::abs(r - std::round(r)) > 1e-9) throw std::invalid_argument("StackConfig: segment length must divide bundle length");
    if (!(f0 > 0 && f0 < 1)) throw std::invalid_argument("StackConfig: f0 outside (0,1)");
    if (!(a0 >= 0.5 && a0 <= 1)) throw std::invalid_argument("StackConfig: a0 outside [0.5,1]");
  }

  // Cross-section area that yields roughly `count` full-length bundles.
  double area_for_bundle_count(int count) const { return f0 * volume() / (count * bundle_length_mm); }
};

class PackingError : public std::runtime_error {
 public:
  PackingError(const std::string& what, double achieved) : std::runtime_error(what), achieved_f(achieved) {}
  double achieved_f;
};

struct Bundle {
  std::vector<Vec3> nodes;
  double area = 0;

  double length() const {
    double s = 0;
    for (std::size_t k = 1; k < nodes.size(); ++k) s += (nodes[k] - nodes[k - 1]).norm();
    return s;
  }
  double volume() const { return area * length(); }
};

struct Box {
  Vec3 lo, hi;
  bool contains(const Vec3& p, double tol = 1e-9) const {
    return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
  }
};

// Parameter range [t0, t1] of p + t d inside the box (t0 > t1 if it misses).
inline std::pair<double, double> clip_line(const Box& b, const Vec3& p, const Vec3& d) {
  double t0 = -INFINITY, t1 = INFINITY;
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0) {
      if (p[k] < b.lo[k] || p[k] > b.hi[k]) return {1, 0};
      continue;
    }
    double a = (b.lo[k] - p[k]) / d[k], c = (b.hi[k] - p[k]) / d[k];
    if (a > c) std::swap(a, c);
    t0 = std::max(t0, a);
    t1 = std::min(t1, c);
  }
  return {t0, t1};
}

struct Stack {
  StackConfig config;
  Box box;
  std::vector<Bundle> bundles;
  int clipped = 0;  // bundles shorter than nominal
  double fiber_volume = 0;

  double clipped_fraction() const { return bundles.empty() ? 0.0 : double(clipped) / bundles.size(); }
  double volume_fraction() const { return fiber_volume / config.volume(); }
};

inline Box stack_box(const StackConfig& c) {
  return {Vec3(-c.length_mm / 2, -c.width_mm / 2, 0), Vec3(c.length_mm / 2, c.width_mm / 2, c.height_mm)};
}

// Primer direction uniform on the sphere, mapped through the nominal planar
// orientation tensor and normalized.
inline Vec3 bundle_direction(std::mt19937_64& rng, double a0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double c = 2 * u(rng) - 1, phi = 2 * kPi * u(rng);
    const double s = std::sqrt(std::max(0.0, 1 - c * c));
    const Vec3 d(a0 * s * std::cos(phi), (1 - a0) * s * std::sin(phi), 0.0);
    const double n = d.norm();
    if (n > 1e-12) return d / n;
  }
}

// Bundles are placed with their first node uniform in the box and cut exactly
// at the box walls; nodes sit at multiples of the segment length.
inline Stack generate_stack(const StackConfig& c) {
  c.validate();
  if (c.f0 > c.packing_cap) {
    std::ostringstream os;
    os << "generate_stack: f0 = " << c.f0 << " exceeds packing cap " << c.packing_cap;
    throw PackingError(os.str(), 0.0);
  }
  Stack s{c, stack_box(c), {}, 0, 0.0};
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double target = c.f0 * c.volume();
  const double quantum = c.bundle_area_mm2 * c.bundle_length_mm;
  s.bundles.reserve(std::size_t(target / quantum * 1.2) + 1);
  while (target - s.fiber_volume > 0.5 * quantum) {
    const Vec3 p(s.box.lo[0] + u(rng) * c.length_mm, s.box.lo[1] + u(rng) * c.width_mm,
                 s.box.lo[2] + u(rng) * c.height_mm);
    const Vec3 d = bundle_direction(rng, c.a0);
    const double t_exit = clip_line(s.box, p, d).second;
    const double len = std::min(c.bundle_length_mm, t_exit);
    if (!(len > 1e-9)) continue;
    Bundle b;
    b.area = c.bundle_area_mm2;
    b.nodes.push_back(p);
    for (double t = c.segment_length_mm; t < len - 1e-9; t += c.segment_length_mm) b.nodes.push_back(p + t * d);
    b.nodes.push_back(p + len * d);
    if (len < c.bundle_length_mm - 1e-9) ++s.clipped;
    s.fiber_volume += b.area * len;
    s.bundles.push_back(std::move(b));
  }
  return s;
}

// Length-weighted second moment of segment directions.
inline Mat3 orientation_moment(const std::vector<Bundle>& bundles, double* total_length = nullptr) {
  Mat3 A = Mat3::Zero();
  double L = 0;
  for (const auto& b : bundles)
    for (std::size_t k = 1; k < b.nodes.size(); ++k) {
      const Vec3 d = b.nodes[k] - b.nodes[k - 1];
      const double l = d.norm();
      if (l == 0) continue;
      A += d * d.transpose() / l;
      L += l;
    }
  if (total_length) *total_length = L;
  return A;
}

inline OrientationTensor2 orientation_tensor(const std::vector<Bundle>& bundles) {
  double L = 0;
  const Mat3 A = orientation_moment(bundles, &L);
  if (!(L > 0)) throw std::invalid_argument("orientation_tensor: no bundle length");
  return OrientationTensor2(A / L);
}

// ---------------------------------------------------------------- fields

struct GridSpec {
  Vec3 origin = Vec3::Zero();
  double edge_mm = 3;
  int nx = 1, ny = 1, nz = 1;

  int count() const { return nx * ny * nz; }
  double cell_volume() const { return edge_mm * edge_mm * edge_mm; }
  Box box() const { return {origin, origin + edge_mm * Vec3(nx, ny, nz)}; }
  int index(int i, int j, int k) const { return (k * ny + j) * nx + i; }

  // Grid of whole cells centered on (0, 0) in-plane, from z = 0.
  static GridSpec centered(double size_x_mm, double size_y_mm, double height_mm, double edge = 3) {
    GridSpec g;
    g.edge_mm = edge;
    g.nx = int(std::floor(size_x_mm / edge + 1e-9));
    g.ny = int(std::floor(size_y_mm / edge + 1e-9));
    g.nz = std::max(1, int(std::floor(height_mm / edge + 1e-9)));
    g.origin = Vec3(-0.5 * g.nx * edge, -0.5 * g.ny * edge, 0.0);
    return g;
  }
};

struct Cell {
  double f = 0;        // bundle volume fraction
  double a = 0.5;      // larger in-plane eigenvalue of the normalized planar tensor
  double theta = 0;    // angle of its eigenvector, (-pi/2, pi/2]
  double azz = 0;      // out-of-plane component of the orientation tensor
  double length = 0;   // in-cell bundle length (mm)
  bool empty() const { return length == 0; }
};

struct FieldGrid {
  GridSpec spec;
  std::vector<Cell> cells;
  int empty_cells = 0;

  const Cell& at(int i, int j, int k = 0) const { return cells[spec.index(i, j, k)]; }
  Cell& at(int i, int j, int k = 0) { return cells[spec.index(i, j, k)]; }
};

// Planar reduction (a, theta) of a symmetric orientation moment.
inline std::pair<double, double> planar_orientation(const Mat3& A) {
  const double xx = A(0, 0), yy = A(1, 1), xy = A(0, 1);
  const double tr = xx + yy;
  if (!(tr > 0)) return {0.5, 0.0};
  const double half = 0.5 * (xx - yy), r = std::hypot(half, xy);
  double theta = 0.5 * std::atan2(2 * xy, xx - yy);
  if (theta <= -kPi / 2) theta += kPi;
  return {(0.5 * tr + r) / tr, theta};
}

class GridCoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Segments are split exactly at cell faces. With clip = false any length
// outside the grid is an error.
inline FieldGrid evaluate_cell_fields(const std::vector<Bundle>& bundles, const GridSpec& g, bool clip = false) {
  FieldGrid out{g, std::vector<Cell>(g.count()), 0};
  std::vector<Mat3> mom(g.count(), Mat3::Zero());
  std::vector<double> vol(g.count(), 0.0);
  const Box box = g.box();
  std::vector<double> ts;
  for (const auto& b : bundles)
    for (std::size_t s = 1; s < b.nodes.size(); ++s) {
      const Vec3 p = b.nodes[s - 1], d = b.nodes[s] - p;
      const double l = d.norm();
      if (l == 0) continue;
      auto [t0, t1] = clip_line(box, p, d);
      t0 = std::max(t0, 0.0);
      t1 = std::min(t1, 1.0);
      if (!clip && (t0 > 1e-12 || t1 < 1 - 1e-12))
        throw GridCoverageError("evaluate_cell_fields: bundle segment leaves the grid");
      if (!(t1 > t0)) continue;
      ts.assign({t0, t1});
      for (int k = 0; k < 3; ++k) {
        if (d[k] == 0) continue;
        const double c0 = (p[k] + t0 * d[k] - g.origin[k]) / g.edge_mm;
        const double c1 = (p[k] + t1 * d[k] - g.origin[k]) / g.edge_mm;
        for (int m = int(std::ceil(std::min(c0, c1))); m <= int(std::floor(std::max(c0, c1))); ++m) {
          const double t = (g.origin[k] + m * g.edge_mm - p[k]) / d[k];
          if (t > t0 && t < t1) ts.push_back(t);
        }
      }
      std::sort(ts.begin(), ts.end());
      const Mat3 dd = d * d.transpose() / (l * l);
      for (std::size_t q = 1; q < ts.size(); ++q) {
        const double piece = (ts[q] - ts[q - 1]) * l;
        if (piece <= 0) continue;
        const Vec3 mid = p + 0.5 * (ts[q] + ts[q - 1]) * d;
        int ijk[3];
        for (int k = 0; k < 3; ++k) {
          const int n = k == 0 ? g.nx : k == 1 ? g.ny : g.nz;
          ijk[k] = std::clamp(int(std::floor((mid[k] - g.origin[k]) / g.edge_mm)), 0, n - 1);
        }
        const int c = g.index(ijk[0], ijk[1], ijk[2]);
        out.cells[c].length += piece;
        mom[c] += piece * dd;
        vol[c] += b.area * piece;
      }
    }
  for (int c = 0; c < g.count(); ++c) {
    Cell& cell = out.cells[c];
    cell.f = vol[c] / g.cell_volume();
    if (cell.empty()) {
      ++out.empty_cells;
      continue;
    }
    const Mat3 A = mom[c] / cell.length;
    std::tie(cell.a, cell.theta) = planar_orientation(A);
    cell.azz = A(2, 2);
  }
  return out;
}

// Standard deviation of subset means over square in-plane subsets.
struct ScatterPoint {
  double edge_mm = 0, L_mm = 0, sigma_f = 0, sigma_a = 0;
  int subsets = 0;
};

inline std::vector<ScatterPoint> subset_scatter(const FieldGrid& fg, const std::vector<double>& edges_mm) {
  const GridSpec& g = fg.spec;
  std::vector<ScatterPoint> out;
  for (double e : edges_mm) {
    const double r = e / g.edge_mm;
    const int n = int(std::lround(r));
    if (n < 1 || std::abs(r - n) > 1e-9) throw std::invalid_argument("subset_scatter: edge not a multiple of the cell edge");
    if (n > g.nx || n > g.ny) throw std::invalid_argument("subset_scatter: subset larger than plate");
    std::vector<double> fs, as;
    for (int J = 0; J + n <= g.ny; J += n)
      for (int I = 0; I + n <= g.nx; I += n) {
        double sf = 0, sa = 0;
        int na = 0;
        for (int k = 0; k < g.nz; ++k)
          for (int j = J; j < J + n; ++j)
            for (int i = I; i < I + n; ++i) {
              const Cell& c = fg.at(i, j, k);
              sf += c.f;
              if (!c.empty()) sa += c.a, ++na;
            }
        fs.push_back(sf / (n * n * g.nz));
        if (na > 0) as.push_back(sa / na);
      }
    auto pstd = [](const std::vector<double>& v) {
      if (v.empty()) return 0.0;
      double m = 0, q = 0;
      for (double x : v) m += x;
      m /= v.size();
      for (double x : v) q += (x - m) * (x - m);
      return std::sqrt(q / v.size());
    };
    ScatterPoint sp;
    sp.edge_mm = e;
    sp.L_mm = std::cbrt(e * e * g.edge_mm * g.nz);
    sp.sigma_f = pstd(fs);
    sp.sigma_a = pstd(as);
    sp.subsets = int(fs.size());
    out.push_back(sp);
  }
  return out;
}

// ---------------------------------------------------------------- files

inline void write_bundles(std::ostream& os, const std::vector<Bundle>& bs) {
  os.precision(17);
  os << "bundles " << bs.size() << "\n";
  for (std::size_t i = 0; i < bs.size(); ++i) {
    os << i << ' ' << bs[i].nodes.size() << ' ' << bs[i].area;
    for (const auto& p : bs[i].nodes) os << ' ' << p[0] << ' ' << p[1] << ' ' << p[2];
    os << '\n';
  }
}

inline std::vector<Bundle> read_bundles(std::istream& is) {
  std::string tag;
  std::size_t n = 0;
  if (!(is >> tag >> n) || tag != "bundles") throw std::runtime_error("read_bundles: bad header");
  std::vector<Bundle> bs(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t id = 0, m = 0;
    if (!(is >> id >> m >> bs[i].area) || id != i || m < 2) throw std::runtime_error("read_bundles: bad record");
    bs[i].nodes.resize(m);
    for (auto& p : bs[i].nodes)
      if (!(is >> p[0] >> p[1] >> p[2])) throw std::runtime_error("read_bundles: truncated record");
  }
  return bs;
}

inline void write_fields(std::ostream& os, const FieldGrid& fg) {
  const GridSpec& g = fg.spec;
  os.precision(17);
  os << "fields origin " << g.origin[0] << ' ' << g.origin[1] << ' ' << g.origin[2] << " edge_mm " << g.edge_mm
     << " counts " << g.nx << ' ' << g.ny << ' ' << g.nz << "\n";
  os << "# i j k f a theta_rad azz length_mm\n";
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const Cell& c = fg.at(i, j, k);
        os << i << ' ' << j << ' ' << k << ' ' << c.f << ' ' << c.a << ' ' << c.theta << ' ' << c.azz << ' '
           << c.length << '\n';
      }
}

inline FieldGrid read_fields(std::istream& is) {
  FieldGrid fg;
  GridSpec& g = fg.spec;
  std::string t1, t2, t3, t4;
  if (!(is >> t1 >> t2 >> g.origin[0] >> g.origin[1] >> g.origin[2] >> t3 >> g.edge_mm >> t4 >> g.nx >> g.ny >> g.nz) ||
      t1 != "fields" || t2 != "origin" || t3 != "edge_mm" || t4 != "counts")
    throw std::runtime_error("read_fields: bad header");
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  fg.cells.resize(g.count());
  for (int n = 0; n < g.count(); ++n) {
    int i, j, k;
    Cell c;
    if (!(is >> i >> j >> k >> c.f >> c.a >> c.theta >> c.azz >> c.length)) throw std::runtime_error("read_fields: truncated");
    if (i < 0 || i >= g.nx || j < 0 || j >= g.ny || k < 0 || k >= g.nz) throw std::runtime_error("read_fields: index out of range");
    fg.at(i, j, k) = c;
    if (c.empty()) ++fg.empty_cells;
  }
  return fg;
}

}  // namespace smc::micro
