// Stage orchestration for the whole chain: configuration, artifact files with
// provenance lines, and the stages the command-line tool exposes.
#pragma once

#include <smc/dmn_train.hpp>
#include <smc/molding.hpp>
#include <smc/parallel.hpp>
#include <smc/specimen.hpp>
#include <smc/uq.hpp>

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace smc::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StackPreset {
  double f0, a0;
};
inline StackPreset stack_preset(const std::string& label) {
  if (label == "A") return {0.225, 0.5};
  if (label == "B") return {0.26, 0.5};
  if (label == "C") return {0.29, 0.5};
  if (label == "D") return {0.26, 0.6};
  throw ConfigError("unknown stack configuration '" + label + "'");
}

struct RunConfig {
  std::string preset = "desk";
  std::vector<std::string> configurations{"A", "B", "C", "D"};
  int realizations = 2;
  std::uint64_t seed = 1;
  std::int64_t seed_offset = 0;

  // stack and molding
  int bundle_count = 20000;  // 0: keep the nominal bundle area
  double bundle_area_mm2 = 0.03;
  double bundle_length_mm = 25, segment_length_mm = 2.5;
  double stack_size_mm = 270, plate_size_mm = 458, plate_thickness_mm = 3;

  // fields
  double cell_edge_mm = 3, window_mm = 399;

  // network
  int dmn_depth = 6, training_samples = 300;
  std::uint64_t training_seed = 7, init_seed = 3;
  dmn::TrainConfig train;
  double validation_amplitude = 0.04;
  int validation_steps = 10;
  std::vector<double> validation_angles_deg{0, 45, 90};

  // specimens
  int specimens_per_plate = 64;
  specimen::Options loading;

  // uncertainty
  double sigma_cf = 0.014, sigma_ca = 0.05;
  uq::ScalingLaw law;

  double stack_height_mm() const {
    return plate_size_mm * plate_size_mm * plate_thickness_mm / (stack_size_mm * stack_size_mm);
  }
  int plates() const { return int(configurations.size()) * realizations; }

  void validate() const {
    if (configurations.empty()) throw ConfigError("config: no stack configurations");
    for (const auto& c : configurations) stack_preset(c);
    if (realizations < 1 || specimens_per_plate < 1 || specimens_per_plate > 64)
      throw ConfigError("config: realizations >= 1 and 1 <= specimens_per_plate <= 64 required");
    if (bundle_count < 0 || !(bundle_area_mm2 > 0)) throw ConfigError("config: bad bundle settings");
    if (!(plate_size_mm > stack_size_mm && stack_size_mm > 0 && plate_thickness_mm > 0))
      throw ConfigError("config: plate must be larger than the stack");
    if (!(window_mm <= plate_size_mm && window_mm >= 250 + 2 * cell_edge_mm))
      throw ConfigError("config: field window must lie in the plate and cover the 250 mm specimen region");
    // Plug flow stretches x by r^(1-a0) and y by r^a0; the weaker one must
    // still carry the charge past the field window.
    for (const auto& c : configurations) {
      const double a0 = stack_preset(c).a0;
      const double reach = stack_size_mm * std::pow(stack_height_mm() / plate_thickness_mm, std::min(a0, 1 - a0));
      if (reach < window_mm - 1e-9)
        throw ConfigError("config: molded charge of " + c + " reaches " + std::to_string(reach) + " mm, less than the " +
                          std::to_string(window_mm) + " mm field window");
    }
    if (std::abs(cell_edge_mm - 3) > 1e-12) throw ConfigError("config: specimens assume 3 mm cells");
    if (std::abs(plate_thickness_mm - cell_edge_mm) > 1e-12) throw ConfigError("config: plate thickness must equal one cell");
    if (dmn_depth < 1 || dmn_depth > 10 || training_samples < 2) throw ConfigError("config: bad network settings");
    if (validation_angles_deg.empty() || validation_steps < 1 || !(validation_amplitude > 0))
      throw ConfigError("config: bad validation loading");
    if (loading.steps < 1 || !(loading.elongation_mm > 0) || loading.max_halvings < 0 || !(loading.failure_threshold > 0))
      throw ConfigError("config: bad loading settings");
    if (!(law.c_f_per_mm > 0 && law.c_a_per_mm > 0) || sigma_cf < 0 || sigma_ca < 0)
      throw ConfigError("config: bad scaling law");
    try {
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  if (name == "desk") return c;
  if (name == "paper-scale") {
    c.preset = name;
    c.realizations = 4;
    c.bundle_count = 0;
    c.dmn_depth = 8;
    c.training_samples = 1000;
    c.train.max_epochs = 4000;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

inline json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["configurations"] = c.configurations;
  j["realizations"] = c.realizations;
  j["seed"] = c.seed;
  j["seed_offset"] = c.seed_offset;
  j["stack"] = {{"bundle_count", c.bundle_count},
                {"bundle_area_mm2", c.bundle_area_mm2},
                {"bundle_length_mm", c.bundle_length_mm},
                {"segment_length_mm", c.segment_length_mm},
                {"stack_size_mm", c.stack_size_mm},
                {"plate_size_mm", c.plate_size_mm},
                {"plate_thickness_mm", c.plate_thickness_mm}};
  j["fields"] = {{"cell_edge_mm", c.cell_edge_mm}, {"window_mm", c.window_mm}};
  j["dmn"] = {{"depth", c.dmn_depth},
              {"training_samples", c.training_samples},
              {"training_seed", c.training_seed},
              {"init_seed", c.init_seed},
              {"penalty", c.train.penalty},
              {"learning_rate", c.train.learning_rate},
              {"halving_period_epochs", c.train.halving_period},
              {"validation_fraction", c.train.validation_fraction},
              {"check_every_epochs", c.train.check_every},
              {"patience_checks", c.train.patience},
              {"max_epochs", c.train.max_epochs},
              {"optimizer", c.train.optimizer},
              {"split_seed", c.train.seed},
              {"validation_amplitude", c.validation_amplitude},
              {"validation_steps", c.validation_steps},
              {"validation_angles_deg", c.validation_angles_deg}};
  j["specimens"] = {{"per_plate", c.specimens_per_plate},
                    {"steps", c.loading.steps},
                    {"elongation_mm", c.loading.elongation_mm},
                    {"max_halvings", c.loading.max_halvings},
                    {"failure_threshold", c.loading.failure_threshold}};
  j["uq"] = {{"sigma_cf", c.sigma_cf},
             {"sigma_ca", c.sigma_ca},
             {"c_f_per_mm", c.law.c_f_per_mm},
             {"c_a_per_mm", c.law.c_a_per_mm}};
  return j;
}

namespace detail {

template <class T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, const json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("config: unknown key '" + where + it.key() + "'");
}

}  // namespace detail

// Preset first, then every key present in the file. Unknown keys are errors
// (typos in unit-suffixed names would otherwise pass silently).
inline RunConfig config_from_json(const json& j, const std::string& preset_override = "") {
  using detail::take;
  std::string preset = "desk";
  if (j.contains("preset")) take(j, "preset", preset);
  if (!preset_override.empty()) preset = preset_override;
  RunConfig c = preset_config(preset);
  const json known = to_json(c);
  detail::reject_unknown(j, known, "");
  for (const char* sec : {"stack", "fields", "dmn", "specimens", "uq"})
    if (j.contains(sec)) detail::reject_unknown(j[sec], known[sec], std::string(sec) + ".");
  take(j, "configurations", c.configurations);
  take(j, "realizations", c.realizations);
  take(j, "seed", c.seed);
  take(j, "seed_offset", c.seed_offset);
  const json e = json::object();
  const json& s = j.contains("stack") ? j["stack"] : e;
  take(s, "bundle_count", c.bundle_count);
  take(s, "bundle_area_mm2", c.bundle_area_mm2);
  take(s, "bundle_length_mm", c.bundle_length_mm);
  take(s, "segment_length_mm", c.segment_length_mm);
  take(s, "stack_size_mm", c.stack_size_mm);
  take(s, "plate_size_mm", c.plate_size_mm);
  take(s, "plate_thickness_mm", c.plate_thickness_mm);
  const json& f = j.contains("fields") ? j["fields"] : e;
  take(f, "cell_edge_mm", c.cell_edge_mm);
  take(f, "window_mm", c.window_mm);
  const json& d = j.contains("dmn") ? j["dmn"] : e;
  take(d, "depth", c.dmn_depth);
  take(d, "training_samples", c.training_samples);
  take(d, "training_seed", c.training_seed);
  take(d, "init_seed", c.init_seed);
  take(d, "penalty", c.train.penalty);
  take(d, "learning_rate", c.train.learning_rate);
  take(d, "halving_period_epochs", c.train.halving_period);
  take(d, "validation_fraction", c.train.validation_fraction);
  take(d, "check_every_epochs", c.train.check_every);
  take(d, "patience_checks", c.train.patience);
  take(d, "max_epochs", c.train.max_epochs);
  take(d, "optimizer", c.train.optimizer);
  take(d, "split_seed", c.train.seed);
  take(d, "validation_amplitude", c.validation_amplitude);
  take(d, "validation_steps", c.validation_steps);
  take(d, "validation_angles_deg", c.validation_angles_deg);
  const json& p = j.contains("specimens") ? j["specimens"] : e;
  take(p, "per_plate", c.specimens_per_plate);
  take(p, "steps", c.loading.steps);
  take(p, "elongation_mm", c.loading.elongation_mm);
  take(p, "max_halvings", c.loading.max_halvings);
  take(p, "failure_threshold", c.loading.failure_threshold);
  const json& u = j.contains("uq") ? j["uq"] : e;
  take(u, "sigma_cf", c.sigma_cf);
  take(u, "sigma_ca", c.sigma_ca);
  take(u, "c_f_per_mm", c.law.c_f_per_mm);
  take(u, "c_a_per_mm", c.law.c_a_per_mm);
  c.validate();
  return c;
}

inline RunConfig load_config(const fs::path& path, const std::string& preset_override = "") {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json(j, preset_override);
}

// FNV-1a over the canonical dump.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t plate_seed(const RunConfig& c, const std::string& label, int realization) {
  const std::uint64_t base = splitmix(c.seed + static_cast<std::uint64_t>(c.seed_offset));
  return splitmix(base ^ splitmix(std::uint64_t(label[0]) * 1000 + std::uint64_t(realization)));
}

// ---------------------------------------------------------------- artifacts

inline constexpr const char* kVersion = "smc-vpc 1.0";

struct Provenance {
  std::string kind, hash;
  std::string extra;  // seeds and similar, free form
};

inline std::string provenance_line(const Provenance& p) {
  std::string s = std::string("# ") + kVersion + " artifact=" + p.kind + " config_hash=" + p.hash;
  if (!p.extra.empty()) s += " " + p.extra;
  return s;
}

// Temp file plus rename, so readers never see a half-written artifact.
inline void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ArtifactError("cannot write " + tmp.string());
    body(os);
    os.flush();
    if (!os) throw ArtifactError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_artifact(const fs::path& path, const Provenance& p, const std::function<void(std::ostream&)>& body) {
  write_atomic(path, [&](std::ostream& os) {
    os << provenance_line(p) << '\n';
    body(os);
  });
}

// Opens an artifact, checks kind and config hash; the stream is left after the
// provenance line.
inline std::ifstream open_artifact(const fs::path& path, const std::string& kind, const std::string& hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("missing upstream artifact " + path.string());
  std::string line;
  std::getline(is, line);
  const std::string prefix = std::string("# ") + kVersion + " artifact=" + kind + " ";
  if (line.rfind(prefix, 0) != 0) throw ArtifactError("not a '" + kind + "' artifact: " + path.string());
  const auto at = line.find("config_hash=");
  if (at == std::string::npos || line.compare(at + 12, hash.size(), hash) != 0)
    throw ArtifactError("config hash mismatch in " + path.string() + " (rerun the upstream stages)");
  return is;
}

struct Paths {
  fs::path root;
  fs::path stack(const std::string& l, int r) const { return root / "stacks" / (l + "_r" + std::to_string(r) + ".bundles"); }
  fs::path molded(const std::string& l, int r) const { return root / "molded" / (l + "_r" + std::to_string(r) + ".bundles"); }
  fs::path fields(const std::string& l, int r) const { return root / "fields" / (l + "_r" + std::to_string(r) + ".fields"); }
  fs::path stack_summary() const { return root / "stacks" / "summary.csv"; }
  fs::path field_summary() const { return root / "fields" / "summary.csv"; }
  fs::path tga() const { return root / "fields" / "tga.csv"; }
  fs::path scatter() const { return root / "fields" / "subset_scatter.csv"; }
  fs::path model() const { return root / "dmn" / "model.txt"; }
  fs::path train_report() const { return root / "dmn" / "train_report.json"; }
  fs::path test_report() const { return root / "dmn" / "test_report.json"; }
  fs::path database() const { return root / "specimens" / "database.csv"; }
  fs::path curves() const { return root / "specimens" / "curves.csv"; }
  fs::path uq_report() const { return root / "uq" / "report.json"; }
  fs::path plots() const { return root / "plots"; }
};

using Log = std::function<void(const std::string&)>;

struct Context {
  RunConfig config;
  std::string hash;
  Paths paths;
  int workers = 1;
  Log log = [](const std::string&) {};
};

inline Context make_context(const RunConfig& c, const fs::path& out, int workers, Log log = {}) {
  Context ctx{c, config_hash(c), {out}, std::max(1, workers), [](const std::string&) {}};
  if (log) ctx.log = std::move(log);
  return ctx;
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

// ---------------------------------------------------------------- stages

inline micro::StackConfig stack_config(const RunConfig& c, const std::string& label, int r) {
  const auto p = stack_preset(label);
  micro::StackConfig s;
  s.f0 = p.f0;
  s.a0 = p.a0;
  s.length_mm = s.width_mm = c.stack_size_mm;
  s.height_mm = c.stack_height_mm();
  s.bundle_length_mm = c.bundle_length_mm;
  s.segment_length_mm = c.segment_length_mm;
  s.bundle_area_mm2 = c.bundle_count > 0 ? s.area_for_bundle_count(c.bundle_count) : c.bundle_area_mm2;
  s.seed = plate_seed(c, label, r);
  return s;
}

inline micro::GridSpec field_grid(const RunConfig& c) {
  return micro::GridSpec::centered(c.window_mm, c.window_mm, c.plate_thickness_mm, c.cell_edge_mm);
}

struct PlateId {
  std::string label;
  int realization;
};
inline std::vector<PlateId> plates(const RunConfig& c) {
  std::vector<PlateId> v;
  for (const auto& l : c.configurations)
    for (int r = 0; r < c.realizations; ++r) v.push_back({l, r});
  return v;
}

inline void stage_generate_stack(const Context& ctx) {
  const auto ids = plates(ctx.config);
  std::vector<std::string> rows(ids.size());
  parallel_for(int(ids.size()), ctx.workers, [&](int i, int) {
    const auto sc = stack_config(ctx.config, ids[i].label, ids[i].realization);
    micro::Stack s;
    try {
      s = micro::generate_stack(sc);
    } catch (const micro::PackingError& e) {
      throw NumericalError(e.what());
    }
    write_artifact(ctx.paths.stack(ids[i].label, ids[i].realization),
                   {"stack", ctx.hash, "seed=" + std::to_string(sc.seed)},
                   [&](std::ostream& os) { micro::write_bundles(os, s.bundles); });
    std::size_t segs = 0;
    for (const auto& b : s.bundles) segs += b.nodes.size() - 1;
    const Mat3 A = micro::orientation_tensor(s.bundles).matrix();
    rows[i] = ids[i].label + "," + std::to_string(ids[i].realization) + "," + std::to_string(s.bundles.size()) + "," +
              std::to_string(segs) + "," + fmt(s.clipped_fraction()) + "," + fmt(s.volume_fraction()) + "," +
              fmt(A(0, 0)) + "," + fmt(A(1, 1)) + "," + fmt(A(2, 2)) + "," + fmt(A(0, 1));
  });
  write_artifact(ctx.paths.stack_summary(), {"stack-summary", ctx.hash, ""}, [&](std::ostream& os) {
    os << "config,realization,bundles,segments,clipped_fraction,volume_fraction,A11,A22,A33,A12\n";
    for (const auto& r : rows) os << r << '\n';
  });
  ctx.log("generate-stack: " + std::to_string(ids.size()) + " stacks");
}

inline void stage_mold(const Context& ctx) {
  const auto ids = plates(ctx.config);
  parallel_for(int(ids.size()), ctx.workers, [&](int i, int) {
    const auto& id = ids[i];
    const auto sc = stack_config(ctx.config, id.label, id.realization);
    auto is = open_artifact(ctx.paths.stack(id.label, id.realization), "stack", ctx.hash);
    const auto bundles = micro::read_bundles(is);
    molding::PlugFlowParams pf;
    pf.h0_mm = sc.height_mm;
    pf.h_mm = ctx.config.plate_thickness_mm;
    pf.beta = 1 - sc.a0;  // faster flow across the preferred direction
    pf.plate = field_grid(ctx.config).box();
    const auto r = molding::plug_flow_transform(bundles, micro::stack_box(sc), pf);
    write_artifact(ctx.paths.molded(id.label, id.realization),
                   {"molded", ctx.hash, "beta=" + fmt(pf.beta) + " dropped=" + std::to_string(r.dropped)},
                   [&](std::ostream& os) { micro::write_bundles(os, r.bundles); });
  });
  ctx.log("mold: " + std::to_string(ids.size()) + " plates");
}

inline std::vector<double> scatter_edges_mm() { return {3, 6, 9, 12, 15, 21, 30, 45, 63, 99, 132}; }

inline void stage_fields(const Context& ctx) {
  const auto ids = plates(ctx.config);
  const auto grid = field_grid(ctx.config);
  std::vector<std::string> summary(ids.size()), tga(ids.size()), scatter(ids.size());
  parallel_for(int(ids.size()), ctx.workers, [&](int i, int) {
    const auto& id = ids[i];
    auto is = open_artifact(ctx.paths.molded(id.label, id.realization), "molded", ctx.hash);
    const auto bundles = micro::read_bundles(is);
    const auto fg = micro::evaluate_cell_fields(bundles, grid, true);
    double vb = 0, vf = 0, lb = 0, lf = 0;
    for (const auto& b : bundles) vb += b.volume(), lb += b.length();
    for (const auto& c : fg.cells) vf += c.f * grid.cell_volume(), lf += c.length;
    write_artifact(ctx.paths.fields(id.label, id.realization), {"fields", ctx.hash, ""},
                   [&](std::ostream& os) { micro::write_fields(os, fg); });
    std::vector<double> d;
    for (const auto& p : specimen::tga_positions()) d.push_back(specimen::disc_fraction(fg, p));
    double m = 0, q = 0;
    for (double x : d) m += x / d.size();
    for (double x : d) q += (x - m) * (x - m);
    const double sd = std::sqrt(q / (d.size() - 1));
    std::string t = id.label + "," + std::to_string(id.realization);
    for (double x : d) t += "," + fmt(x);
    tga[i] = t + "," + fmt(m) + "," + fmt(sd);
    summary[i] = id.label + "," + std::to_string(id.realization) + "," + fmt(vb) + "," + fmt(vf) + "," +
                 fmt(std::abs(vf - vb) / vb) + "," + fmt(std::abs(lf - lb) / lb) + "," + std::to_string(fg.empty_cells);
    for (const auto& s : micro::subset_scatter(fg, scatter_edges_mm()))
      scatter[i] += id.label + "," + std::to_string(id.realization) + "," + fmt(s.edge_mm) + "," + fmt(s.L_mm) + "," +
                    fmt(s.sigma_f) + "," + fmt(s.sigma_a) + "," + std::to_string(s.subsets) + "\n";
  });
  write_artifact(ctx.paths.field_summary(), {"field-summary", ctx.hash, ""}, [&](std::ostream& os) {
    os << "config,realization,bundle_volume_mm3,field_volume_mm3,volume_rel_error,length_rel_error,empty_cells\n";
    for (const auto& r : summary) os << r << '\n';
  });
  write_artifact(ctx.paths.tga(), {"tga", ctx.hash, ""}, [&](std::ostream& os) {
    os << "config,realization";
    for (int k = 0; k < 15; ++k) os << ",f" << k;
    os << ",mean_f,std_f\n";
    for (const auto& r : tga) os << r << '\n';
  });
  write_artifact(ctx.paths.scatter(), {"subset-scatter", ctx.hash, ""}, [&](std::ostream& os) {
    os << "config,realization,edge_mm,L_mm,sigma_f,sigma_a,subsets\n";
    for (const auto& r : scatter) os << r;
  });
  ctx.log("fields: " + std::to_string(ids.size()) + " plates");
}

inline dmn::ValidationPack validation_pack(const Context& ctx) {
  std::vector<double> angles;
  for (double d : ctx.config.validation_angles_deg) angles.push_back(d * kPi / 180);
  return dmn::build_validation_pack(meanfield::training_grid_41(), damage::matrix_material(),
                                    damage::bundle_material(), angles, ctx.config.validation_amplitude,
                                    ctx.config.validation_steps, ctx.workers);
}

// Errors split by loading angle.
inline json per_angle_errors(const dmn::Params& p, const dmn::ValidationPack& pack, int workers) {
  const auto pred = dmn::predict_curves(p, pack, workers);
  std::map<long, std::pair<std::vector<std::vector<Vec6>>, std::vector<std::vector<Vec6>>>> by;
  for (std::size_t i = 0; i < pack.curves.size(); ++i) {
    const long key = std::lround(pack.curves[i].angle * 180 / kPi);
    by[key].first.push_back(pred[i]);
    by[key].second.push_back(pack.curves[i].reference);
  }
  json j = json::array();
  for (const auto& [deg, pr] : by) {
    const auto e = dmn::error_metrics(pr.first, pr.second);
    j.push_back({{"angle_deg", deg}, {"eta_mean", e.eta_mean}, {"eta_max", e.eta_max}});
  }
  return j;
}

inline void stage_train_dmn(const Context& ctx) {
  const auto& c = ctx.config;
  const auto set = meanfield::build_training_set(meanfield::training_grid_41(), c.training_samples, c.training_seed);
  const auto pack = validation_pack(ctx);
  dmn::TrainConfig tc = c.train;
  tc.workers = ctx.workers;
  dmn::TrainResult r;
  try {
    r = dmn::train(dmn::Params::random(c.dmn_depth, c.init_seed), set, tc, pack, [&](const dmn::TrainRecord& rec) {
      if (rec.epoch % 100 == 0)
        ctx.log("train-dmn: epoch " + std::to_string(rec.epoch) + " e_valid " + fmt(rec.e_valid) + " eta_max " + fmt(rec.eta_max));
    });
  } catch (const dmn::TrainingDiverged& e) {
    throw NumericalError(e.what());
  }
  write_artifact(ctx.paths.model(), {"dmn-model", ctx.hash, "init_seed=" + std::to_string(c.init_seed)},
                 [&](std::ostream& os) { dmn::write_params(os, r.params); });
  json rep = {{"depth", c.dmn_depth},
              {"samples", c.training_samples},
              {"e_train_mean", r.report.e_train_mean},
              {"e_valid_mean", r.report.e_valid_mean},
              {"eta_mean", r.report.eta_mean},
              {"eta_max", r.report.eta_max},
              {"weight_residuals", r.report.weight_residuals},
              {"epochs_run", r.report.epochs_run},
              {"best_epoch", r.report.best_epoch},
              {"seconds", r.report.seconds},
              {"per_angle", per_angle_errors(r.params, pack, ctx.workers)}};
  json hist = json::array();
  for (const auto& h : r.report.history)
    hist.push_back({h.epoch, h.loss, h.e_train, h.e_valid, h.eta_mean, h.eta_max, h.learning_rate});
  rep["history_columns"] = {"epoch", "loss", "e_train", "e_valid", "eta_mean", "eta_max", "learning_rate"};
  rep["history"] = hist;
  write_artifact(ctx.paths.train_report(), {"dmn-train-report", ctx.hash, ""},
                 [&](std::ostream& os) { os << rep.dump(1) << '\n'; });
  ctx.log("train-dmn: e_valid " + fmt(r.report.e_valid_mean) + " eta_max " + fmt(r.report.eta_max));
}

inline dmn::Params load_model(const Context& ctx) {
  auto is = open_artifact(ctx.paths.model(), "dmn-model", ctx.hash);
  return dmn::read_params(is);
}

// Fresh samples never seen in training plus the nonlinear pack.
inline void stage_test_dmn(const Context& ctx) {
  const dmn::Params p = load_model(ctx);
  const auto test = meanfield::build_training_set(meanfield::training_grid_41(), 200, splitmix(ctx.config.training_seed));
  std::vector<int> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  const double e = dmn::elastic_error(p, test, all);
  const auto pack = validation_pack(ctx);
  const auto ne = dmn::nonlinear_errors(p, pack, ctx.workers);
  json rep = {{"e_test_mean", e}, {"eta_mean", ne.eta_mean}, {"eta_max", ne.eta_max},
              {"per_angle", per_angle_errors(p, pack, ctx.workers)}};
  write_artifact(ctx.paths.test_report(), {"dmn-test-report", ctx.hash, ""},
                 [&](std::ostream& os) { os << rep.dump(1) << '\n'; });
  ctx.log("test-dmn: e_test " + fmt(e) + " eta_max " + fmt(ne.eta_max));
}

// ---------------------------------------------------------------- database

struct SpecimenRecord {
  std::string config;
  int realization = 0, index = 0, position = 0;
  specimen::Shape shape = specimen::Shape::R1;
  int quarter_turns = 0;
  double cx_mm = 0, cy_mm = 0, mean_f = 0, mean_a = 0;
  int empty_cells = 0, clamped_f = 0, clamped_a = 0;
  bool failed = false;
  int failure_section = -1, halvings = 0;
  specimen::Features features;
  std::vector<double> strain, stress;
};

inline std::string database_header() {
  std::string h =
      "config,realization,index,position,shape,quarter_turns,cx_mm,cy_mm,mean_f,mean_a,empty_cells,clamped_f,"
      "clamped_a,failed,failure_section,halvings";
  for (const auto& n : specimen::feature_names()) h += "," + n;
  return h + ",filled_mask";
}

inline void write_database(std::ostream& os, const std::vector<SpecimenRecord>& rows) {
  os << database_header() << '\n';
  for (const auto& r : rows) {
    os << r.config << ',' << r.realization << ',' << r.index << ',' << r.position << ',' << specimen::label(r.shape) << ','
       << r.quarter_turns << ',' << fmt(r.cx_mm) << ',' << fmt(r.cy_mm) << ',' << fmt(r.mean_f) << ',' << fmt(r.mean_a)
       << ',' << r.empty_cells << ',' << r.clamped_f << ',' << r.clamped_a << ',' << int(r.failed) << ','
       << r.failure_section << ',' << r.halvings;
    unsigned mask = 0;
    for (int k = 0; k < specimen::kFeatureCount; ++k) {
      os << ',' << fmt(r.features.y[k]);
      if (r.features.filled[k]) mask |= 1u << k;
    }
    os << ',' << mask << '\n';
  }
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string t;
  while (std::getline(ss, t, ',')) out.push_back(t);
  return out;
}

inline std::vector<SpecimenRecord> read_database(std::istream& is) {
  std::string line;
  std::getline(is, line);
  if (line != database_header()) throw ArtifactError("database: unexpected header");
  std::vector<SpecimenRecord> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto t = split_csv(line);
    if (t.size() != 17 + specimen::kFeatureCount) throw ArtifactError("database: bad row");
    SpecimenRecord r;
    r.config = t[0];
    r.realization = std::stoi(t[1]);
    r.index = std::stoi(t[2]);
    r.position = std::stoi(t[3]);
    r.shape = specimen::shape_from_label(t[4]);
    r.quarter_turns = std::stoi(t[5]);
    r.cx_mm = std::stod(t[6]);
    r.cy_mm = std::stod(t[7]);
    r.mean_f = std::stod(t[8]);
    r.mean_a = std::stod(t[9]);
    r.empty_cells = std::stoi(t[10]);
    r.clamped_f = std::stoi(t[11]);
    r.clamped_a = std::stoi(t[12]);
    r.failed = t[13] == "1";
    r.failure_section = std::stoi(t[14]);
    r.halvings = std::stoi(t[15]);
    const unsigned mask = unsigned(std::stoul(t.back()));
    for (int k = 0; k < specimen::kFeatureCount; ++k) {
      r.features.y[k] = std::stod(t[16 + k]);
      r.features.filled[k] = mask & (1u << k);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<SpecimenRecord> load_database(const Context& ctx) {
  auto is = open_artifact(ctx.paths.database(), "database", ctx.hash);
  return read_database(is);
}

// Runs one plate's plan entry. Pure function of its inputs.
inline SpecimenRecord run_specimen(const micro::FieldGrid& fg, const dmn::Params& model, const specimen::PlanEntry& e,
                                   const specimen::Options& opt) {
  const auto m = specimen::extract_specimen(fg, e.shape, e.placement);
  SpecimenRecord r;
  r.shape = e.shape;
  r.position = e.position;
  r.quarter_turns = e.placement.quarter_turns;
  r.cx_mm = e.placement.cx_mm;
  r.cy_mm = e.placement.cy_mm;
  r.mean_f = m.mean_f;
  r.mean_a = m.mean_a;
  r.empty_cells = m.empty_cells;
  r.clamped_f = m.clamped_f;
  r.clamped_a = m.clamped_a;
  specimen::Result res;
  try {
    res = specimen::simulate_tension(m, model, damage::matrix_material(), damage::bundle_material(), opt);
    r.features = specimen::extract_features(res.strain, res.stress);
  } catch (const dmn::SolveError& x) {
    throw NumericalError(x.what());
  } catch (const damage::ReturnMapError& x) {
    throw NumericalError(x.what());
  } catch (const specimen::LoadingError& x) {
    throw NumericalError(x.what());
  } catch (const std::domain_error& x) {
    throw NumericalError(x.what());
  }
  r.failed = res.failed;
  r.failure_section = res.failure_section;
  r.halvings = res.halvings;
  r.strain = std::move(res.strain);
  r.stress = std::move(res.stress);
  return r;
}

inline void stage_specimens(const Context& ctx) {
  const dmn::Params model = load_model(ctx);
  const auto ids = plates(ctx.config);
  const auto plan = specimen::cutting_plan();
  const int per = ctx.config.specimens_per_plate;
  std::vector<micro::FieldGrid> grids;
  for (const auto& id : ids) {
    auto is = open_artifact(ctx.paths.fields(id.label, id.realization), "fields", ctx.hash);
    grids.push_back(micro::read_fields(is));
  }
  std::vector<SpecimenRecord> rows(ids.size() * per);
  std::atomic<int> done{0};
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(int(rows.size()), ctx.workers, [&](int i, int) {
    const int p = i / per, k = i % per;
    // Spread a partial plan over all positions and turns.
    const int entry = per == 64 ? k : (k * 64) / per;
    SpecimenRecord r = run_specimen(grids[p], model, plan[entry], ctx.config.loading);
    r.config = ids[p].label;
    r.realization = ids[p].realization;
    r.index = entry;
    rows[i] = std::move(r);
    const int n = ++done;
    if (n % 16 == 0 || n == int(rows.size())) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ctx.log("specimens: " + std::to_string(n) + "/" + std::to_string(rows.size()) + " after " + fmt(std::round(s)) + " s");
    }
  });
  write_artifact(ctx.paths.curves(), {"curves", ctx.hash, ""}, [&](std::ostream& os) {
    os << "config,realization,index,step,strain,stress_MPa\n";
    for (const auto& r : rows)
      for (std::size_t s = 0; s < r.strain.size(); ++s)
        os << r.config << ',' << r.realization << ',' << r.index << ',' << s << ',' << fmt(r.strain[s]) << ','
           << fmt(r.stress[s]) << '\n';
  });
  write_artifact(ctx.paths.database(), {"database", ctx.hash, ""}, [&](std::ostream& os) { write_database(os, rows); });
}

// ---------------------------------------------------------------- uq report

// Gauge volume of the narrow part gives the characteristic size.
inline double specimen_size_mm(specimen::Shape s, const RunConfig& c) {
  const auto g = specimen::geometry(s);
  return std::cbrt(g.narrow_cells * g.cell_mm * g.gauge_length_mm * c.plate_thickness_mm);
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json j = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (int k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
    j.push_back(r);
  }
  return j;
}

inline json build_uq_report(const std::vector<SpecimenRecord>& db, const RunConfig& c) {
  if (db.empty()) throw ArtifactError("uq-report: empty database");
  json rep;
  rep["case_labels"] = {"Base", "FVF", "FVF+ORI"};
  rep["ellipse_mass_3sigma"] = uq::ellipse_mass(3);
  for (auto s : {specimen::Shape::R1, specimen::Shape::R2, specimen::Shape::B1, specimen::Shape::B2}) {
    std::vector<const SpecimenRecord*> sel;
    for (const auto& r : db)
      if (r.shape == s) sel.push_back(&r);
    if (sel.size() < 3) continue;
    const int n = int(sel.size());
    uq::MatX X(n, 2), Y(n, specimen::kFeatureCount);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = sel[i]->mean_f;
      X(i, 1) = sel[i]->mean_a;
      for (int k = 0; k < specimen::kFeatureCount; ++k) Y(i, k) = sel[i]->features.y[k];
    }
    uq::FeatureModel fm;
    try {
      fm = uq::fit_feature_matrix(X, Y);
    } catch (const std::domain_error& e) {
      throw NumericalError(e.what());
    }
    const Eigen::RowVectorXd ym = Y.colwise().mean();
    const double L = specimen_size_mm(s, c);
    json js = {{"rows", n},
               {"L_mm", L},
               {"mean_state", {X.col(0).mean(), X.col(1).mean()}},
               {"feature_mean", std::vector<double>(ym.data(), ym.data() + ym.size())},
               {"M", matrix_json(fm.M)},
               {"fit_rms", std::vector<double>(fm.rms.data(), fm.rms.data() + fm.rms.size())}};
    const auto cases = uq::case_covariances(L, c.sigma_cf, c.sigma_ca, c.law);
    const char* names[3] = {"Base", "FVF", "FVF+ORI"};
    for (int k = 0; k < 3; ++k) {
      const uq::MatX SL = uq::propagate_cov(fm.M, cases[k]);
      // (strength, modulus) pair: feature indices 1 and 0.
      uq::Mat2 pair;
      pair << SL(1, 1), SL(1, 0), SL(0, 1), SL(0, 0);
      const auto el = uq::confidence_ellipse(pair);
      json band = json::array();
      for (int lv = 1; lv <= 15; ++lv) {
        const double sd = std::sqrt(std::max(SL(2 + lv, 2 + lv), 0.0));
        band.push_back({{"strain", 1e-3 * lv}, {"mean", ym[2 + lv]}, {"lower", ym[2 + lv] - 3 * sd}, {"upper", ym[2 + lv] + 3 * sd}});
      }
      js["cases"][names[k]] = {{"Sigma_M", matrix_json(cases[k])},
                               {"Sigma_L", matrix_json(SL)},
                               {"ellipse_strength_E",
                                {{"center", {ym[1], ym[0]}},
                                 {"semi_axes", {el.semi_axes[0], el.semi_axes[1]}},
                                 {"angle_rad", el.angle}}},
                               {"band", band}};
    }
    rep["shapes"][specimen::label(s)] = js;
  }
  return rep;
}

inline void stage_uq_report(const Context& ctx) {
  const auto db = load_database(ctx);
  const json rep = build_uq_report(db, ctx.config);  // throws before anything is written
  write_artifact(ctx.paths.uq_report(), {"uq-report", ctx.hash, ""},
                 [&](std::ostream& os) { os << rep.dump(1) << '\n'; });
  ctx.log("uq-report: " + std::to_string(db.size()) + " rows");
}

// ---------------------------------------------------------------- plot data

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> k{"stress-bands", "strength-modulus-scatter", "tga-scatter", "size-scaling"};
  return k;
}

inline json load_uq_report(const Context& ctx) {
  auto is = open_artifact(ctx.paths.uq_report(), "uq-report", ctx.hash);
  return json::parse(is);
}

inline void emit_plot_data(const Context& ctx, const std::string& kind) {
  const fs::path dir = ctx.paths.plots();
  const Provenance pv{"plot-" + kind, ctx.hash, ""};
  if (kind == "stress-bands") {
    const json rep = load_uq_report(ctx);
    for (auto& [shape, js] : rep["shapes"].items())
      for (auto& [cs, jc] : js["cases"].items()) {
        std::string tag = cs;
        std::replace(tag.begin(), tag.end(), '+', '_');
        write_artifact(dir / ("stress_bands_" + shape + "_" + tag + ".csv"), pv, [&](std::ostream& os) {
          os << "strain,mean_stress_MPa,lower_3sigma_MPa,upper_3sigma_MPa\n";
          for (const auto& b : jc["band"])
            os << fmt(b["strain"]) << ',' << fmt(b["mean"]) << ',' << fmt(b["lower"]) << ',' << fmt(b["upper"]) << '\n';
        });
      }
  } else if (kind == "strength-modulus-scatter") {
    const auto db = load_database(ctx);
    if (db.empty()) throw ArtifactError("plot data: empty database");
    write_artifact(dir / "strength_modulus_scatter.csv", pv, [&](std::ostream& os) {
      os << "config,realization,shape,quarter_turns,loading_axis,strength_MPa,E_MPa,mean_f,mean_a\n";
      for (const auto& r : db)
        os << r.config << ',' << r.realization << ',' << specimen::label(r.shape) << ',' << r.quarter_turns << ','
           << (r.quarter_turns % 2 ? "y" : "x") << ',' << fmt(r.features.y[1]) << ',' << fmt(r.features.y[0]) << ','
           << fmt(r.mean_f) << ',' << fmt(r.mean_a) << '\n';
    });
    const json rep = load_uq_report(ctx);
    write_artifact(dir / "strength_modulus_ellipses.csv", pv, [&](std::ostream& os) {
      os << "shape,case,point,strength_MPa,E_MPa\n";
      for (auto& [shape, js] : rep["shapes"].items())
        for (auto& [cs, jc] : js["cases"].items()) {
          const auto& e = jc["ellipse_strength_E"];
          uq::Ellipse el;
          el.semi_axes = Vec2(e["semi_axes"][0].get<double>(), e["semi_axes"][1].get<double>());
          el.angle = e["angle_rad"].get<double>();
          const Vec2 c(e["center"][0].get<double>(), e["center"][1].get<double>());
          const auto poly = uq::ellipse_polyline(c, el);
          for (std::size_t k = 0; k < poly.size(); ++k)
            os << shape << ',' << cs << ',' << k << ',' << fmt(poly[k][0]) << ',' << fmt(poly[k][1]) << '\n';
        }
    });
  } else if (kind == "tga-scatter") {
    auto is = open_artifact(ctx.paths.tga(), "tga", ctx.hash);
    std::stringstream ss;
    ss << is.rdbuf();
    write_artifact(dir / "tga_scatter.csv", pv, [&](std::ostream& os) { os << ss.str(); });
  } else if (kind == "size-scaling") {
    auto is = open_artifact(ctx.paths.scatter(), "subset-scatter", ctx.hash);
    std::stringstream ss;
    ss << is.rdbuf();
    write_artifact(dir / "size_scaling.csv", pv, [&](std::ostream& os) {
      os << ss.str();
      os << "# law\nlaw,-,-,L_mm,sigma_f,sigma_a,-\n";
      for (double L = 3; L <= 120; L *= 1.1) {
        const Vec2 s = uq::sigma_of_size(L, ctx.config.law);
        os << "law,-,-," << fmt(L) << ',' << fmt(s[0]) << ',' << fmt(s[1]) << ",-\n";
      }
    });
  } else {
    throw ConfigError("unknown plot kind '" + kind + "'");
  }
}

// ---------------------------------------------------------------- driver

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> s{"generate-stack", "mold", "fields", "train-dmn",
                                          "test-dmn", "specimens", "uq-report", "plots"};
  return s;
}

inline void run_stage(const Context& ctx, const std::string& stage) {
  if (stage == "generate-stack") return stage_generate_stack(ctx);
  if (stage == "mold") return stage_mold(ctx);
  if (stage == "fields") return stage_fields(ctx);
  if (stage == "train-dmn") return stage_train_dmn(ctx);
  if (stage == "test-dmn") return stage_test_dmn(ctx);
  if (stage == "specimens") return stage_specimens(ctx);
  if (stage == "uq-report") return stage_uq_report(ctx);
  if (stage == "plots") {
    for (const auto& k : plot_kinds()) emit_plot_data(ctx, k);
    return;
  }
  if (stage == "all") {
    for (const auto& s : stage_names()) run_stage(ctx, s);
    return;
  }
  throw ConfigError("unknown stage '" + stage + "'");
}

}  // namespace smc::pipeline
