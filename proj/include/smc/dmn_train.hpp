// Fitting network parameters to linear homogenization data, with early
// stopping driven by nonlinear validation curves.
#pragma once

#include <smc/dmn.hpp>
#include <smc/dmn_solver.hpp>
#include <smc/meanfield.hpp>
#include <smc/parallel.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace smc::dmn {

struct TrainConfig {
  double penalty = 1000.0;
  double learning_rate = 1.5e-2;
  int halving_period = 400;  // epochs
  double validation_fraction = 0.2;
  int check_every = 5;  // epochs
  int patience = 60;    // checks
  int max_epochs = 1500;
  std::string optimizer = "adam";  // gd | adam
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const {
    if (!(penalty > 0 && learning_rate > 0 && halving_period > 0 && validation_fraction > 0 &&
          validation_fraction < 1 && check_every > 0 && patience > 0 && max_epochs > 0))
      throw std::invalid_argument("TrainConfig: all settings must be positive (split in (0,1))");
    if (optimizer != "gd" && optimizer != "adam")
      throw std::invalid_argument("TrainConfig: optimizer must be gd or adam");
  }
};

// One strain-driven curve with its reference stresses.
struct ValidationCurve {
  double f = 0, a = 0, angle = 0;
  std::vector<Vec6> strain;
  std::vector<Vec6> reference;
};

struct ValidationPack {
  damage::Material matrix, bundle;
  std::vector<ValidationCurve> curves;
};

inline Vec6 uniaxial_strain(double amplitude, double angle) {
  const Vec3 d(std::cos(angle), std::sin(angle), 0.0);
  return to_mandel(amplitude * d * d.transpose());
}

// Curves for every (f, a) and in-plane loading angle, referenced against the
// secant mean-field model.
inline ValidationPack build_validation_pack(const std::vector<std::pair<double, double>>& grid,
                                            const damage::Material& matrix, const damage::Material& bundle,
                                            const std::vector<double>& angles, double amplitude = 0.04,
                                            int steps = 10, int workers = 1) {
  ValidationPack pack{matrix, bundle, {}};
  for (auto [f, a] : grid)
    for (double t : angles) {
      ValidationCurve c;
      c.f = f;
      c.a = a;
      c.angle = t;
      for (int k = 1; k <= steps; ++k) c.strain.push_back(uniaxial_strain(amplitude * k / steps, t));
      pack.curves.push_back(std::move(c));
    }
  parallel_for(int(pack.curves.size()), workers, [&](int i, int) {
    auto& c = pack.curves[i];
    meanfield::SecantReference ref(matrix, bundle, c.f, c.a);
    for (const auto& e : c.strain) c.reference.push_back(ref.step(e));
  });
  return pack;
}

struct CurveErrors {
  double eta_mean = 0, eta_max = 0;
};

// eta_s(t) = |pred - ref|_1 / max_t |ref|_1; mean is the worst per-curve time
// average, max the worst single value.
inline CurveErrors error_metrics(const std::vector<std::vector<Vec6>>& pred,
                                 const std::vector<std::vector<Vec6>>& ref) {
  if (pred.size() != ref.size()) throw std::invalid_argument("error_metrics: curve count mismatch");
  CurveErrors e;
  for (std::size_t s = 0; s < ref.size(); ++s) {
    if (pred[s].size() != ref[s].size() || ref[s].empty())
      throw std::invalid_argument("error_metrics: curves must share a non-empty sampling");
    double scale = 0;
    for (const auto& r : ref[s]) scale = std::max(scale, r.lpNorm<1>());
    if (!(scale > 0)) throw std::domain_error("error_metrics: all-zero reference curve");
    double sum = 0;
    for (std::size_t t = 0; t < ref[s].size(); ++t) {
      const double eta = (pred[s][t] - ref[s][t]).lpNorm<1>() / scale;
      sum += eta;
      e.eta_max = std::max(e.eta_max, eta);
    }
    e.eta_mean = std::max(e.eta_mean, sum / ref[s].size());
  }
  return e;
}

inline std::vector<std::vector<Vec6>> predict_curves(const Params& p, const ValidationPack& pack, int workers = 1) {
  std::vector<std::vector<Vec6>> out(pack.curves.size());
  parallel_for(int(pack.curves.size()), workers, [&](int i, int) {
    const auto& c = pack.curves[i];
    NonlinearNetwork nn(instantiate(p, c.f, c.a), pack.matrix, pack.bundle);
    NetworkState s = nn.fresh(), next;
    for (const auto& e : c.strain) {
      out[i].push_back(nn.strain_step(e, s, next).stress);
      std::swap(s, next);
    }
  });
  return out;
}

inline CurveErrors nonlinear_errors(const Params& p, const ValidationPack& pack, int workers = 1) {
  std::vector<std::vector<Vec6>> ref;
  for (const auto& c : pack.curves) ref.push_back(c.reference);
  return error_metrics(predict_curves(p, pack, workers), ref);
}

// Mean relative L1 stiffness error over samples.
inline double elastic_error(const Params& p, const std::vector<meanfield::TrainingSample>& set,
                            const std::vector<int>& idx) {
  double s = 0;
  for (int i : idx) s += sample_loss(p, set[i].C1, set[i].C2, set[i].f, set[i].a, set[i].target, nullptr);
  return idx.empty() ? 0.0 : s / idx.size();
}

struct TrainRecord {
  int epoch;
  double loss, e_train, e_valid, eta_mean, eta_max, learning_rate;
};

struct TrainReport {
  double e_train_mean = 0, e_valid_mean = 0, eta_mean = 0, eta_max = 0;
  std::array<double, 2> weight_residuals{};
  int epochs_run = 0, best_epoch = 0;
  double seconds = 0;
  std::vector<TrainRecord> history;
};

struct TrainResult {
  Params params;
  TrainReport report;
};

// Deterministic 80/20 split: Fisher-Yates on a seeded stream.
inline std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double valid_fraction, std::uint64_t seed) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[int(rng() % std::uint64_t(i + 1))]);
  const int nv = std::max(1, int(std::lround(valid_fraction * n)));
  if (nv >= n) throw std::invalid_argument("split_indices: need at least one training sample");
  std::vector<int> valid(idx.begin(), idx.begin() + nv), train(idx.begin() + nv, idx.end());
  return {train, valid};
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TrainLog = std::function<void(const TrainRecord&)>;

inline TrainResult train(Params p, const std::vector<meanfield::TrainingSample>& set, const TrainConfig& cfg,
                         const ValidationPack& pack, const TrainLog& log = {}) {
  cfg.validate();
  if (set.empty()) throw std::invalid_argument("train: empty training set");
  const auto t0 = std::chrono::steady_clock::now();
  const auto [tr, va] = split_indices(int(set.size()), cfg.validation_fraction, cfg.seed);

  const int np = p.size();
  std::vector<Vec> slot(tr.size(), Vec::Zero(np));
  std::vector<double> loss_slot(tr.size());
  Vec x = p.pack(), m = Vec::Zero(np), v2 = Vec::Zero(np);
  TrainResult best{p, {}};
  best.report.eta_max = INFINITY;
  int since_best = 0, adam_t = 0;
  TrainReport rep;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(0.5, (epoch - 1) / cfg.halving_period);
    parallel_for(int(tr.size()), cfg.workers, [&](int k, int) {
      const auto& s = set[tr[k]];
      slot[k].setZero();
      loss_slot[k] = sample_loss(p, s.C1, s.C2, s.f, s.a, s.target, &slot[k], 1.0 / tr.size());
    });
    Vec g = Vec::Zero(np);
    double loss = 0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
      g += slot[k];
      loss += loss_slot[k];
    }
    loss /= tr.size();
    loss += penalty(p, cfg.penalty, &g);
    if (!std::isfinite(loss) || !g.allFinite()) {
      std::ostringstream os;
      os << "training diverged at epoch " << epoch;
      throw TrainingDiverged(os.str());
    }
    if (cfg.optimizer == "adam") {
      ++adam_t;
      m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g;
      v2 = cfg.adam_beta2 * v2 + (1 - cfg.adam_beta2) * g.cwiseAbs2();
      const double b1 = 1 - std::pow(cfg.adam_beta1, adam_t), b2 = 1 - std::pow(cfg.adam_beta2, adam_t);
      x -= lr * ((m / b1).array() / ((v2 / b2).array().sqrt() + cfg.adam_eps)).matrix();
    } else {
      x -= lr * g;
    }
    p.unpack(x);
    rep.epochs_run = epoch;

    if (epoch % cfg.check_every == 0 || epoch == cfg.max_epochs) {
      TrainRecord r{epoch, loss, elastic_error(p, set, tr), elastic_error(p, set, va), 0, 0, lr};
      CurveErrors ce;
      bool ok = true;
      try {
        ce = nonlinear_errors(p, pack, cfg.workers);
      } catch (const std::exception&) {
        ok = false;  // a failed nonlinear solve disqualifies this snapshot
        ce.eta_mean = ce.eta_max = INFINITY;
      }
      r.eta_mean = ce.eta_mean;
      r.eta_max = ce.eta_max;
      rep.history.push_back(r);
      if (log) log(r);
      if (ok && ce.eta_max < best.report.eta_max) {
        best.params = p;
        best.report.eta_max = ce.eta_max;
        best.report.eta_mean = ce.eta_mean;
        best.report.e_train_mean = r.e_train;
        best.report.e_valid_mean = r.e_valid;
        best.report.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  best.report.epochs_run = rep.epochs_run;
  best.report.history = std::move(rep.history);
  best.report.weight_residuals = best.params.weight_residuals();
  best.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

}  // namespace smc::dmn
