#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnn/prediction.hpp"

namespace lnn {

struct BenchConfig {
  std::size_t n_trials = 30;
  std::size_t warmup = 10;
  std::size_t units = 32;
  std::size_t inputs = 8;
  std::size_t unroll = 20;
  std::size_t train_epochs = 2;
  std::size_t train_batches = 10;  // per epoch

  void validate() const {
    if (n_trials < 30) throw std::invalid_argument("n_trials must be >= 30");
    if (!units || !inputs || !unroll) throw std::invalid_argument("units, inputs and unroll must be positive");
    if (!train_epochs || !train_batches) throw std::invalid_argument("train_epochs and train_batches must be positive");
  }
};

struct TimingStats {
  double median_us = 0, mean_us = 0, stdev_us = 0;
  std::size_t n = 0;
};

inline TimingStats summarize(std::vector<double> us) {
  if (us.empty()) throw std::invalid_argument("summarize: no samples");
  TimingStats s;
  s.n = us.size();
  s.mean_us = std::accumulate(us.begin(), us.end(), 0.0) / double(s.n);
  double var = 0;
  for (double v : us) var += (v - s.mean_us) * (v - s.mean_us);
  s.stdev_us = s.n > 1 ? std::sqrt(var / double(s.n - 1)) : 0.0;
  std::sort(us.begin(), us.end());
  s.median_us = s.n % 2 ? us[s.n / 2] : 0.5 * (us[s.n / 2 - 1] + us[s.n / 2]);
  return s;
}

struct BenchRow {
  std::string name;
  TimingStats step;    // one cell step
  TimingStats unroll;  // full unrolled forward pass plus readout
};

struct TrainTiming {
  std::string cell;
  std::size_t epochs = 0, batches_per_epoch = 0;
  double seconds_per_epoch = 0;
  double total_seconds = 0;  // data generation, splitting and training
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;
  std::vector<TrainTiming> training;

  const BenchRow& row(std::string_view name) const {
    for (const auto& r : rows) {
      if (r.name == name) return r;
    }
    throw std::out_of_range("bench: no row " + std::string(name));
  }
};

struct BenchVariant {
  std::string name;
  CellKind kind;
  OdeSolver solver = OdeSolver::fused;
  std::size_t unfolds = 6;
};

inline std::vector<BenchVariant> bench_variants() {
  return {{"cfc", CellKind::cfc},
          {"ltc_fused6", CellKind::ltc, OdeSolver::fused, 6},
          {"ltc_fused1", CellKind::ltc, OdeSolver::fused, 1},
          {"ltc_rk4", CellKind::ltc, OdeSolver::rk4, 1},
          {"gru", CellKind::gru}};
}

namespace detail {

template <class F>
TimingStats time_trials(const BenchConfig& cfg, F&& body) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < cfg.warmup; ++i) body();
  std::vector<double> us;
  for (std::size_t i = 0; i < cfg.n_trials; ++i) {
    const auto t0 = clock::now();
    body();
    us.push_back(std::chrono::duration<double, std::micro>(clock::now() - t0).count());
  }
  return summarize(std::move(us));
}

}  // namespace detail

/// Inference latency of every cell variant at equal width, plus end-to-end
/// training wall-clock on the prediction task.
inline BenchReport bench_latency(const BenchConfig& cfg, const PredictionExperimentConfig& task, std::uint64_t seed) {
  cfg.validate();
  BenchReport rep;
  rep.config = cfg;
  Rng rng(mix_seed(seed, 21));
  const Tensor x = normal_tensor({1, cfg.inputs}, 1.0, rng);
  std::vector<Tensor> xs;
  for (std::size_t t = 0; t < cfg.unroll; ++t) xs.push_back(normal_tensor({1, cfg.inputs}, 1.0, rng));
  double sink = 0;
  for (const auto& v : bench_variants()) {
    Rng mrng(mix_seed(seed, 22));
    CellModel m = CellModel::make(v.kind, cfg.units, cfg.inputs, cfg.inputs, mrng);
    m.solver = v.solver;
    m.unfolds = v.unfolds;
    const CellRunner runner(m);
    const Tensor h0 = Tensor::zeros({1, cfg.units});
    BenchRow row{v.name, {}, {}};
    row.step = detail::time_trials(cfg, [&] { sink += runner.step(h0, x, 1.0)[0]; });
    row.unroll = detail::time_trials(cfg, [&] {
      Tensor h = h0;
      for (const auto& xt : xs) h = runner.step(h, xt, 1.0);
      sink += runner.readout(h)[0];
    });
    rep.rows.push_back(std::move(row));
  }
  if (!std::isfinite(sink)) throw NumericError("bench: non-finite output");

  for (CellKind kind : {CellKind::ltc, CellKind::cfc, CellKind::gru}) {
    const auto t0 = std::chrono::steady_clock::now();
    const PredictionData data = split_prediction_data(prediction_csi(task.scenario), task.history, task.horizon);
    TrainConfig tc = task.train;
    tc.epochs = cfg.train_epochs;
    tc.batches_per_epoch = cfg.train_batches;
    tc.patience = cfg.train_epochs;
    tc.seed = mix_seed(seed, 23);
    const auto t1 = std::chrono::steady_clock::now();
    train_predictor(make_predictor(kind, task.units, data.train.features(), mix_seed(seed, 24)), data.train,
                    &data.validation, tc);
    const auto t2 = std::chrono::steady_clock::now();
    TrainTiming tt;
    tt.cell = std::string(to_string(kind));
    tt.epochs = cfg.train_epochs;
    tt.batches_per_epoch = cfg.train_batches;
    tt.seconds_per_epoch = std::chrono::duration<double>(t2 - t1).count() / double(cfg.train_epochs);
    tt.total_seconds = std::chrono::duration<double>(t2 - t0).count();
    rep.training.push_back(tt);
  }
  return rep;
}

}  // namespace lnn
