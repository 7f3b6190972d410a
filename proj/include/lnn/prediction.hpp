#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lnn/adam.hpp"
#include "lnn/cells.hpp"
#include "lnn/channel.hpp"

namespace lnn {

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// (T, rx, tx) complex CSI to a T x 2*rx*tx real matrix, interleaved re/im.
inline Tensor featurize(const CsiTensor& csi) {
  const std::size_t n = csi.per_step();
  std::vector<double> d(csi.steps * 2 * n);
  for (std::size_t i = 0; i < csi.data.size(); ++i) {
    d[2 * i] = csi.data[i].real();
    d[2 * i + 1] = csi.data[i].imag();
  }
  return Tensor({csi.steps, 2 * n}, std::move(d));
}

inline CsiTensor defeaturize(const Tensor& f, std::size_t rx, std::size_t tx) {
  if (f.rank() != 2 || f.cols() != 2 * rx * tx) throw ShapeError("defeaturize: column count mismatch");
  CsiTensor out(f.rows(), rx, tx);
  const auto d = f.data();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = cplx(d[2 * i], d[2 * i + 1]);
  return out;
}

/// Per-column affine standardization with statistics from the training series.
struct Standardizer {
  std::vector<double> mean, stddev;

  static Standardizer identity(std::size_t cols) {
    return {std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0)};
  }

  static Standardizer fit(const Tensor& series) {
    if (series.rank() != 2 || series.rows() == 0) throw ShapeError("Standardizer::fit: need a non-empty matrix");
    const std::size_t r = series.rows(), c = series.cols();
    Standardizer s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) s.mean[j] += series[i * c + j];
    }
    for (auto& m : s.mean) m /= static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double e = series[i * c + j] - s.mean[j];
        s.stddev[j] += e * e;
      }
    }
    for (auto& v : s.stddev) {
      v = std::sqrt(v / static_cast<double>(r));
      if (v == 0.0) v = 1.0;
    }
    return s;
  }

  std::size_t cols() const { return mean.size(); }

  Tensor apply(const Tensor& x) const { return transform(x, false); }
  Tensor invert(const Tensor& x) const { return transform(x, true); }

 private:
  Tensor transform(const Tensor& x, bool inverse) const {
    if (x.rank() != 2 || x.cols() != cols()) throw ShapeError("Standardizer: column count mismatch");
    std::vector<double> d = x.vec();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t j = i % cols();
      d[i] = inverse ? d[i] * stddev[j] + mean[j] : (d[i] - mean[j]) / stddev[j];
    }
    return Tensor(x.shape(), std::move(d));
  }
};

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

/// Stride-1 (history, horizon) windows over one contiguous feature series.
struct WindowedDataset {
  Tensor series;  // T x F
  std::size_t history = 20;
  std::size_t horizon = 5;
  std::size_t first_time = 0;  // absolute time index of series row 0

  std::size_t size() const { return series.rows() + 1 - history - horizon; }
  std::size_t features() const { return series.cols(); }

  /// Rows start+offset of each window in `windows`, stacked as a B x F matrix.
  Tensor gather(std::span<const std::size_t> windows, std::size_t offset) const {
    const std::size_t f = features();
    std::vector<double> d(windows.size() * f);
    const auto s = series.data();
    for (std::size_t b = 0; b < windows.size(); ++b) {
      const std::size_t row = windows[b] + offset;
      std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(row * f), f, d.begin() + static_cast<std::ptrdiff_t>(b * f));
    }
    return Tensor({windows.size(), f}, std::move(d));
  }

  std::vector<Tensor> inputs(std::span<const std::size_t> windows) const {
    std::vector<Tensor> out;
    for (std::size_t t = 0; t < history; ++t) out.push_back(gather(windows, t));
    return out;
  }

  std::vector<Tensor> targets(std::span<const std::size_t> windows) const {
    std::vector<Tensor> out;
    for (std::size_t k = 0; k < horizon; ++k) out.push_back(gather(windows, history + k));
    return out;
  }
};

inline WindowedDataset make_windows(const Tensor& series, std::size_t history, std::size_t horizon,
                                    std::size_t first_time = 0) {
  if (history == 0 || horizon == 0) throw std::invalid_argument("make_windows: history and horizon must be >= 1");
  if (series.rank() != 2 || series.rows() < history + horizon) {
    throw std::invalid_argument("make_windows: sequence shorter than history + horizon");
  }
  return WindowedDataset{series, history, horizon, first_time};
}

inline WindowedDataset make_windows(const CsiTensor& csi, std::size_t history, std::size_t horizon) {
  if (csi.steps < history + horizon) throw std::invalid_argument("make_windows: sequence shorter than history + horizon");
  return make_windows(featurize(csi), history, horizon);
}

inline WindowedDataset standardized(const WindowedDataset& ds, const Standardizer& s) {
  WindowedDataset out = ds;
  out.series = s.apply(ds.series);
  return out;
}

/// Train / validation / test datasets cut from disjoint time ranges, all
/// standardized with statistics of the training range.
struct PredictionData {
  Standardizer standardizer;
  WindowedDataset train, validation, test;
  std::size_t rx = 1, tx = 1;
};

inline PredictionData split_prediction_data(const CsiTensor& csi, std::size_t history, std::size_t horizon,
                                            double train_fraction = 0.8, double validation_fraction = 0.1) {
  if (!(train_fraction > 0 && train_fraction < 1) || !(validation_fraction >= 0 && validation_fraction < 1)) {
    throw std::invalid_argument("split_prediction_data: fractions out of range");
  }
  const auto train_end = static_cast<std::size_t>(std::llround(train_fraction * double(csi.steps)));
  const auto val_begin =
      train_end - static_cast<std::size_t>(std::llround(validation_fraction * double(train_end)));
  const Tensor all = featurize(csi);
  auto rows = [&](std::size_t b, std::size_t e) { return slice_rows(all, b, e); };
  PredictionData pd;
  pd.rx = csi.rx;
  pd.tx = csi.tx;
  pd.standardizer = Standardizer::fit(rows(0, val_begin));
  pd.train = make_windows(pd.standardizer.apply(rows(0, val_begin)), history, horizon, 0);
  pd.validation = make_windows(pd.standardizer.apply(rows(val_begin, train_end)), history, horizon, val_begin);
  pd.test = make_windows(pd.standardizer.apply(rows(train_end, csi.steps)), history, horizon, train_end);
  return pd;
}

// ---------------------------------------------------------------------------
// Forecasters and evaluation
// ---------------------------------------------------------------------------

/// Maps `history` inputs (each B x F, standardized) to `horizon` predictions.
using Forecaster = std::function<std::vector<Tensor>(std::span<const Tensor> history, std::size_t horizon)>;

struct EvalReport {
  std::string model;
  std::vector<double> mse;  // per horizon, physical CSI scale
  std::string scenario_hash;
  std::uint64_t seed = 0;
};

/// Predictions for every window, one N x F tensor per horizon.
inline std::vector<Tensor> predict_all(const Forecaster& f, const WindowedDataset& ds, std::size_t batch = 256) {
  if (ds.size() == 0) throw std::invalid_argument("predict_all: empty dataset");
  const std::size_t n = ds.size(), feat = ds.features();
  std::vector<std::vector<double>> acc(ds.horizon);
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < n; b += batch) {
    idx.resize(std::min(batch, n - b));
    std::iota(idx.begin(), idx.end(), b);
    const auto preds = f(ds.inputs(idx), ds.horizon);
    if (preds.size() != ds.horizon) throw ShapeError("predict_all: forecaster returned wrong horizon count");
    for (std::size_t k = 0; k < ds.horizon; ++k) {
      if (preds[k].shape() != Shape{idx.size(), feat}) throw ShapeError("predict_all: prediction shape mismatch");
      acc[k].insert(acc[k].end(), preds[k].data().begin(), preds[k].data().end());
    }
  }
  std::vector<Tensor> out;
  for (auto& a : acc) out.emplace_back(Shape{n, feat}, std::move(a));
  return out;
}

/// Mean over windows and complex coefficients of |error|^2, after undoing the
/// standardization.
inline std::vector<double> horizon_mse(std::span<const Tensor> predictions, const WindowedDataset& ds,
                                       const Standardizer& s) {
  if (ds.size() == 0) throw std::invalid_argument("horizon_mse: empty dataset");
  if (predictions.size() != ds.horizon) throw ShapeError("horizon_mse: wrong horizon count");
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const double coeffs = static_cast<double>(ds.features() / 2);
  std::vector<double> out;
  for (std::size_t k = 0; k < ds.horizon; ++k) {
    const Tensor truth = s.invert(ds.gather(all, ds.history + k));
    const Tensor pred = s.invert(predictions[k]);
    if (pred.shape() != truth.shape()) throw ShapeError("horizon_mse: prediction shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    out.push_back(acc / (static_cast<double>(ds.size()) * coeffs));
  }
  return out;
}

inline EvalReport evaluate_mse(const Forecaster& f, const WindowedDataset& ds, const Standardizer& s,
                               std::string model, std::string scenario_hash = {}, std::uint64_t seed = 0) {
  const auto preds = predict_all(f, ds);
  return {std::move(model), horizon_mse(preds, ds, s), std::move(scenario_hash), seed};
}

inline Forecaster naive_hold() {
  return [](std::span<const Tensor> history, std::size_t horizon) {
    if (history.empty()) throw std::invalid_argument("naive_hold: empty history");
    return std::vector<Tensor>(horizon, history.back().detach());
  };
}

// ---------------------------------------------------------------------------
// Least-squares autoregressive baseline
// ---------------------------------------------------------------------------

/// x_t = c + sum_i A_i x_{t-i}; coef rows are [x_{t-1} | ... | x_{t-p} | 1].
struct ArModel {
  std::size_t order = 0;
  Eigen::MatrixXd coef;
  bool ridge_fallback = false;
};

inline ArModel fit_ar_ls(const Tensor& series, std::size_t order) {
  if (order == 0) throw std::invalid_argument("fit_ar_ls: order must be >= 1");
  if (series.rank() != 2 || series.rows() <= order) throw std::invalid_argument("fit_ar_ls: series too short");
  const auto T = static_cast<Eigen::Index>(series.rows()), F = static_cast<Eigen::Index>(series.cols());
  const auto p = static_cast<Eigen::Index>(order);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      series.data().data(), T, F);
  Eigen::MatrixXd design(T - p, p * F + 1);
  for (Eigen::Index t = p; t < T; ++t) {
    for (Eigen::Index i = 0; i < p; ++i) design.block(t - p, i * F, 1, F) = x.row(t - 1 - i);
    design(t - p, p * F) = 1.0;
  }
  const Eigen::MatrixXd target = x.bottomRows(T - p);
  ArModel m;
  m.order = order;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() == design.cols()) {
    m.coef = qr.solve(target);
  } else {
    m.ridge_fallback = true;
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += 1e-6;
    m.coef = gram.ldlt().solve(design.transpose() * target);
  }
  return m;
}

inline Forecaster ar_forecaster(ArModel m) {
  return [m = std::move(m)](std::span<const Tensor> history, std::size_t horizon) {
    if (history.size() < m.order) throw std::invalid_argument("ar_forecaster: history shorter than order");
    const std::size_t B = history[0].rows(), F = history[0].cols();
    if (static_cast<std::size_t>(m.coef.cols()) != F) throw ShapeError("ar_forecaster: feature count mismatch");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::vector<RowMat> past;
    for (const auto& h : history) {
      past.push_back(Eigen::Map<const RowMat>(h.data().data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(F)));
    }
    std::vector<Tensor> out;
    const auto Fi = static_cast<Eigen::Index>(F);
    for (std::size_t k = 0; k < horizon; ++k) {
      RowMat next = RowMat::Zero(static_cast<Eigen::Index>(B), Fi).rowwise() + m.coef.row(m.coef.rows() - 1);
      for (std::size_t i = 0; i < m.order; ++i) {
        next += past[past.size() - 1 - i] * m.coef.middleRows(static_cast<Eigen::Index>(i) * Fi, Fi);
      }
      past.push_back(next);
      out.emplace_back(Shape{B, F}, std::vector<double>(next.data(), next.data() + next.size()));
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Recurrent predictor
// ---------------------------------------------------------------------------

/// Cell with a residual readout: each prediction is the previous value plus
/// the readout of the new state, fed back autoregressively. Time is measured
/// in sample intervals, so dt = 1 per CSI sample.
struct Predictor {
  CellModel cell;
  double dt = 1.0;

  std::size_t features() const { return cell.n_inputs(); }
};

inline Predictor make_predictor(CellKind kind, std::size_t units, std::size_t features, std::uint64_t seed) {
  Rng rng(seed);
  Predictor p{CellModel::make(kind, units, features, features, rng)};
  // A zero readout starts training from the naive-hold forecast.
  p.cell.for_each_param([](std::string_view name, Tensor& t) {
    if (name == "w_out" || name == "b_out") t = Tensor::zeros(t.shape());
  });
  return p;
}

inline std::vector<Tensor> rollout(const CellModel& cell, double dt, std::span<const Tensor> history,
                                   std::size_t horizon) {
  if (history.empty()) throw std::invalid_argument("rollout: empty history");
  CellRunner runner(cell);
  Tensor h = runner.initial_state(history[0].rows());
  for (const auto& x : history) h = runner.step(h, x, dt);
  std::vector<Tensor> out;
  Tensor y = history.back() + runner.readout(h);
  out.push_back(y);
  for (std::size_t k = 1; k < horizon; ++k) {
    h = runner.step(h, y, dt);
    y = y + runner.readout(h);
    out.push_back(y);
  }
  return out;
}

inline Forecaster predictor_forecaster(const Predictor& p) {
  return [p](std::span<const Tensor> history, std::size_t horizon) {
    if (history.empty() || history[0].cols() != p.features()) throw ShapeError("predictor: feature count mismatch");
    return rollout(p.cell, p.dt, history, horizon);
  };
}

struct TrainConfig {
  double lr = 0.005;
  std::size_t batch = 64;
  std::size_t epochs = 300;
  std::size_t batches_per_epoch = 0;  // 0 = every window once per epoch
  std::size_t patience = 20;          // epochs without validation improvement
  double clip_norm = 1.0;             // global gradient norm; 0 disables
  std::uint64_t seed = 1;
};

struct TrainResult {
  Predictor model;              // parameters with the best validation loss
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<double> val_loss;    // standardized multi-horizon MSE per epoch
  std::size_t best_epoch = 0;
};

/// Standardized MSE over all horizons, averaged over windows.
inline double forecast_loss(const Predictor& p, const WindowedDataset& ds, std::size_t batch = 256) {
  const auto preds = predict_all(predictor_forecaster(p), ds, batch);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  double acc = 0;
  for (std::size_t k = 0; k < ds.horizon; ++k) {
    acc += mse_loss(preds[k], ds.gather(all, ds.history + k)).item();
  }
  return acc / static_cast<double>(ds.horizon);
}

inline void clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  for (auto& g : grads) g = (max_norm / norm) * g;
}

inline TrainResult train_predictor(Predictor model, const WindowedDataset& train, const WindowedDataset* validation,
                                   const TrainConfig& cfg) {
  if (train.features() != model.features()) throw ShapeError("train_predictor: feature count mismatch");
  if (train.size() == 0) throw std::invalid_argument("train_predictor: empty training set");
  if (cfg.batch == 0) throw std::invalid_argument("train_predictor: batch must be >= 1");
  TrainResult res{model, {}, {}, 0};
  AdamState opt(AdamConfig{.lr = cfg.lr});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t full = (train.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t per_epoch = cfg.batches_per_epoch == 0 ? full : std::min(full, cfg.batches_per_epoch);
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch, hi = std::min(train.size(), lo + cfg.batch);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      Tape tape;
      const CellModel bound = bind_params(tape, model.cell);
      double value = 0;
      std::vector<Tensor> grads;
      try {
        const auto inputs = train.inputs(idx);
        const auto targets = train.targets(idx);
        const auto preds = rollout(bound, model.dt, inputs, train.horizon);
        Tensor loss = mse_loss(preds[0], targets[0]);
        for (std::size_t k = 1; k < preds.size(); ++k) loss = loss + mse_loss(preds[k], targets[k]);
        loss = (1.0 / static_cast<double>(preds.size())) * loss;
        value = loss.item();
        grads = param_grads(tape.backward(loss), bound);
      } catch (const NumericError& e) {
        throw NumericError("train_predictor: non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
      clip_gradients(grads, cfg.clip_norm);
      auto params = param_list(model.cell);
      adam_step(params, grads, opt);
      set_params(model.cell, params);
      model.cell.constrain();
      epoch_loss += value;
    }
    res.train_loss.push_back(epoch_loss / static_cast<double>(per_epoch));
    const double val = validation ? forecast_loss(model, *validation) : res.train_loss.back();
    res.val_loss.push_back(val);
    if (val < best) {
      best = val;
      res.model = model;
      res.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

/// FNV-1a over a textual rendering; stable across platforms.
inline std::string fingerprint(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

inline std::string scenario_hash(const PredictionScenario& sc) {
  std::ostringstream os;
  os.precision(17);
  os << sc.carrier_hz << ' ' << sc.n_bs_antennas << ' ' << sc.n_users << ' ' << sc.n_user_antennas << ' '
     << sc.antenna_spacing << ' ' << sc.speed_mps << ' ' << sc.sample_interval_s << ' ' << sc.n_steps << ' '
     << sc.seed;
  return fingerprint(os.str());
}

struct PredictionExperimentConfig {
  PredictionScenario scenario;
  std::size_t history = 20;
  std::size_t horizon = 5;
  std::size_t units = 32;
  std::size_t ar_order = 8;
  TrainConfig train;
  std::uint64_t seed = 1;
  std::size_t workers = 1;  // >= 2 trains LTC and GRU concurrently; results do not depend on it
};

struct PredictionExperiment {
  std::vector<EvalReport> reports;  // ltc, gru, ar_ls, naive_hold
  TrainResult ltc, gru;
  ArModel ar;
  double ltc_train_seconds = 0, gru_train_seconds = 0;
};

inline PredictionExperiment run_prediction_experiment(const PredictionExperimentConfig& cfg) {
  const CsiTensor csi = prediction_csi(cfg.scenario);
  const PredictionData data = split_prediction_data(csi, cfg.history, cfg.horizon);
  const std::string hash = scenario_hash(cfg.scenario);
  const std::size_t features = data.train.features();
  PredictionExperiment ex;
  auto timed_train = [&](CellKind kind, std::uint64_t stream, double& seconds) {
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.seed, stream);
    const auto t0 = std::chrono::steady_clock::now();
    auto r = train_predictor(make_predictor(kind, cfg.units, features, mix_seed(cfg.seed, stream + 100)),
                             data.train, &data.validation, tc);
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  };
  if (cfg.workers >= 2) {
    auto gru = std::async(std::launch::async, [&] { return timed_train(CellKind::gru, 2, ex.gru_train_seconds); });
    ex.ltc = timed_train(CellKind::ltc, 1, ex.ltc_train_seconds);
    ex.gru = gru.get();
  } else {
    ex.ltc = timed_train(CellKind::ltc, 1, ex.ltc_train_seconds);
    ex.gru = timed_train(CellKind::gru, 2, ex.gru_train_seconds);
  }
  ex.ar = fit_ar_ls(data.train.series, cfg.ar_order);
  ex.reports.push_back(evaluate_mse(predictor_forecaster(ex.ltc.model), data.test, data.standardizer, "ltc", hash, cfg.seed));
  ex.reports.push_back(evaluate_mse(predictor_forecaster(ex.gru.model), data.test, data.standardizer, "gru", hash, cfg.seed));
  ex.reports.push_back(evaluate_mse(ar_forecaster(ex.ar), data.test, data.standardizer, "ar_ls", hash, cfg.seed));
  ex.reports.push_back(evaluate_mse(naive_hold(), data.test, data.standardizer, "naive_hold", hash, cfg.seed));
  return ex;
}

}  // namespace lnn
