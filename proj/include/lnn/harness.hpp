#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "lnn/beamforming.hpp"
#include "lnn/bench.hpp"
#include "lnn/config.hpp"
#include "lnn/io.hpp"
#include "lnn/plot.hpp"
#include "lnn/prediction.hpp"

namespace lnn {

inline constexpr std::string_view kVersion = "0.1.0";

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"gen", "train-predict", "eval-predict", "run-bf", "bench", "plot"};
  return c;
}

/// LNN_THREADS caps the worker count; unset means one per hardware thread.
inline std::size_t worker_count() {
  const char* env = std::getenv("LNN_THREADS");
  if (!env || !*env) return std::max(1u, std::thread::hardware_concurrency());
  std::uint64_t n = 0;
  try {
    n = detail::parse_unsigned(env);
  } catch (const std::invalid_argument&) {
    n = 0;
  }
  if (n == 0) throw ConfigError("LNN_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return n;
}

// ---------------------------------------------------------------------------
// CSV emitters
// ---------------------------------------------------------------------------

inline std::string eval_csv(const std::vector<EvalReport>& reports) {
  CsvWriter w({"scheme", "horizon", "mse", "seed", "scenario_hash"});
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.mse.size(); ++k) {
      w.row({r.model, std::to_string(k + 1), format_number(r.mse[k]), std::to_string(r.seed), r.scenario_hash});
    }
  }
  return w.str();
}

inline std::string se_trace_csv(const SeTrace& tr, std::uint64_t seed) {
  CsvWriter w({"step", "phase", "scheme", "se_bits_per_s_hz", "seed"});
  for (std::size_t s = 0; s < tr.schemes.size(); ++s) {
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      w.row({std::to_string(t), std::to_string(tr.phase[t]), tr.schemes[s], format_number(tr.se[s][t]),
             std::to_string(seed)});
    }
  }
  return w.str();
}

/// Mean SE per scheme for each phase and over the whole run.
inline std::string se_summary_csv(const SeTrace& tr) {
  CsvWriter w({"scheme", "phase", "steps", "mean_se_bits_per_s_hz"});
  std::size_t n_phases = 0;
  for (auto p : tr.phase) n_phases = std::max(n_phases, p + 1);
  for (const auto& name : tr.schemes) {
    std::size_t begin = 0;
    for (std::size_t p = 0; p < n_phases; ++p) {
      std::size_t end = begin;
      while (end < tr.steps() && tr.phase[end] == p) ++end;
      w.row({name, std::to_string(p), std::to_string(end - begin), format_number(tr.mean(name, begin, end))});
      begin = end;
    }
    w.row({name, "all", std::to_string(tr.steps()), format_number(tr.mean(name, 0, tr.steps()))});
  }
  return w.str();
}

inline std::string training_csv(const TrainResult& r) {
  CsvWriter w({"epoch", "train_loss", "val_loss"});
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
    w.row({std::to_string(e), format_number(r.train_loss[e]),
           e < r.val_loss.size() ? format_number(r.val_loss[e]) : std::string()});
  }
  return w.str();
}

// ---------------------------------------------------------------------------
// Trend checks on experiment output
// ---------------------------------------------------------------------------

struct PredictionTrends {
  bool all_non_decreasing = true;
  bool ltc_below_naive_everywhere = true;
  bool ltc_below_gru_at_last = false;
};

inline const EvalReport& report_of(const std::vector<EvalReport>& reports, std::string_view model) {
  for (const auto& r : reports) {
    if (r.model == model) return r;
  }
  throw std::out_of_range("no report for " + std::string(model));
}

inline PredictionTrends prediction_trends(const std::vector<EvalReport>& reports) {
  PredictionTrends t;
  for (const auto& r : reports) {
    for (std::size_t k = 1; k < r.mse.size(); ++k) t.all_non_decreasing &= r.mse[k] >= r.mse[k - 1];
  }
  const auto &ltc = report_of(reports, "ltc"), &naive = report_of(reports, "naive_hold"), &gru = report_of(reports, "gru");
  for (std::size_t k = 0; k < ltc.mse.size(); ++k) t.ltc_below_naive_everywhere &= ltc.mse[k] < naive.mse[k];
  t.ltc_below_gru_at_last = ltc.mse.back() < gru.mse.back();
  return t;
}

struct BeamformingSummary {
  std::size_t window = 300;  // final steps compared
  std::size_t warmup = 100;
  double glnn_final = 0, wmmse_final = 0, ratio = 0;
  double glnn_after_warmup = 0, wmmse_after_warmup = 0;
  bool exceeds_after_warmup = false;
  double fraction_steps_ahead = 0;  // after warm-up, GLNN SE > WMMSE SE
};

inline BeamformingSummary beamforming_summary(const SeTrace& tr, std::size_t window = 300, std::size_t warmup = 100) {
  const std::size_t n = tr.steps();
  if (n < 2) throw std::invalid_argument("beamforming_summary: trace too short");
  window = std::min(window, n);
  warmup = std::min(warmup, n - 1);
  BeamformingSummary s;
  s.window = window;
  s.warmup = warmup;
  s.glnn_final = tr.mean("glnn", n - window, n);
  s.wmmse_final = tr.mean("wmmse", n - window, n);
  s.ratio = s.glnn_final / s.wmmse_final;
  s.glnn_after_warmup = tr.mean("glnn", warmup, n);
  s.wmmse_after_warmup = tr.mean("wmmse", warmup, n);
  s.exceeds_after_warmup = s.glnn_after_warmup > s.wmmse_after_warmup;
  const auto &g = tr.se[tr.index_of("glnn")], &w = tr.se[tr.index_of("wmmse")];
  std::size_t ahead = 0;
  for (std::size_t t = warmup; t < n; ++t) ahead += g[t] > w[t];
  s.fraction_steps_ahead = double(ahead) / double(n - warmup);
  return s;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// manifest-<command>.json beside the outputs. Written with status "running"
/// before any result, then "ok" or "failed".
class Manifest {
 public:
  Manifest(std::filesystem::path dir, std::string command, const ExperimentConfig& cfg)
      : path_(dir / ("manifest-" + command + ".json")) {
    const std::string rendered = render_config(cfg);
    doc_ = {{"command", command},
            {"status", "running"},
            {"seed", cfg.seed},
            {"config_hash", fingerprint(rendered)},
            {"config", rendered},
            {"versions",
             {{"lnn", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__},
              {"cplusplus", __cplusplus}}},
            {"started_utc", utc_now()},
            {"outputs", nlohmann::json::array()},
            {"report", nlohmann::json::object()}};
    flush();
  }
  Manifest(const Manifest&) = delete;
  Manifest& operator=(const Manifest&) = delete;
  ~Manifest() {
    if (!closed_) {
      try {
        fail("run aborted");
      } catch (...) {
      }
    }
  }

  void output(const std::filesystem::path& p) { doc_["outputs"].push_back(p.filename().string()); }
  nlohmann::json& report() { return doc_["report"]; }
  void set(const std::string& key, nlohmann::json v) { doc_[key] = std::move(v); }

  void finish() { close("ok"); }
  void fail(const std::string& error) {
    doc_["error"] = error;
    close("failed");
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  void close(const char* status) {
    doc_["status"] = status;
    doc_["finished_utc"] = utc_now();
    closed_ = true;
    flush();
  }
  void flush() { write_file(path_, doc_.dump(2) + "\n"); }

  std::filesystem::path path_;
  nlohmann::json doc_;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct PlotRequest {
  std::optional<std::filesystem::path> csv;
  std::optional<PlotKind> kind;
  std::optional<std::filesystem::path> svg;
};

namespace detail {

inline void emit(Manifest& m, const std::filesystem::path& path, std::string_view bytes) {
  write_file(path, bytes);
  m.output(path);
}

inline void save(Manifest& m, const std::filesystem::path& path, const Checkpoint& ck) {
  save_checkpoint(path, ck);
  m.output(path);
}

inline std::string cmd_gen(const ExperimentConfig& cfg, const std::filesystem::path& out, Manifest& m) {
  const PredictionExperimentConfig pc = cfg.prediction_experiment();
  const CsiTensor csi = prediction_csi(pc.scenario);
  emit(m, out / "prediction_csi.lnncsi", encode_dataset(to_array(csi)));
  const auto seq = beamforming_channel_sequence(cfg.beamforming_scenario());
  emit(m, out / "beamforming_csi.lnncsi", encode_dataset(to_array(seq)));
  m.report() = {{"prediction_shape", {csi.steps, csi.rx, csi.tx}},
                {"beamforming_shape", {seq.size(), seq[0].size(), seq[0][0].rows(), seq[0][0].cols()}}};
  return "wrote prediction_csi.lnncsi and beamforming_csi.lnncsi\n";
}

inline std::string cmd_train_predict(const ExperimentConfig& cfg, const std::filesystem::path& out, Manifest& m) {
  const PredictionExperimentConfig pc = cfg.prediction_experiment();
  const PredictionData data = split_prediction_data(prediction_csi(pc.scenario), pc.history, pc.horizon);
  TrainConfig tc = pc.train;
  tc.seed = mix_seed(cfg.seed, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r =
      train_predictor(make_predictor(cfg.cell, pc.units, data.train.features(), mix_seed(cfg.seed, 101)), data.train,
                      &data.validation, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string name(to_string(cfg.cell));
  save(m, out / (name + ".lnnckpt"), Checkpoint{r.model.cell, std::nullopt, r.model.dt});
  emit(m, out / ("training_" + name + ".csv"), training_csv(r));
  const EvalReport rep = evaluate_mse(predictor_forecaster(r.model), data.test, data.standardizer, name,
                                      scenario_hash(pc.scenario), cfg.seed);
  emit(m, out / ("eval_" + name + ".csv"), eval_csv({rep}));
  m.report() = {{"best_epoch", r.best_epoch}, {"epochs_run", r.train_loss.size()}, {"train_seconds", secs}};
  std::ostringstream os;
  os << "trained " << name << " for " << r.train_loss.size() << " epochs (best " << r.best_epoch << ") in " << secs
     << " s\n";
  return os.str();
}

inline std::string cmd_eval_predict(const ExperimentConfig& cfg, const std::filesystem::path& out, Manifest& m) {
  PredictionExperimentConfig pc = cfg.prediction_experiment();
  pc.workers = worker_count();
  const PredictionExperiment ex = run_prediction_experiment(pc);
  save(m, out / "ltc.lnnckpt", Checkpoint{ex.ltc.model.cell, std::nullopt, ex.ltc.model.dt});
  save(m, out / "gru.lnnckpt", Checkpoint{ex.gru.model.cell, std::nullopt, ex.gru.model.dt});
  emit(m, out / "eval_predict.csv", eval_csv(ex.reports));
  const PredictionTrends t = prediction_trends(ex.reports);
  m.report() = {{"all_non_decreasing", t.all_non_decreasing},
                {"ltc_below_naive_everywhere", t.ltc_below_naive_everywhere},
                {"ltc_below_gru_at_last_horizon", t.ltc_below_gru_at_last},
                {"ltc_train_seconds", ex.ltc_train_seconds},
                {"gru_train_seconds", ex.gru_train_seconds},
                {"ar_ridge_fallback", ex.ar.ridge_fallback}};
  std::ostringstream os;
  os << std::setprecision(4);
  for (const auto& r : ex.reports) {
    os << std::setw(11) << std::left << r.model;
    for (double v : r.mse) os << ' ' << std::setw(11) << v;
    os << '\n';
  }
  os << "mse non-decreasing in horizon: " << (t.all_non_decreasing ? "yes" : "no")
     << "; ltc < naive at every horizon: " << (t.ltc_below_naive_everywhere ? "yes" : "no")
     << "; ltc < gru at last horizon: " << (t.ltc_below_gru_at_last ? "yes" : "no") << '\n';
  return os.str();
}

inline std::string cmd_run_bf(const ExperimentConfig& cfg, const std::filesystem::path& out, Manifest& m) {
  const auto t0 = std::chrono::steady_clock::now();
  const SeTrace tr = run_glnn_experiment(cfg.beamforming_scenario(), cfg.glnn_config(), cfg.seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(m, out / "se_trace.csv", se_trace_csv(tr, cfg.seed));
  emit(m, out / "se_summary.csv", se_summary_csv(tr));
  const BeamformingSummary s = beamforming_summary(tr);
  m.report() = {{"final_window_steps", s.window},
                {"glnn_final_mean_se", s.glnn_final},
                {"wmmse_final_mean_se", s.wmmse_final},
                {"glnn_over_wmmse_final", s.ratio},
                {"warmup_steps", s.warmup},
                {"glnn_exceeds_wmmse_after_warmup", s.exceeds_after_warmup},
                {"fraction_steps_glnn_ahead_after_warmup", s.fraction_steps_ahead},
                {"wmmse_iterations", tr.wmmse_iterations},
                {"seconds", secs}};
  std::ostringstream os;
  os << std::setprecision(4) << "final " << s.window << " steps: glnn " << s.glnn_final << ", wmmse " << s.wmmse_final
     << " (ratio " << s.ratio << "); mrt " << tr.mean("mrt", tr.steps() - s.window, tr.steps()) << ", zf "
     << tr.mean("zf", tr.steps() - s.window, tr.steps()) << "\nafter a " << s.warmup << "-step warm-up GLNN "
     << (s.exceeds_after_warmup ? "exceeds" : "does not exceed") << " WMMSE on average (" << s.glnn_after_warmup
     << " vs " << s.wmmse_after_warmup << ", ahead on " << 100 * s.fraction_steps_ahead << "% of steps)\n";
  return os.str();
}

inline nlohmann::json to_json(const TimingStats& t) {
  return {{"median_us", t.median_us}, {"mean_us", t.mean_us}, {"stdev_us", t.stdev_us}, {"trials", t.n}};
}

inline std::string cmd_bench(const ExperimentConfig& cfg, const std::filesystem::path& out, Manifest& m) {
  const BenchReport rep = bench_latency(cfg.bench, cfg.prediction_experiment(), cfg.seed);
  nlohmann::json j = {{"units", rep.config.units},
                      {"inputs", rep.config.inputs},
                      {"unroll_steps", rep.config.unroll},
                      {"warmup_trials", rep.config.warmup},
                      {"cells", nlohmann::json::array()},
                      {"training", nlohmann::json::array()}};
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "cell          step median   step mean +- sd       " << rep.config.unroll << "-step median\n";
  for (const auto& r : rep.rows) {
    j["cells"].push_back({{"name", r.name}, {"step", to_json(r.step)}, {"unroll", to_json(r.unroll)}});
    os << std::left << std::setw(12) << r.name << std::right << std::setw(10) << r.step.median_us << " us "
       << std::setw(9) << r.step.mean_us << " +- " << std::setw(7) << r.step.stdev_us << " us " << std::setw(11)
       << r.unroll.median_us << " us\n";
  }
  for (const auto& t : rep.training) {
    j["training"].push_back({{"cell", t.cell},
                             {"epochs", t.epochs},
                             {"batches_per_epoch", t.batches_per_epoch},
                             {"seconds_per_epoch", t.seconds_per_epoch},
                             {"end_to_end_seconds", t.total_seconds}});
    os << "training " << t.cell << ": " << t.seconds_per_epoch << " s/epoch (" << t.batches_per_epoch
       << " batches), end-to-end " << t.total_seconds << " s\n";
  }
  const double cfc = rep.row("cfc").step.median_us;
  const bool faster = cfc < rep.row("ltc_fused6").step.median_us && cfc < rep.row("ltc_rk4").step.median_us;
  j["cfc_step_faster_than_ltc"] = faster;
  emit(m, out / "bench.json", j.dump(2) + "\n");
  emit(m, out / "bench.txt", os.str());
  m.report() = {{"cfc_step_faster_than_ltc", faster}};
  return os.str();
}

inline std::string cmd_plot(const std::filesystem::path& out, const PlotRequest& req, Manifest& m) {
  std::vector<std::tuple<std::filesystem::path, PlotKind, std::filesystem::path>> jobs;
  if (req.csv) {
    if (!req.kind) throw std::invalid_argument("plot: --kind is required with --csv");
    std::filesystem::path svg = req.svg ? *req.svg : out / req.csv->filename().replace_extension(".svg");
    jobs.emplace_back(*req.csv, *req.kind, svg);
  } else {
    if (std::filesystem::exists(out / "eval_predict.csv")) {
      jobs.emplace_back(out / "eval_predict.csv", PlotKind::mse_vs_horizon, out / "mse_vs_horizon.svg");
    }
    if (std::filesystem::exists(out / "se_trace.csv")) {
      jobs.emplace_back(out / "se_trace.csv", PlotKind::se_vs_time, out / "se_vs_time.svg");
    }
    if (jobs.empty()) throw std::invalid_argument("plot: no eval_predict.csv or se_trace.csv in " + out.string());
  }
  std::string msg;
  for (const auto& [csv, kind, svg] : jobs) {
    plot_file(csv, kind, svg);
    m.output(svg);
    msg += "wrote " + svg.string() + "\n";
  }
  return msg;
}

}  // namespace detail

/// Runs one subcommand, writing outputs and its manifest under the configured
/// output directory. Returns a human-readable summary.
inline std::string run_command(const std::string& command, const ExperimentConfig& cfg, const PlotRequest& plot = {}) {
  if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
    throw std::invalid_argument("unknown command '" + command + "'");
  }
  cfg.validate();
  const std::filesystem::path out = cfg.out_dir;
  std::filesystem::create_directories(out);
  Manifest m(out, command, cfg);
  try {
    std::string msg;
    if (command == "gen") msg = detail::cmd_gen(cfg, out, m);
    if (command == "train-predict") msg = detail::cmd_train_predict(cfg, out, m);
    if (command == "eval-predict") msg = detail::cmd_eval_predict(cfg, out, m);
    if (command == "run-bf") msg = detail::cmd_run_bf(cfg, out, m);
    if (command == "bench") msg = detail::cmd_bench(cfg, out, m);
    if (command == "plot") msg = detail::cmd_plot(out, plot, m);
    m.finish();
    return msg;
  } catch (const std::exception& e) {
    m.fail(e.what());
    throw;
  }
}

}  // namespace lnn
