#pragma once

#include <charconv>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lnn/beamforming.hpp"
#include "lnn/bench.hpp"
#include "lnn/io.hpp"
#include "lnn/prediction.hpp"

namespace lnn {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NCP layer sizes for the GLNN; zero means "derive from the unit count".
struct WiringFields {
  std::size_t n_inter = 0;
  std::size_t n_command = 10;
  std::size_t fanout_sensory = 4;
  std::size_t fanout_inter = 4;
  std::size_t fanin_motor = 4;
  std::size_t n_command_recurrent = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  PredictionScenario prediction;
  std::size_t history = 20;
  std::size_t horizon = 5;
  std::size_t ar_order = 8;
  CellKind cell = CellKind::ltc;  // model trained by train-predict
  std::size_t units = 32;
  TrainConfig training{.lr = 0.02, .batch = 64, .epochs = 300, .batches_per_epoch = 25, .patience = 300};

  BeamformingScenario beamforming;
  GlnnConfig glnn;
  WiringFields wiring;

  BenchConfig bench;

  PredictionExperimentConfig prediction_experiment() const {
    PredictionExperimentConfig c;
    c.scenario = prediction;
    c.scenario.seed = seed;
    c.history = history;
    c.horizon = horizon;
    c.units = units;
    c.ar_order = ar_order;
    c.train = training;
    c.seed = seed;
    return c;
  }

  BeamformingScenario beamforming_scenario() const {
    BeamformingScenario s = beamforming;
    s.seed = seed;
    return s;
  }

  WiringConfig glnn_wiring() const {
    WiringConfig w;
    w.n_sensory = glnn.sensory;
    w.n_motor = beamforming.n_users;
    w.n_command = wiring.n_command;
    if (wiring.n_inter) {
      w.n_inter = wiring.n_inter;
    } else if (glnn.units > w.n_motor + w.n_command) {
      w.n_inter = glnn.units - w.n_motor - w.n_command;
    }
    w.fanout_sensory = std::min(wiring.fanout_sensory, w.n_inter);
    w.fanout_inter = std::min(wiring.fanout_inter, w.n_command);
    w.fanin_motor = std::min(wiring.fanin_motor, w.n_command);
    w.n_command_recurrent = wiring.n_command_recurrent ? wiring.n_command_recurrent : 2 * w.n_command;
    return w;
  }

  GlnnConfig glnn_config() const {
    GlnnConfig g = glnn;
    g.wiring = glnn_wiring();
    return g;
  }

  void validate() const;
};

namespace detail {

struct ConfigField {
  std::string section, key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("expected a number");
  return v;
}

inline std::uint64_t parse_unsigned(std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer");
  }
  return v;
}

inline bool parse_bool(std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false");
}

/// "6:700, 15:600" -> speed:steps pairs
inline std::vector<VelocityPhase> parse_phases(std::string_view s) {
  std::vector<VelocityPhase> out;
  std::stringstream ss{std::string(s)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("expected speed:steps pairs");
    out.push_back({parse_double(trim(t.substr(0, colon))), parse_unsigned(trim(t.substr(colon + 1)))});
  }
  if (out.empty()) throw std::invalid_argument("expected speed:steps pairs");
  return out;
}

inline std::string render_phases(const std::vector<VelocityPhase>& phases) {
  std::string s;
  for (const auto& p : phases) {
    if (!s.empty()) s += ", ";
    s += format_number(p.speed_mps) + ":" + std::to_string(p.steps);
  }
  return s;
}

template <class T>
ConfigField number(std::string section, std::string key, T ExperimentConfig::*outer) {
  return {std::move(section), std::move(key),
          [outer](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_number(c.*outer);
            } else {
              return std::to_string(c.*outer);
            }
          },
          [outer](ExperimentConfig& c, std::string_view v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*outer = parse_double(v);
            } else {
              c.*outer = static_cast<T>(parse_unsigned(v));
            }
          }};
}

template <class S, class T>
ConfigField nested(std::string section, std::string key, S ExperimentConfig::*outer, T S::*inner) {
  return {std::move(section), std::move(key),
          [outer, inner](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<T, bool>) {
              return std::string((c.*outer).*inner ? "true" : "false");
            } else if constexpr (std::is_same_v<T, CellKind>) {
              return std::string(to_string((c.*outer).*inner));
            } else if constexpr (std::is_floating_point_v<T>) {
              return format_number((c.*outer).*inner);
            } else {
              return std::to_string((c.*outer).*inner);
            }
          },
          [outer, inner](ExperimentConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, bool>) {
              (c.*outer).*inner = parse_bool(v);
            } else if constexpr (std::is_same_v<T, CellKind>) {
              (c.*outer).*inner = parse_cell_kind(v);
            } else if constexpr (std::is_floating_point_v<T>) {
              (c.*outer).*inner = parse_double(v);
            } else {
              (c.*outer).*inner = static_cast<T>(parse_unsigned(v));
            }
          }};
}

inline const std::vector<ConfigField>& config_fields() {
  using E = ExperimentConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(number("run", "seed", &E::seed));
    f.push_back({"run", "out", [](const E& c) { return c.out_dir; },
                 [](E& c, std::string_view v) {
                   if (v.empty()) throw std::invalid_argument("expected a directory");
                   c.out_dir = std::string(v);
                 }});

    f.push_back(nested("prediction", "carrier_hz", &E::prediction, &PredictionScenario::carrier_hz));
    f.push_back(nested("prediction", "n_bs_antennas", &E::prediction, &PredictionScenario::n_bs_antennas));
    f.push_back(nested("prediction", "n_user_antennas", &E::prediction, &PredictionScenario::n_user_antennas));
    f.push_back(nested("prediction", "antenna_spacing", &E::prediction, &PredictionScenario::antenna_spacing));
    f.push_back(nested("prediction", "speed_mps", &E::prediction, &PredictionScenario::speed_mps));
    f.push_back(nested("prediction", "sample_interval_s", &E::prediction, &PredictionScenario::sample_interval_s));
    f.push_back(nested("prediction", "n_steps", &E::prediction, &PredictionScenario::n_steps));
    f.push_back(number("prediction", "history", &E::history));
    f.push_back(number("prediction", "horizon", &E::horizon));
    f.push_back(number("prediction", "ar_order", &E::ar_order));

    f.push_back({"model", "cell", [](const E& c) { return std::string(to_string(c.cell)); },
                 [](E& c, std::string_view v) { c.cell = parse_cell_kind(v); }});
    f.push_back(number("model", "units", &E::units));

    f.push_back(nested("training", "lr", &E::training, &TrainConfig::lr));
    f.push_back(nested("training", "batch", &E::training, &TrainConfig::batch));
    f.push_back(nested("training", "epochs", &E::training, &TrainConfig::epochs));
    f.push_back(nested("training", "batches_per_epoch", &E::training, &TrainConfig::batches_per_epoch));
    f.push_back(nested("training", "patience", &E::training, &TrainConfig::patience));
    f.push_back(nested("training", "clip_norm", &E::training, &TrainConfig::clip_norm));

    f.push_back(nested("beamforming", "carrier_hz", &E::beamforming, &BeamformingScenario::carrier_hz));
    f.push_back(nested("beamforming", "n_bs_antennas", &E::beamforming, &BeamformingScenario::n_bs_antennas));
    f.push_back(nested("beamforming", "n_users", &E::beamforming, &BeamformingScenario::n_users));
    f.push_back(nested("beamforming", "n_user_antennas", &E::beamforming, &BeamformingScenario::n_user_antennas));
    f.push_back(nested("beamforming", "antenna_spacing", &E::beamforming, &BeamformingScenario::antenna_spacing));
    f.push_back({"beamforming", "phases", [](const E& c) { return render_phases(c.beamforming.phases); },
                 [](E& c, std::string_view v) { c.beamforming.phases = parse_phases(v); }});
    f.push_back(
        nested("beamforming", "sample_interval_s", &E::beamforming, &BeamformingScenario::sample_interval_s));
    f.push_back(nested("beamforming", "n_paths", &E::beamforming, &BeamformingScenario::n_paths));
    f.push_back(nested("beamforming", "noise_power", &E::beamforming, &BeamformingScenario::noise_power));
    f.push_back(nested("beamforming", "power_budget", &E::beamforming, &BeamformingScenario::power_budget));

    f.push_back(nested("glnn", "cell", &E::glnn, &GlnnConfig::cell));
    f.push_back(nested("glnn", "units", &E::glnn, &GlnnConfig::units));
    f.push_back(nested("glnn", "sensory", &E::glnn, &GlnnConfig::sensory));
    f.push_back(nested("glnn", "lr", &E::glnn, &GlnnConfig::lr));
    f.push_back(nested("glnn", "dt", &E::glnn, &GlnnConfig::dt));
    f.push_back(nested("glnn", "wmmse_warm_start", &E::glnn, &GlnnConfig::wmmse_warm_start));
    f.push_back({"glnn", "wmmse_max_iters", [](const E& c) { return std::to_string(c.glnn.wmmse.max_iters); },
                 [](E& c, std::string_view v) { c.glnn.wmmse.max_iters = parse_unsigned(v); }});
    f.push_back({"glnn", "wmmse_tol", [](const E& c) { return format_number(c.glnn.wmmse.tol); },
                 [](E& c, std::string_view v) { c.glnn.wmmse.tol = parse_double(v); }});

    f.push_back(nested("wiring", "n_inter", &E::wiring, &WiringFields::n_inter));
    f.push_back(nested("wiring", "n_command", &E::wiring, &WiringFields::n_command));
    f.push_back(nested("wiring", "fanout_sensory", &E::wiring, &WiringFields::fanout_sensory));
    f.push_back(nested("wiring", "fanout_inter", &E::wiring, &WiringFields::fanout_inter));
    f.push_back(nested("wiring", "fanin_motor", &E::wiring, &WiringFields::fanin_motor));
    f.push_back(nested("wiring", "n_command_recurrent", &E::wiring, &WiringFields::n_command_recurrent));

    f.push_back(nested("bench", "n_trials", &E::bench, &BenchConfig::n_trials));
    f.push_back(nested("bench", "warmup", &E::bench, &BenchConfig::warmup));
    f.push_back(nested("bench", "units", &E::bench, &BenchConfig::units));
    f.push_back(nested("bench", "inputs", &E::bench, &BenchConfig::inputs));
    f.push_back(nested("bench", "unroll", &E::bench, &BenchConfig::unroll));
    f.push_back(nested("bench", "train_epochs", &E::bench, &BenchConfig::train_epochs));
    f.push_back(nested("bench", "train_batches", &E::bench, &BenchConfig::train_batches));
    return f;
  }();
  return fields;
}

/// Runs `check` and prefixes any complaint with the section name.
template <class F>
void in_section(std::string_view section, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(section) + "." + e.what());
  }
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  detail::in_section("prediction", [&] {
    prediction.validate();
    if (!history) throw std::invalid_argument("history must be positive");
    if (!horizon) throw std::invalid_argument("horizon must be positive");
    if (!ar_order) throw std::invalid_argument("ar_order must be positive");
    // The validation split (last tenth of the training 80%) is the shortest.
    const auto train_end = static_cast<std::size_t>(std::llround(0.8 * double(prediction.n_steps)));
    const auto val_rows = static_cast<std::size_t>(std::llround(0.1 * double(train_end)));
    if (val_rows < history + horizon) throw std::invalid_argument("n_steps too short for history + horizon");
  });
  detail::in_section("model", [&] {
    if (!units) throw std::invalid_argument("units must be positive");
  });
  detail::in_section("training", [&] {
    if (!(training.lr > 0)) throw std::invalid_argument("lr must be positive");
    if (!training.batch) throw std::invalid_argument("batch must be positive");
    if (!(training.clip_norm >= 0)) throw std::invalid_argument("clip_norm must be >= 0");
  });
  detail::in_section("beamforming", [&] { beamforming.validate(); });
  detail::in_section("glnn", [&] {
    if (!(glnn.lr > 0)) throw std::invalid_argument("lr must be positive");
    if (!(glnn.dt > 0)) throw std::invalid_argument("dt must be positive");
    if (!glnn.sensory) throw std::invalid_argument("sensory must be positive");
    if (!(glnn.wmmse.tol >= 0)) throw std::invalid_argument("wmmse_tol must be >= 0");
  });
  if (glnn.cell != CellKind::gru) {
    const WiringConfig w = glnn_wiring();
    if (w.n_units() != glnn.units) {
      throw ConfigError("wiring.n_inter: n_inter + n_command + beamforming.n_users = " + std::to_string(w.n_units()) +
                        " must equal glnn.units = " + std::to_string(glnn.units));
    }
    detail::in_section("wiring", [&] {
      try {
        w.validate();
      } catch (const std::invalid_argument& e) {
        // WiringConfig reports "wiring config: ..."; keep only the detail.
        const std::string m = e.what();
        throw std::invalid_argument(m.substr(m.find(':') + 2));
      }
    });
  }
  detail::in_section("bench", [&] { bench.validate(); });
}

/// INI text: `[section]` headers and `key = value` lines; `;` or `#` start
/// comments. Missing keys keep their defaults.
inline ExperimentConfig parse_config(std::string_view text) {
  namespace pt = boost::property_tree;
  std::string cleaned;
  std::istringstream lines{std::string(text)};
  for (std::string line; std::getline(lines, line);) {
    // ini_parser only knows ';' comments
    const std::string t = detail::trim(line);
    cleaned += (t.starts_with('#') ? std::string() : line) + "\n";
  }
  pt::ptree tree;
  try {
    std::istringstream in(cleaned);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  const auto& fields = detail::config_fields();
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("unknown key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const auto it = std::find_if(fields.begin(), fields.end(),
                                   [&](const auto& f) { return f.section == section && f.key == key; });
      const std::string name = section + "." + key;
      if (it == fields.end()) throw ConfigError("unknown key '" + name + "'");
      try {
        it->set(cfg, detail::trim(value.data()));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(name + ": malformed value '" + value.data() + "' (" + e.what() + ")");
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline std::string render_config(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : detail::config_fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

}  // namespace lnn
