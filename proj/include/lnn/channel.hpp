#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lnn/random.hpp"

namespace lnn {

using cplx = std::complex<double>;

inline constexpr double speed_of_light = 299792458.0;

inline double doppler_frequency(double speed_mps, double carrier_hz) {
  if (speed_mps < 0 || carrier_hz < 0) throw std::invalid_argument("doppler_frequency: negative input");
  return speed_mps * carrier_hz / speed_of_light;
}

struct Trajectory {
  std::vector<std::array<double, 2>> positions;
};

/// Positions at each sample instant, starting at the origin. Each step moves
/// speed*dt in a direction drawn uniformly on [0, 2pi).
inline Trajectory random_walk(std::size_t n_steps, double speed_mps, double dt, std::uint64_t seed) {
  if (n_steps < 1) throw std::invalid_argument("random_walk: n_steps must be >= 1");
  if (speed_mps < 0 || dt < 0) throw std::invalid_argument("random_walk: negative speed or dt");
  Rng rng(seed);
  Trajectory tr;
  tr.positions.reserve(n_steps);
  tr.positions.push_back({0.0, 0.0});
  const double len = speed_mps * dt;
  for (std::size_t i = 1; i < n_steps; ++i) {
    const double dir = uniform(rng, 0.0, 2 * std::numbers::pi);
    const auto& p = tr.positions.back();
    tr.positions.push_back({p[0] + len * std::cos(dir), p[1] + len * std::sin(dir)});
  }
  return tr;
}

/// One unit-power Rayleigh fading coefficient as a sum of sinusoids.
///
/// Arrival angles are equally spaced on [0, pi) with a random common offset, so
/// the Doppler shifts f_D*cos(alpha_n) are all distinct and the time-averaged
/// autocorrelation approximates J0(2 pi f_D tau). Phases accumulate step by
/// step, so changing the Doppler frequency mid-sequence keeps the process
/// continuous.
class JakesProcess {
 public:
  static constexpr std::size_t default_sinusoids = 64;

  JakesProcess(Rng& rng, std::size_t n_sinusoids = default_sinusoids)
      : cos_alpha_(n_sinusoids), phase_(n_sinusoids) {
    if (n_sinusoids == 0) throw std::invalid_argument("JakesProcess: need at least one sinusoid");
    const double offset = uniform(rng, 0.0, 1.0);
    const double n = static_cast<double>(n_sinusoids);
    for (std::size_t i = 0; i < n_sinusoids; ++i) {
      cos_alpha_[i] = std::cos(std::numbers::pi * (static_cast<double>(i) + offset) / n);
      phase_[i] = uniform(rng, 0.0, 2 * std::numbers::pi);
    }
  }

  cplx value() const {
    cplx s{0.0, 0.0};
    for (double ph : phase_) s += cplx(std::cos(ph), std::sin(ph));
    return s / std::sqrt(static_cast<double>(phase_.size()));
  }

  void advance(double doppler_hz, double dt) {
    if (doppler_hz < 0) throw std::invalid_argument("JakesProcess: negative Doppler");
    const double w = 2 * std::numbers::pi * doppler_hz * dt;
    for (std::size_t i = 0; i < phase_.size(); ++i) {
      phase_[i] = std::fmod(phase_[i] + w * cos_alpha_[i], 2 * std::numbers::pi);
    }
  }

 private:
  std::vector<double> cos_alpha_;
  std::vector<double> phase_;
};

/// Complex coefficients indexed (time, rx, tx), row-major.
struct CsiTensor {
  std::size_t steps = 0, rx = 0, tx = 0;
  std::vector<cplx> data;

  CsiTensor() = default;
  CsiTensor(std::size_t t, std::size_t r, std::size_t c) : steps(t), rx(r), tx(c), data(t * r * c) {}

  std::size_t per_step() const { return rx * tx; }
  cplx& operator()(std::size_t t, std::size_t r, std::size_t c) { return data[(t * rx + r) * tx + c]; }
  const cplx& operator()(std::size_t t, std::size_t r, std::size_t c) const {
    return data[(t * rx + r) * tx + c];
  }
  /// Coefficient `i` of the flattened (rx, tx) grid at time t.
  const cplx& flat(std::size_t t, std::size_t i) const { return data[t * per_step() + i]; }

  CsiTensor slice_time(std::size_t begin, std::size_t end) const {
    if (begin > end || end > steps) throw std::out_of_range("CsiTensor::slice_time");
    CsiTensor out(end - begin, rx, tx);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(begin * per_step()),
              data.begin() + static_cast<std::ptrdiff_t>(end * per_step()), out.data.begin());
    return out;
  }
};

inline CsiTensor jakes_sequence(double doppler_hz, std::size_t n_steps, double dt,
                                std::array<std::size_t, 2> shape, std::uint64_t seed,
                                std::size_t n_sinusoids = JakesProcess::default_sinusoids) {
  if (doppler_hz < 0) throw std::invalid_argument("jakes_sequence: negative Doppler");
  CsiTensor out(n_steps, shape[0], shape[1]);
  const std::size_t n = out.per_step();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    JakesProcess proc(rng, n_sinusoids);
    for (std::size_t t = 0; t < n_steps; ++t) {
      if (t > 0) proc.advance(doppler_hz, dt);
      out.data[t * n + i] = proc.value();
    }
  }
  return out;
}

/// Uniform linear array response, entry m = exp(j 2 pi spacing m sin(angle)).
inline Eigen::VectorXcd steering_vector(std::size_t m, double spacing_wavelengths, double angle_rad) {
  if (m < 1) throw std::invalid_argument("steering_vector: M must be >= 1");
  Eigen::VectorXcd a(static_cast<Eigen::Index>(m));
  const double k = 2 * std::numbers::pi * spacing_wavelengths * std::sin(angle_rad);
  for (std::size_t i = 0; i < m; ++i) a(static_cast<Eigen::Index>(i)) = std::polar(1.0, k * static_cast<double>(i));
  return a;
}

struct PredictionScenario {
  double carrier_hz = 6e9;
  std::size_t n_bs_antennas = 4;
  std::size_t n_users = 1;
  std::size_t n_user_antennas = 1;
  double antenna_spacing = 0.5;
  double speed_mps = 2.0;
  double sample_interval_s = 1e-3;
  std::size_t n_steps = 25000;
  std::uint64_t seed = 1;

  double doppler_hz() const { return doppler_frequency(speed_mps, carrier_hz); }

  void validate() const {
    auto positive = [](double v, const char* key) {
      if (!(v > 0)) throw std::invalid_argument(std::string(key) + " must be positive");
    };
    positive(carrier_hz, "carrier_hz");
    positive(static_cast<double>(n_bs_antennas), "n_bs_antennas");
    positive(static_cast<double>(n_user_antennas), "n_user_antennas");
    positive(antenna_spacing, "antenna_spacing");
    positive(speed_mps, "speed_mps");
    positive(sample_interval_s, "sample_interval_s");
    positive(static_cast<double>(n_steps), "n_steps");
    if (n_users != 1) throw std::invalid_argument("n_users: prediction scenario is single-user");
    if (doppler_hz() * sample_interval_s >= 0.1) {
      throw std::invalid_argument("sample_interval_s: normalized Doppler f_D*dt must be < 0.1");
    }
  }
};

/// CSI of shape (n_steps, n_user_antennas, n_bs_antennas). The walk direction
/// does not enter the fading; only its speed sets the Doppler frequency.
inline CsiTensor prediction_csi(const PredictionScenario& sc) {
  sc.validate();
  return jakes_sequence(sc.doppler_hz(), sc.n_steps, sc.sample_interval_s,
                        {sc.n_user_antennas, sc.n_bs_antennas}, sc.seed);
}

struct VelocityPhase {
  double speed_mps;
  std::size_t steps;
};

struct BeamformingScenario {
  double carrier_hz = 28e9;
  std::size_t n_bs_antennas = 64;
  std::size_t n_users = 4;
  std::size_t n_user_antennas = 2;
  double antenna_spacing = 0.5;
  std::vector<VelocityPhase> phases{{6.0, 700}, {15.0, 600}, {30.0, 500}};
  double sample_interval_s = 5e-6;
  std::size_t n_paths = 3;
  double noise_power = 0.1;
  double power_budget = 1.0;
  std::uint64_t seed = 1;

  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& p : phases) n += p.steps;
    return n;
  }

  std::size_t phase_of(std::size_t step) const {
    std::size_t end = 0;
    for (std::size_t i = 0; i < phases.size(); ++i) {
      end += phases[i].steps;
      if (step < end) return i;
    }
    throw std::out_of_range("BeamformingScenario::phase_of: step beyond schedule");
  }

  /// First step index of each phase after the first.
  std::vector<std::size_t> boundaries() const {
    std::vector<std::size_t> b;
    std::size_t s = 0;
    for (std::size_t i = 0; i + 1 < phases.size(); ++i) b.push_back(s += phases[i].steps);
    return b;
  }

  void validate() const {
    auto positive = [](double v, const char* key) {
      if (!(v > 0)) throw std::invalid_argument(std::string(key) + " must be positive");
    };
    positive(carrier_hz, "carrier_hz");
    positive(static_cast<double>(n_bs_antennas), "n_bs_antennas");
    positive(static_cast<double>(n_users), "n_users");
    positive(static_cast<double>(n_user_antennas), "n_user_antennas");
    positive(antenna_spacing, "antenna_spacing");
    positive(sample_interval_s, "sample_interval_s");
    positive(static_cast<double>(n_paths), "n_paths");
    positive(noise_power, "noise_power");
    positive(power_budget, "power_budget");
    if (phases.empty()) throw std::invalid_argument("phases: at least one velocity phase required");
    for (const auto& p : phases) {
      if (p.speed_mps < 0) throw std::invalid_argument("phases: negative speed");
      if (p.steps == 0) throw std::invalid_argument("phases: empty phase");
    }
    if (n_bs_antennas < n_users * n_user_antennas) {
      throw std::invalid_argument("n_bs_antennas: need M >= K*N_r");
    }
  }
};

/// Per-user channel matrices H_k of shape N_r x M.
using ChannelSet = std::vector<Eigen::MatrixXcd>;

/// Geometric multi-user channel H_k = sum_p g_p a_rx(theta_p) a_tx(phi_p)^H / sqrt(P)
/// with angles fixed for the episode and each gain an independent Jakes process
/// running at the Doppler frequency of the active velocity phase.
class BeamformingChannel {
 public:
  explicit BeamformingChannel(const BeamformingScenario& sc) : sc_(sc) {
    sc_.validate();
    Rng angles(mix_seed(sc_.seed, 0));
    const double half_pi = std::numbers::pi / 2;
    for (std::size_t k = 0; k < sc_.n_users; ++k) {
      for (std::size_t p = 0; p < sc_.n_paths; ++p) {
        rx_.push_back(steering_vector(sc_.n_user_antennas, sc_.antenna_spacing, uniform(angles, -half_pi, half_pi)));
        tx_.push_back(steering_vector(sc_.n_bs_antennas, sc_.antenna_spacing, uniform(angles, -half_pi, half_pi)));
        Rng g(mix_seed(sc_.seed, 1 + k * sc_.n_paths + p));
        gains_.emplace_back(g);
      }
    }
  }

  const BeamformingScenario& scenario() const { return sc_; }
  std::size_t step() const { return step_; }
  bool done() const { return step_ >= sc_.total_steps(); }

  /// Path gains at the current step, user-major.
  std::vector<cplx> gains() const {
    std::vector<cplx> g;
    g.reserve(gains_.size());
    for (const auto& p : gains_) g.push_back(p.value());
    return g;
  }

  ChannelSet current() const {
    ChannelSet hs;
    const double norm = 1.0 / std::sqrt(static_cast<double>(sc_.n_paths));
    for (std::size_t k = 0; k < sc_.n_users; ++k) {
      Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(sc_.n_user_antennas),
                                                  static_cast<Eigen::Index>(sc_.n_bs_antennas));
      for (std::size_t p = 0; p < sc_.n_paths; ++p) {
        const std::size_t i = k * sc_.n_paths + p;
        h += (norm * gains_[i].value()) * rx_[i] * tx_[i].adjoint();
      }
      hs.push_back(std::move(h));
    }
    return hs;
  }

  /// Moves to the next step; the increment uses the Doppler of the step entered.
  void advance() {
    if (done()) throw std::out_of_range("BeamformingChannel::advance past end of schedule");
    ++step_;
    if (done()) return;
    const double fd = doppler_frequency(sc_.phases[sc_.phase_of(step_)].speed_mps, sc_.carrier_hz);
    for (auto& p : gains_) p.advance(fd, sc_.sample_interval_s);
  }

 private:
  BeamformingScenario sc_;
  std::vector<Eigen::VectorXcd> rx_, tx_;
  std::vector<JakesProcess> gains_;
  std::size_t step_ = 0;
};

inline std::vector<ChannelSet> beamforming_channel_sequence(const BeamformingScenario& sc) {
  BeamformingChannel ch(sc);
  std::vector<ChannelSet> out;
  out.reserve(sc.total_steps());
  while (!ch.done()) {
    out.push_back(ch.current());
    ch.advance();
  }
  return out;
}

}  // namespace lnn
