#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lnn/adam.hpp"
#include "lnn/cells.hpp"
#include "lnn/channel.hpp"
#include "lnn/wiring.hpp"

namespace lnn {

/// Per-user precoders V_k of shape M x d.
using PrecoderSet = std::vector<Eigen::MatrixXcd>;

inline double total_power(const PrecoderSet& v) {
  double p = 0;
  for (const auto& m : v) p += m.squaredNorm();
  return p;
}

namespace detail {

inline void check_system(const ChannelSet& h, const PrecoderSet& v) {
  if (h.empty() || h.size() != v.size()) throw ShapeError("beamforming: user count mismatch");
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k].cols() != v[k].rows() || h[k].cols() != h[0].cols()) {
      throw ShapeError("beamforming: H_k columns must equal precoder rows (M)");
    }
  }
}

/// log2 det of a Hermitian positive definite matrix.
inline double log2det_hpd(const Eigen::MatrixXcd& a) {
  Eigen::LLT<Eigen::MatrixXcd> llt(a);
  if (llt.info() != Eigen::Success) throw DomainError("log2det: matrix not positive definite");
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) s += std::log(llt.matrixL()(i, i).real());
  return 2.0 * s / std::numbers::ln2;
}

}  // namespace detail

/// Per-user rates log2 det(I + S_k N_k^{-1}), evaluated as
/// log2 det(S_k + N_k) - log2 det(N_k).
inline std::vector<double> user_rates(const ChannelSet& h, const PrecoderSet& v, double noise_power) {
  detail::check_system(h, v);
  if (!(noise_power > 0)) throw std::invalid_argument("user_rates: noise power must be positive");
  std::vector<double> out;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const auto nr = h[k].rows();
    Eigen::MatrixXcd total = noise_power * Eigen::MatrixXcd::Identity(nr, nr);
    Eigen::MatrixXcd own;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const Eigen::MatrixXcd g = h[k] * v[j];
      const Eigen::MatrixXcd q = g * g.adjoint();
      total += q;
      if (j == k) own = q;
    }
    out.push_back(std::max(0.0, detail::log2det_hpd(total) - detail::log2det_hpd(total - own)));
  }
  return out;
}

inline double sum_se(const ChannelSet& h, const PrecoderSet& v, double noise_power) {
  double r = 0;
  for (double x : user_rates(h, v, noise_power)) r += x;
  return r;
}

inline PrecoderSet power_project(PrecoderSet v, double power_budget) {
  if (!(power_budget > 0)) throw std::invalid_argument("power_project: budget must be positive");
  const double p = total_power(v);
  if (p > power_budget) {
    const double s = std::sqrt(power_budget / p);
    for (auto& m : v) m *= s;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Real lowering for autodiff
// ---------------------------------------------------------------------------

/// Real and imaginary parts of a complex matrix as tensors.
struct SplitMatrix {
  Tensor re, im;
};

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> d(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) d[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  }
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(d));
}

inline SplitMatrix split(const Eigen::MatrixXcd& m) { return {to_tensor(m.real()), to_tensor(m.imag())}; }

inline Eigen::MatrixXcd join(const Tensor& re, const Tensor& im) {
  if (re.shape() != im.shape() || re.rank() != 2) throw ShapeError("join: real/imag shape mismatch");
  Eigen::MatrixXcd m(static_cast<Eigen::Index>(re.rows()), static_cast<Eigen::Index>(re.cols()));
  for (std::size_t r = 0; r < re.rows(); ++r) {
    for (std::size_t c = 0; c < re.cols(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cplx(re.at(r, c), im.at(r, c));
    }
  }
  return m;
}

/// Sum SE as a differentiable function of the split precoders. A Hermitian
/// matrix X is represented by the real symmetric [[Xr, -Xi], [Xi, Xr]] whose
/// log-determinant is twice that of X.
inline Tensor sum_se_tensor(const ChannelSet& h, std::span<const SplitMatrix> v, double noise_power) {
  if (h.empty() || h.size() != v.size()) throw ShapeError("sum_se_tensor: user count mismatch");
  if (!(noise_power > 0)) throw std::invalid_argument("sum_se_tensor: noise power must be positive");
  const double scale = 0.5 / std::numbers::ln2;
  Tensor rate;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const SplitMatrix hk = split(h[k]);
    const std::size_t nr = hk.re.rows();
    const Tensor noise = noise_power * Tensor::eye(nr);
    Tensor tr = noise, ti = Tensor::zeros({nr, nr});
    Tensor nr_re = noise, nr_im = Tensor::zeros({nr, nr});
    for (std::size_t j = 0; j < v.size(); ++j) {
      const Tensor gr = matmul(hk.re, v[j].re) - matmul(hk.im, v[j].im);
      const Tensor gi = matmul(hk.re, v[j].im) + matmul(hk.im, v[j].re);
      const Tensor qr = matmul(gr, transpose(gr)) + matmul(gi, transpose(gi));
      const Tensor qi = matmul(gi, transpose(gr)) - matmul(gr, transpose(gi));
      tr = tr + qr;
      ti = ti + qi;
      if (j != k) {
        nr_re = nr_re + qr;
        nr_im = nr_im + qi;
      }
    }
    auto rep = [](const Tensor& re, const Tensor& im) {
      return concat_rows({concat_cols({re, -im}), concat_cols({im, re})});
    };
    const Tensor rk = scale * (logdet_spd(rep(tr, ti)) - logdet_spd(rep(nr_re, nr_im)));
    rate = k == 0 ? rk : rate + rk;
  }
  return rate;
}

/// dR/dRe(V_k) + j dR/dIm(V_k) for every user, read back from the tape.
inline PrecoderSet se_gradient(const ChannelSet& h, const PrecoderSet& v, double noise_power) {
  detail::check_system(h, v);
  Tape tape;
  std::vector<SplitMatrix> vars;
  for (const auto& m : v) {
    const SplitMatrix s = split(m);
    vars.push_back({tape.variable(s.re), tape.variable(s.im)});
  }
  const Gradients g = tape.backward(sum_se_tensor(h, vars, noise_power));
  PrecoderSet out;
  for (const auto& s : vars) out.push_back(join(g.of(s.re), g.of(s.im)));
  return out;
}

// ---------------------------------------------------------------------------
// Reference precoders
// ---------------------------------------------------------------------------

enum class ReferenceKind { mrt, zf };

/// Equal power P/K per user. MRT uses V_k = H_k^H; ZF uses the user's block of
/// the right pseudo-inverse of the stacked channel, so it needs M >= K*N_r.
inline PrecoderSet reference_precoders(ReferenceKind kind, const ChannelSet& h, double power_budget) {
  if (h.empty()) throw ShapeError("reference_precoders: no users");
  if (!(power_budget > 0)) throw std::invalid_argument("reference_precoders: budget must be positive");
  const double per_user = power_budget / static_cast<double>(h.size());
  PrecoderSet v;
  if (kind == ReferenceKind::mrt) {
    for (const auto& hk : h) v.push_back(hk.adjoint());
  } else {
    Eigen::Index rows = 0;
    for (const auto& hk : h) rows += hk.rows();
    const Eigen::Index m = h[0].cols();
    if (m < rows) throw std::invalid_argument("zf: needs M >= total receive antennas");
    Eigen::MatrixXcd stacked(rows, m);
    Eigen::Index r = 0;
    for (const auto& hk : h) {
      stacked.middleRows(r, hk.rows()) = hk;
      r += hk.rows();
    }
    const Eigen::MatrixXcd gram = stacked * stacked.adjoint();
    const Eigen::MatrixXcd pinv = stacked.adjoint() * gram.ldlt().solve(Eigen::MatrixXcd::Identity(rows, rows));
    r = 0;
    for (const auto& hk : h) {
      v.push_back(pinv.middleCols(r, hk.rows()));
      r += hk.rows();
    }
  }
  for (auto& vk : v) {
    const double n = vk.squaredNorm();
    vk = n > 0 ? (std::sqrt(per_user / n) * vk).eval() : vk;
  }
  return v;
}

// ---------------------------------------------------------------------------
// WMMSE
// ---------------------------------------------------------------------------

struct WmmseOptions {
  std::size_t max_iters = 200;
  double tol = 1e-6;  // absolute sum-SE improvement
  bool multi_start = true;
};

struct WmmseResult {
  PrecoderSet v;
  std::vector<double> objective;  // sum SE after initialization and each iteration
  std::size_t iterations = 0;
};

namespace detail {

/// V_k = (A + mu I)^+ B_k with the smallest mu >= 0 meeting the power budget.
inline PrecoderSet wmmse_precoders(const Eigen::MatrixXcd& a, const std::vector<Eigen::MatrixXcd>& b,
                                   double power_budget) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(a);
  if (eig.info() != Eigen::Success) throw std::runtime_error("wmmse: eigendecomposition failed");
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXcd& d = eig.eigenvectors();
  std::vector<Eigen::MatrixXcd> proj;
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(lam.size());
  for (const auto& bk : b) {
    proj.push_back(d.adjoint() * bk);
    phi += proj.back().rowwise().squaredNorm();
  }
  // Directions with (numerically) zero eigenvalue carry no part of B and are
  // dropped, which is the pseudo-inverse at mu = 0.
  const double floor = 1e-12 * std::max(lam.maxCoeff(), 1e-300);
  auto power = [&](double mu) {
    double p = 0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      const double den = lam(i) + mu;
      if (mu == 0 && lam(i) <= floor) continue;
      p += phi(i) / (den * den);
    }
    return p;
  };
  double mu = 0;
  if (power(0) > power_budget) {
    double lo = 0, hi = 1e-6 * std::max(1.0, lam.maxCoeff());
    std::size_t expansions = 0;
    while (power(hi) > power_budget) {
      lo = hi;
      hi *= 2;
      if (++expansions > 2000 || !std::isfinite(hi)) {
        throw std::runtime_error("wmmse: bisection bracket expansion failed");
      }
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (power(mid) > power_budget ? lo : hi) = mid;
    }
    mu = hi;
  }
  PrecoderSet v;
  for (const auto& pk : proj) {
    Eigen::MatrixXcd scaled = pk;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      const double den = lam(i) + mu;
      scaled.row(i) *= (mu == 0 && lam(i) <= floor) ? 0.0 : 1.0 / den;
    }
    v.push_back(d * scaled);
  }
  return v;
}

/// The alternating U, W, V updates from a feasible starting point.
inline WmmseResult wmmse_iterate(const ChannelSet& h, PrecoderSet start, double power_budget, double noise_power,
                                 const WmmseOptions& opt) {
  WmmseResult res;
  res.v = std::move(start);
  check_system(h, res.v);
  res.objective.push_back(sum_se(h, res.v, noise_power));
  const Eigen::Index m = h[0].cols();
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(m, m);
    std::vector<Eigen::MatrixXcd> b;
    for (std::size_t k = 0; k < h.size(); ++k) {
      const auto nr = h[k].rows();
      Eigen::MatrixXcd cov = noise_power * Eigen::MatrixXcd::Identity(nr, nr);
      for (const auto& vj : res.v) {
        const Eigen::MatrixXcd g = h[k] * vj;
        cov += g * g.adjoint();
      }
      const Eigen::MatrixXcd hv = h[k] * res.v[k];
      const Eigen::MatrixXcd u = cov.ldlt().solve(hv);
      const auto d = hv.cols();
      const Eigen::MatrixXcd e = Eigen::MatrixXcd::Identity(d, d) - u.adjoint() * hv;
      Eigen::MatrixXcd w = e.ldlt().solve(Eigen::MatrixXcd::Identity(d, d));
      w = (0.5 * (w + w.adjoint())).eval();
      const Eigen::MatrixXcd hu = h[k].adjoint() * u;
      a += hu * w * hu.adjoint();
      b.push_back(hu * w);
    }
    a = (0.5 * (a + a.adjoint())).eval();
    res.v = wmmse_precoders(a, b, power_budget);
    res.objective.push_back(sum_se(h, res.v, noise_power));
    res.iterations = it + 1;
    if (std::abs(res.objective.back() - res.objective[res.objective.size() - 2]) < opt.tol) break;
  }
  return res;
}

}  // namespace detail

/// Weighted-MMSE alternating optimization of the (unit-weight) sum rate.
/// Starts from `init` when given. A cold start runs from full-power MRT and,
/// with `multi_start`, also from each single-user matched filter (the other
/// users stay switched off under the updates), keeping the best end point.
/// `objective` traces the winning start; `iterations` counts all of them.
inline WmmseResult wmmse_solve(const ChannelSet& h, double power_budget, double noise_power, const WmmseOptions& opt = {},
                               const PrecoderSet* init = nullptr) {
  if (!(noise_power > 0)) throw std::invalid_argument("wmmse: noise power must be positive");
  if (init) return detail::wmmse_iterate(h, power_project(*init, power_budget), power_budget, noise_power, opt);
  const PrecoderSet mrt = reference_precoders(ReferenceKind::mrt, h, power_budget);
  WmmseResult best = detail::wmmse_iterate(h, mrt, power_budget, noise_power, opt);
  if (!opt.multi_start || h.size() < 2) return best;
  std::size_t total = best.iterations;
  for (std::size_t k = 0; k < h.size(); ++k) {
    PrecoderSet single;
    for (std::size_t j = 0; j < h.size(); ++j) {
      single.push_back(j == k ? (mrt[j] * std::sqrt(double(h.size()))).eval()
                              : Eigen::MatrixXcd::Zero(mrt[j].rows(), mrt[j].cols()).eval());
    }
    WmmseResult r = detail::wmmse_iterate(h, std::move(single), power_budget, noise_power, opt);
    total += r.iterations;
    if (r.objective.back() > best.objective.back()) best = std::move(r);
  }
  best.iterations = total;
  return best;
}

// ---------------------------------------------------------------------------
// GLNN: gradient-fed NCP online optimizer
// ---------------------------------------------------------------------------

struct GlnnConfig {
  CellKind cell = CellKind::ltc;
  std::size_t units = 30;
  std::size_t sensory = 64;
  double lr = 0.003;
  double dt = 1.0;
  bool wmmse_warm_start = true;
  WmmseOptions wmmse;
  std::optional<WiringConfig> wiring;  // unset: default NCP split; the seed is always derived
};

struct SeTrace {
  std::vector<std::string> schemes;
  std::vector<std::vector<double>> se;  // [scheme][step]
  std::vector<std::size_t> phase;       // per step
  std::vector<double> max_power;        // per scheme, largest total power seen
  std::size_t wmmse_iterations = 0;     // summed over steps

  std::size_t steps() const { return phase.size(); }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < schemes.size(); ++i) {
      if (schemes[i] == name) return i;
    }
    throw std::out_of_range("SeTrace: unknown scheme " + std::string(name));
  }

  double mean(std::string_view name, std::size_t begin, std::size_t end) const {
    const auto& s = se[index_of(name)];
    if (begin >= end || end > s.size()) throw std::out_of_range("SeTrace::mean: bad range");
    double acc = 0;
    for (std::size_t t = begin; t < end; ++t) acc += s[t];
    return acc / static_cast<double>(end - begin);
  }
};

/// The online learner: NCP cell, fixed random sensory projection and the
/// current precoders.
class GlnnOptimizer {
 public:
  GlnnOptimizer(const BeamformingScenario& sc, const GlnnConfig& cfg, std::uint64_t seed)
      : sc_(sc), cfg_(cfg), opt_(AdamConfig{.lr = cfg.lr}) {
    const std::size_t k = sc.n_users, m = sc.n_bs_antennas, d = streams();
    features_ = 2 * 2 * m * d * k;
    Rng rng(mix_seed(seed, 11));
    projection_ = normal_tensor({features_, cfg.sensory}, 1.0 / std::sqrt(double(features_)), rng);
    Rng cell_rng(mix_seed(seed, 12));
    model_ = CellModel::make(cfg.cell, cfg.units, cfg.sensory, k, cell_rng);
    if (cfg.cell != CellKind::gru) {
      WiringConfig wc = cfg.wiring ? *cfg.wiring : default_wiring(cfg.sensory, k, 0, cfg.units);
      wc.seed = mix_seed(seed, 13);
      if (wc.n_sensory != cfg.sensory || wc.n_motor != k || wc.n_units() != cfg.units) {
        throw std::invalid_argument("glnn: wiring must have `sensory` inputs, one motor per user and `units` units");
      }
      wiring_ = build_wiring(wc);
      std::visit(
          [&](auto& p) {
            if constexpr (!std::is_same_v<std::decay_t<decltype(p)>, GruCellParams>) p = apply_masks(*wiring_, p);
          },
          model_.params);
    }
    state_ = Tensor::zeros({1, cfg.units});
    // Start from an equal-power random-phase precoder.
    Rng vrng(mix_seed(seed, 14));
    for (std::size_t u = 0; u < k; ++u) {
      Eigen::MatrixXcd vk(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
      for (Eigen::Index i = 0; i < vk.size(); ++i) {
        vk.data()[i] = std::polar(1.0, uniform(vrng, 0.0, 2 * std::numbers::pi));
      }
      v_.push_back(vk);
    }
    for (auto& vk : v_) vk *= std::sqrt(sc.power_budget / total_power(v_));
  }

  std::size_t streams() const { return sc_.n_user_antennas; }
  const PrecoderSet& precoders() const { return v_; }
  const CellModel& model() const { return model_; }
  const std::optional<Wiring>& wiring() const { return wiring_; }
  const Tensor& projection() const { return projection_; }

  /// One interval: gradient features in, precoder increment out, one Adam step
  /// on -R. Returns the SE of the updated precoders on `h`.
  double step(const ChannelSet& h) {
    const PrecoderSet grad = se_gradient(h, v_, sc_.noise_power);
    double gnorm = 0;
    for (const auto& g : grad) gnorm += g.squaredNorm();
    gnorm = std::sqrt(gnorm);
    const Tensor x = features(grad, gnorm);

    Tape tape;
    const CellModel bound = bind_params(tape, model_);
    CellRunner runner(bound);
    const Tensor s = matmul(x, projection_);
    const Tensor next_state = runner.step(state_, s, cfg_.dt);
    const Tensor out = runner.readout(next_state);  // 1 x K step sizes

    std::vector<SplitMatrix> v;
    Tensor power = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < v_.size(); ++k) {
      const SplitMatrix cur = split(v_[k]);
      const SplitMatrix dir = split(grad[k] / (1.0 + gnorm));
      const Tensor sk = slice_cols(out, k, k + 1);
      SplitMatrix nk{cur.re + sk * dir.re, cur.im + sk * dir.im};
      power = power + sum(square(nk.re)) + sum(square(nk.im));
      v.push_back(std::move(nk));
    }
    if (power.item() > sc_.power_budget) {
      const Tensor scale = sqrt(Tensor::scalar(sc_.power_budget) / power);
      for (auto& vk : v) vk = {scale * vk.re, scale * vk.im};
    }
    const Tensor rate = sum_se_tensor(h, v, sc_.noise_power);
    const Tensor loss = -rate;
    const double se = rate.item();

    auto grads = param_grads(tape.backward(loss), bound);
    auto params = param_list(model_);
    adam_step(params, grads, opt_);
    set_params(model_, params);
    model_.constrain();

    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] = join(v[k].re, v[k].im);
    state_ = next_state.detach();
    return se;
  }

 private:
  Tensor features(const PrecoderSet& grad, double gnorm) const {
    std::vector<double> f;
    f.reserve(features_);
    const double vs = 1.0 / std::sqrt(sc_.power_budget);
    for (const auto* set : {&grad, &v_}) {
      const double s = set == &grad ? 1.0 / (1.0 + gnorm) : vs;
      for (const auto& m : *set) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          for (Eigen::Index c = 0; c < m.cols(); ++c) {
            f.push_back(s * m(r, c).real());
            f.push_back(s * m(r, c).imag());
          }
        }
      }
    }
    return Tensor({1, features_}, std::move(f));
  }

  BeamformingScenario sc_;
  GlnnConfig cfg_;
  std::size_t features_ = 0;
  Tensor projection_;
  CellModel model_;
  std::optional<Wiring> wiring_;
  AdamState opt_;
  Tensor state_;
  PrecoderSet v_;
};

/// GLNN plus per-step WMMSE, MRT and ZF over the scenario's velocity schedule.
inline SeTrace run_glnn_experiment(const BeamformingScenario& sc, const GlnnConfig& cfg, std::uint64_t seed) {
  sc.validate();
  BeamformingChannel channel(sc);
  GlnnOptimizer glnn(sc, cfg, seed);
  SeTrace tr;
  tr.schemes = {"glnn", "wmmse", "mrt", "zf"};
  tr.se.assign(tr.schemes.size(), {});
  tr.max_power.assign(tr.schemes.size(), 0.0);
  PrecoderSet wmmse_prev;
  for (std::size_t t = 0; !channel.done(); ++t, channel.advance()) {
    const ChannelSet h = channel.current();
    tr.phase.push_back(sc.phase_of(t));
    const double glnn_se = glnn.step(h);
    if (!std::isfinite(glnn_se)) throw NumericError("run_glnn_experiment: non-finite SE at step " + std::to_string(t));
    const WmmseResult w = wmmse_solve(h, sc.power_budget, sc.noise_power, cfg.wmmse,
                                      cfg.wmmse_warm_start && !wmmse_prev.empty() ? &wmmse_prev : nullptr);
    wmmse_prev = w.v;
    tr.wmmse_iterations += w.iterations;
    const PrecoderSet mrt = reference_precoders(ReferenceKind::mrt, h, sc.power_budget);
    const PrecoderSet zf = reference_precoders(ReferenceKind::zf, h, sc.power_budget);
    const PrecoderSet* sets[] = {&glnn.precoders(), &w.v, &mrt, &zf};
    const double values[] = {glnn_se, w.objective.back(), sum_se(h, mrt, sc.noise_power),
                             sum_se(h, zf, sc.noise_power)};
    for (std::size_t i = 0; i < tr.schemes.size(); ++i) {
      tr.se[i].push_back(values[i]);
      tr.max_power[i] = std::max(tr.max_power[i], total_power(*sets[i]));
    }
  }
  return tr;
}

}  // namespace lnn
