#pragma once

// Four-layer neural circuit policy wiring: sensory -> inter -> command
// (recurrent) -> motor. Synapses carry polarity +1 / -1.
//
// Neuron ids are global: [sensory | inter | command | motor]. When a wiring is
// applied to a cell, the cell's units are [inter | command | motor] and its
// inputs are the sensory neurons.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnn/cells.hpp"
#include "lnn/random.hpp"

namespace lnn {

struct WiringConfig {
  std::size_t n_sensory = 64;
  std::size_t n_inter = 16;
  std::size_t n_command = 10;
  std::size_t n_motor = 4;
  std::size_t fanout_sensory = 4;
  std::size_t fanout_inter = 4;
  std::size_t fanin_motor = 4;
  std::size_t n_command_recurrent = 20;
  std::uint64_t seed = 0;

  std::size_t n_units() const { return n_inter + n_command + n_motor; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("wiring config: " + m); };
    if (!n_sensory || !n_inter || !n_command || !n_motor) fail("layer sizes must be >= 1");
    if (!fanout_sensory || !fanout_inter || !fanin_motor) fail("fanouts/fanin must be >= 1");
    if (fanout_sensory > n_inter) fail("fanout_sensory exceeds the inter layer");
    if (fanout_inter > n_command) fail("fanout_inter exceeds the command layer");
    if (fanin_motor > n_command) fail("fanin_motor exceeds the command layer");
    if (n_command_recurrent > n_command * n_command) fail("too many command recurrent synapses");
  }
};

/// The defaults for an NCP of `units` total cell units with `motors` outputs.
inline WiringConfig default_wiring(std::size_t sensory, std::size_t motors, std::uint64_t seed,
                                   std::size_t units = 30) {
  WiringConfig c;
  c.n_sensory = sensory;
  c.n_motor = motors;
  c.n_command = 10;
  if (units < motors + c.n_command + 1) throw std::invalid_argument("too few units for the requested motors");
  c.n_inter = units - motors - c.n_command;
  c.fanout_sensory = std::min<std::size_t>(4, c.n_inter);
  c.fanout_inter = std::min<std::size_t>(4, c.n_command);
  c.fanin_motor = std::min<std::size_t>(4, c.n_command);
  c.n_command_recurrent = 2 * c.n_command;
  c.seed = seed;
  return c;
}

enum class Layer { sensory, inter, command, motor };

struct Wiring {
  std::size_t n_sensory = 0, n_inter = 0, n_command = 0, n_motor = 0;
  /// adjacency[src * n + dst] in {-1, 0, +1}
  std::vector<std::int8_t> adjacency;

  Wiring() = default;
  Wiring(std::size_t s, std::size_t i, std::size_t c, std::size_t m)
      : n_sensory(s), n_inter(i), n_command(c), n_motor(m), adjacency(total() * total(), 0) {}

  std::size_t total() const { return n_sensory + n_inter + n_command + n_motor; }
  std::size_t n_units() const { return n_inter + n_command + n_motor; }

  std::size_t first(Layer l) const {
    switch (l) {
      case Layer::sensory: return 0;
      case Layer::inter: return n_sensory;
      case Layer::command: return n_sensory + n_inter;
      case Layer::motor: return n_sensory + n_inter + n_command;
    }
    return 0;
  }
  std::size_t count(Layer l) const {
    switch (l) {
      case Layer::sensory: return n_sensory;
      case Layer::inter: return n_inter;
      case Layer::command: return n_command;
      case Layer::motor: return n_motor;
    }
    return 0;
  }
  Layer layer_of(std::size_t id) const {
    if (id < first(Layer::inter)) return Layer::sensory;
    if (id < first(Layer::command)) return Layer::inter;
    if (id < first(Layer::motor)) return Layer::command;
    return Layer::motor;
  }

  std::int8_t operator()(std::size_t src, std::size_t dst) const { return adjacency[src * total() + dst]; }
  std::int8_t& operator()(std::size_t src, std::size_t dst) { return adjacency[src * total() + dst]; }

  /// Nonzero synapses from layer `from` to layer `to`.
  std::size_t synapse_count(Layer from, Layer to) const {
    std::size_t n = 0;
    for (std::size_t s = first(from); s < first(from) + count(from); ++s)
      for (std::size_t d = first(to); d < first(to) + count(to); ++d) n += (*this)(s, d) != 0;
    return n;
  }

  bool operator==(const Wiring&) const = default;
};

inline bool allowed_block(Layer from, Layer to) {
  return (from == Layer::sensory && to == Layer::inter) || (from == Layer::inter && to == Layer::command) ||
         (from == Layer::command && to == Layer::command) || (from == Layer::command && to == Layer::motor);
}

/// Deterministic in `cfg` (including its seed).
inline Wiring build_wiring(const WiringConfig& cfg) {
  cfg.validate();
  Wiring w(cfg.n_sensory, cfg.n_inter, cfg.n_command, cfg.n_motor);
  Rng rng(mix_seed(cfg.seed, 0x4e4350));
  auto polarity = [&rng]() -> std::int8_t { return (rng() & 1) ? 1 : -1; };
  auto pick = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  auto choose = [&rng](std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng() % (n - i)]);
    idx.resize(k);
    return idx;
  };

  const std::size_t s0 = w.first(Layer::sensory), i0 = w.first(Layer::inter);
  const std::size_t c0 = w.first(Layer::command), m0 = w.first(Layer::motor);

  for (std::size_t s = 0; s < cfg.n_sensory; ++s)
    for (std::size_t t : choose(cfg.n_inter, cfg.fanout_sensory)) w(s0 + s, i0 + t) = polarity();
  for (std::size_t i = 0; i < cfg.n_inter; ++i)
    for (std::size_t t : choose(cfg.n_command, cfg.fanout_inter)) w(i0 + i, c0 + t) = polarity();
  for (std::size_t e : choose(cfg.n_command * cfg.n_command, cfg.n_command_recurrent))
    w(c0 + e / cfg.n_command, c0 + e % cfg.n_command) = polarity();
  for (std::size_t m = 0; m < cfg.n_motor; ++m)
    for (std::size_t src : choose(cfg.n_command, cfg.fanin_motor)) w(c0 + src, m0 + m) = polarity();

  // Repair orphans: inter without sensory input, command without inter input,
  // command without any outgoing synapse.
  auto has_in = [&](std::size_t dst, Layer from) {
    for (std::size_t s = w.first(from); s < w.first(from) + w.count(from); ++s)
      if (w(s, dst)) return true;
    return false;
  };
  auto has_out = [&](std::size_t src) {
    for (std::size_t d = 0; d < w.total(); ++d)
      if (w(src, d)) return true;
    return false;
  };
  for (std::size_t i = 0; i < cfg.n_inter; ++i)
    if (!has_in(i0 + i, Layer::sensory)) w(s0 + pick(cfg.n_sensory), i0 + i) = polarity();
  for (std::size_t c = 0; c < cfg.n_command; ++c)
    if (!has_in(c0 + c, Layer::inter)) w(i0 + pick(cfg.n_inter), c0 + c) = polarity();
  for (std::size_t c = 0; c < cfg.n_command; ++c)
    if (!has_out(c0 + c)) w(c0 + c, m0 + pick(cfg.n_motor)) = polarity();
  return w;
}

struct WiringViolation {
  enum class Kind { block_structure, isolated, unreachable };
  Kind kind;
  std::size_t neuron;  // source neuron for block_structure
  std::string message;
};

/// Empty result means the wiring is valid.
inline std::vector<WiringViolation> validate_wiring(const Wiring& w) {
  std::vector<WiringViolation> out;
  const std::size_t n = w.total();
  if (w.adjacency.size() != n * n) {
    out.push_back({WiringViolation::Kind::block_structure, 0, "adjacency size does not match layer sizes"});
    return out;
  }
  static const char* names[] = {"sensory", "inter", "command", "motor"};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t d = 0; d < n; ++d) {
      const auto v = w(s, d);
      if (!v) continue;
      if (v != 1 && v != -1) {
        out.push_back({WiringViolation::Kind::block_structure, s, "synapse weight is not +-1"});
      } else if (!allowed_block(w.layer_of(s), w.layer_of(d))) {
        out.push_back({WiringViolation::Kind::block_structure, s,
                       std::string("synapse ") + names[static_cast<int>(w.layer_of(s))] + " " +
                           std::to_string(s) + " -> " + names[static_cast<int>(w.layer_of(d))] + " " +
                           std::to_string(d) + " outside the layer pattern"});
      }
    }
  }

  for (std::size_t id = 0; id < w.first(Layer::motor); ++id) {
    bool in = w.layer_of(id) == Layer::sensory, outgoing = false;
    for (std::size_t k = 0; k < n; ++k) {
      in = in || w(k, id) != 0;
      outgoing = outgoing || w(id, k) != 0;
    }
    if (!in || !outgoing) {
      out.push_back({WiringViolation::Kind::isolated, id,
                     std::string(names[static_cast<int>(w.layer_of(id))]) + " neuron " + std::to_string(id) +
                         (!in ? " has no incoming synapse" : " has no outgoing synapse")});
    }
  }

  std::vector<char> seen(n, 0);
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < w.n_sensory; ++s) {
    seen[s] = 1;
    queue.push_back(s);
  }
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v = 0; v < n; ++v) {
      if (w(u, v) && !seen[v]) {
        seen[v] = 1;
        queue.push_back(v);
      }
    }
  }
  for (std::size_t m = w.first(Layer::motor); m < n; ++m) {
    if (!seen[m]) {
      out.push_back({WiringViolation::Kind::unreachable, m,
                     "motor neuron " + std::to_string(m) + " is unreachable from the sensory layer"});
    }
  }
  return out;
}

/// Signed masks in cell coordinates: rec is (units x units) [to, from], in is
/// (units x sensory) [to, from].
struct CellMasks {
  Tensor rec;
  Tensor in;
  Tensor out;  // (1 x units) 1 on motor units
};

inline CellMasks cell_masks(const Wiring& w) {
  const std::size_t units = w.n_units(), s = w.n_sensory;
  std::vector<double> rec(units * units, 0.0), in(units * s, 0.0), out(units, 0.0);
  for (std::size_t to = 0; to < units; ++to) {
    const std::size_t dst = s + to;
    for (std::size_t from = 0; from < units; ++from) rec[to * units + from] = w(s + from, dst);
    for (std::size_t from = 0; from < s; ++from) in[to * s + from] = w(from, dst);
  }
  for (std::size_t m = 0; m < w.n_motor; ++m) out[units - w.n_motor + m] = 1.0;
  return {Tensor({units, units}, rec), Tensor({units, s}, in), Tensor({1, units}, out)};
}

namespace detail {

inline Tensor support_of(const Tensor& signed_mask) {
  std::vector<double> d = signed_mask.vec();
  for (auto& v : d) v = v != 0.0 ? 1.0 : 0.0;
  return Tensor(signed_mask.shape(), std::move(d));
}

inline Tensor out_support(const Tensor& motor_row, std::size_t outputs) {
  return broadcast_rows(motor_row, outputs);
}

template <class P>
void check_wiring_dims(const Wiring& w, const P& p) {
  if (p.n_units != w.n_units() || p.n_inputs != w.n_sensory) {
    throw ShapeError("apply_masks: cell has " + std::to_string(p.n_units) + " units / " +
                     std::to_string(p.n_inputs) + " inputs, wiring needs " + std::to_string(w.n_units()) +
                     " / " + std::to_string(w.n_sensory));
  }
}

}  // namespace detail

/// Multiplies recurrent and input weights by signed masks and records the 0/1
/// supports so masked entries stay zero (and gradient-free) afterwards. The
/// readout is multiplied by `masks.out` broadcast over output rows.
inline LtcCellParams apply_masks(const CellMasks& m, LtcCellParams p) {
  p.w_rec = mul(p.w_rec, m.rec);
  p.w_in = mul(p.w_in, m.in);
  p.rec_support = detail::support_of(m.rec);
  p.in_support = detail::support_of(m.in);
  p.out_support = detail::out_support(m.out, p.n_outputs);
  p.w_out = mul(p.w_out, *p.out_support);
  return p;
}

inline CfcCellParams apply_masks(const CellMasks& m, CfcCellParams p) {
  for (Tensor* t : {&p.f_rec, &p.g_rec, &p.h_rec}) *t = mul(*t, m.rec);
  for (Tensor* t : {&p.f_in, &p.g_in, &p.h_in}) *t = mul(*t, m.in);
  p.rec_support = detail::support_of(m.rec);
  p.in_support = detail::support_of(m.in);
  p.out_support = detail::out_support(m.out, p.n_outputs);
  p.w_out = mul(p.w_out, *p.out_support);
  return p;
}

/// NCP wiring over a cell whose units are [inter | command | motor]; the
/// readout sees only the motor units.
template <class P>
P apply_masks(const Wiring& w, P p) {
  detail::check_wiring_dims(w, p);
  return apply_masks(cell_masks(w), std::move(p));
}

/// Fraction of nonzero entries.
inline double density(const Tensor& t) {
  if (t.empty()) return 0.0;
  std::size_t nz = 0;
  for (double v : t.vec()) nz += v != 0.0;
  return static_cast<double>(nz) / static_cast<double>(t.size());
}

}  // namespace lnn
