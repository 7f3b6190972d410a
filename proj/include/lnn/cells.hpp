#pragma once

// Liquid time-constant (LTC), closed-form continuous-time (CfC) and GRU cells.
//
// States and inputs are batched row-wise: h is B x n_units, x is B x n_inputs.
// Weight matrices are stored (to x from). All stepping goes through the tensor
// ops, so the same code serves plain inference and taped training.
//
// LTC dynamics, per neuron:
//   dh/dt = -(1/tau + f) * h + f * A,   f = sigmoid(W_rec h + W_in x + b)
// The production solver is the semi-implicit ("fused") update
//   h <- (h + dt f A) / (1 + dt (1/tau + f))
// applied `unfolds` times with dt/unfolds each. Input is held constant over a
// step.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lnn/random.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

namespace detail {

inline Tensor effective(const Tensor& w, const std::optional<Tensor>& support) {
  return support ? mul(w, *support) : w;
}

inline void expect_shape(const Tensor& t, const Shape& s, std::string_view name) {
  if (t.shape() != s) {
    throw ShapeError(std::string(name) + " has shape " + to_string(t.shape()) + ", expected " +
                     to_string(s));
  }
}

inline Tensor glorot_like(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return uniform_tensor({rows, cols}, -s, s, rng);
}

inline void check_dt(double dt) {
  if (!(dt >= 0.0)) throw std::invalid_argument("step interval dt must be >= 0");
}

/// Cached ones(B x 1) broadcasts of 1 x n rows.
class RowBroadcast {
 public:
  explicit RowBroadcast(Tensor row) : row_(std::move(row)) {}
  const Tensor& operator()(std::size_t batch) const {
    if (!cached_ || cached_rows_ != batch) {
      cached_ = broadcast_rows(row_, batch);
      cached_rows_ = batch;
    }
    return *cached_;
  }
  const Tensor& row() const { return row_; }

 private:
  Tensor row_;
  mutable std::optional<Tensor> cached_;
  mutable std::size_t cached_rows_ = 0;
};

}  // namespace detail

struct LtcCellParams {
  std::size_t n_units = 0;
  std::size_t n_inputs = 0;
  std::size_t n_outputs = 0;
  Tensor tau;       // 1 x n, seconds, > 0
  Tensor reversal;  // 1 x n
  Tensor w_rec;     // n x n
  Tensor w_in;      // n x n_inputs
  Tensor bias;      // 1 x n
  Tensor w_out;     // n_outputs x n
  Tensor b_out;     // 1 x n_outputs
  // 0/1 support masks (NCP wiring); masked weights stay exactly zero.
  std::optional<Tensor> rec_support;
  std::optional<Tensor> in_support;
  std::optional<Tensor> out_support;

  static constexpr double kMinTau = 1e-3;

  static LtcCellParams init(std::size_t units, std::size_t inputs, std::size_t outputs, Rng& rng) {
    LtcCellParams p;
    p.n_units = units;
    p.n_inputs = inputs;
    p.n_outputs = outputs;
    p.tau = uniform_tensor({1, units}, 0.5, 2.0, rng);
    p.reversal = uniform_tensor({1, units}, -1.0, 1.0, rng);
    p.w_rec = detail::glorot_like(units, units, units + inputs, rng);
    p.w_in = detail::glorot_like(units, inputs, units + inputs, rng);
    p.bias = Tensor::zeros({1, units});
    p.w_out = detail::glorot_like(outputs, units, units, rng);
    p.b_out = Tensor::zeros({1, outputs});
    return p;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("tau", tau);
    f("reversal", reversal);
    f("w_rec", w_rec);
    f("w_in", w_in);
    f("bias", bias);
    f("w_out", w_out);
    f("b_out", b_out);
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<LtcCellParams*>(this)->for_each_param(
        [&](std::string_view name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  void validate() const {
    detail::expect_shape(tau, {1, n_units}, "tau");
    detail::expect_shape(reversal, {1, n_units}, "reversal");
    detail::expect_shape(w_rec, {n_units, n_units}, "w_rec");
    detail::expect_shape(w_in, {n_units, n_inputs}, "w_in");
    detail::expect_shape(bias, {1, n_units}, "bias");
    detail::expect_shape(w_out, {n_outputs, n_units}, "w_out");
    detail::expect_shape(b_out, {1, n_outputs}, "b_out");
    for (double v : tau.vec()) {
      if (!(v > 0.0)) throw std::invalid_argument("tau must be strictly positive");
    }
  }

  /// Re-imposes tau > 0 after an optimizer update.
  void constrain() {
    std::vector<double> t = tau.vec();
    for (auto& v : t) v = std::max(v, kMinTau);
    tau = Tensor(tau.shape(), std::move(t));
  }
};

/// Gated closed-form cell: a time gate from branch f blends candidates g and h.
struct CfcCellParams {
  std::size_t n_units = 0;
  std::size_t n_inputs = 0;
  std::size_t n_outputs = 0;
  Tensor f_in, f_rec, f_bias;
  Tensor g_in, g_rec, g_bias;
  Tensor h_in, h_rec, h_bias;
  Tensor w_out, b_out;
  std::optional<Tensor> rec_support;
  std::optional<Tensor> in_support;
  std::optional<Tensor> out_support;

  static CfcCellParams init(std::size_t units, std::size_t inputs, std::size_t outputs, Rng& rng) {
    CfcCellParams p;
    p.n_units = units;
    p.n_inputs = inputs;
    p.n_outputs = outputs;
    const std::size_t fan = units + inputs;
    p.f_in = detail::glorot_like(units, inputs, fan, rng);
    p.f_rec = detail::glorot_like(units, units, fan, rng);
    p.f_bias = Tensor::zeros({1, units});
    p.g_in = detail::glorot_like(units, inputs, fan, rng);
    p.g_rec = detail::glorot_like(units, units, fan, rng);
    p.g_bias = Tensor::zeros({1, units});
    p.h_in = detail::glorot_like(units, inputs, fan, rng);
    p.h_rec = detail::glorot_like(units, units, fan, rng);
    p.h_bias = Tensor::zeros({1, units});
    p.w_out = detail::glorot_like(outputs, units, units, rng);
    p.b_out = Tensor::zeros({1, outputs});
    return p;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("f_in", f_in);
    f("f_rec", f_rec);
    f("f_bias", f_bias);
    f("g_in", g_in);
    f("g_rec", g_rec);
    f("g_bias", g_bias);
    f("h_in", h_in);
    f("h_rec", h_rec);
    f("h_bias", h_bias);
    f("w_out", w_out);
    f("b_out", b_out);
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<CfcCellParams*>(this)->for_each_param(
        [&](std::string_view name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  void validate() const {
    for (const Tensor* t : {&f_in, &g_in, &h_in}) detail::expect_shape(*t, {n_units, n_inputs}, "cfc input weights");
    for (const Tensor* t : {&f_rec, &g_rec, &h_rec}) detail::expect_shape(*t, {n_units, n_units}, "cfc recurrent weights");
    for (const Tensor* t : {&f_bias, &g_bias, &h_bias}) detail::expect_shape(*t, {1, n_units}, "cfc bias");
    detail::expect_shape(w_out, {n_outputs, n_units}, "w_out");
    detail::expect_shape(b_out, {1, n_outputs}, "b_out");
  }

  void constrain() {}
};

struct GruCellParams {
  std::size_t n_units = 0;
  std::size_t n_inputs = 0;
  std::size_t n_outputs = 0;
  Tensor z_in, z_rec, z_bias;  // update gate
  Tensor r_in, r_rec, r_bias;  // reset gate
  Tensor c_in, c_rec, c_bias;  // candidate
  Tensor w_out, b_out;

  static GruCellParams init(std::size_t units, std::size_t inputs, std::size_t outputs, Rng& rng) {
    GruCellParams p;
    p.n_units = units;
    p.n_inputs = inputs;
    p.n_outputs = outputs;
    const std::size_t fan = units + inputs;
    p.z_in = detail::glorot_like(units, inputs, fan, rng);
    p.z_rec = detail::glorot_like(units, units, fan, rng);
    p.z_bias = Tensor::zeros({1, units});
    p.r_in = detail::glorot_like(units, inputs, fan, rng);
    p.r_rec = detail::glorot_like(units, units, fan, rng);
    p.r_bias = Tensor::zeros({1, units});
    p.c_in = detail::glorot_like(units, inputs, fan, rng);
    p.c_rec = detail::glorot_like(units, units, fan, rng);
    p.c_bias = Tensor::zeros({1, units});
    p.w_out = detail::glorot_like(outputs, units, units, rng);
    p.b_out = Tensor::zeros({1, outputs});
    return p;
  }

  /// All weights and biases zero.
  static GruCellParams zeros(std::size_t units, std::size_t inputs, std::size_t outputs) {
    GruCellParams p;
    p.n_units = units;
    p.n_inputs = inputs;
    p.n_outputs = outputs;
    p.for_each_param([&](std::string_view name, Tensor& t) {
      const std::string n(name);
      if (n == "w_out") t = Tensor::zeros({outputs, units});
      else if (n == "b_out") t = Tensor::zeros({1, outputs});
      else if (n.ends_with("_in")) t = Tensor::zeros({units, inputs});
      else if (n.ends_with("_rec")) t = Tensor::zeros({units, units});
      else t = Tensor::zeros({1, units});
    });
    return p;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("z_in", z_in);
    f("z_rec", z_rec);
    f("z_bias", z_bias);
    f("r_in", r_in);
    f("r_rec", r_rec);
    f("r_bias", r_bias);
    f("c_in", c_in);
    f("c_rec", c_rec);
    f("c_bias", c_bias);
    f("w_out", w_out);
    f("b_out", b_out);
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<GruCellParams*>(this)->for_each_param(
        [&](std::string_view name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  void validate() const {
    for (const Tensor* t : {&z_in, &r_in, &c_in}) detail::expect_shape(*t, {n_units, n_inputs}, "gru input weights");
    for (const Tensor* t : {&z_rec, &r_rec, &c_rec}) detail::expect_shape(*t, {n_units, n_units}, "gru recurrent weights");
    for (const Tensor* t : {&z_bias, &r_bias, &c_bias}) detail::expect_shape(*t, {1, n_units}, "gru bias");
    detail::expect_shape(w_out, {n_outputs, n_units}, "w_out");
    detail::expect_shape(b_out, {1, n_outputs}, "b_out");
  }

  void constrain() {}
};

// ---------------------------------------------------------------------------
// Parameter plumbing shared by every params struct
// ---------------------------------------------------------------------------

template <class P>
std::vector<Tensor> param_list(const P& p) {
  std::vector<Tensor> out;
  p.for_each_param([&](std::string_view, const Tensor& t) { out.push_back(t); });
  return out;
}

template <class P>
std::vector<std::string> param_names(const P& p) {
  std::vector<std::string> out;
  p.for_each_param([&](std::string_view n, const Tensor&) { out.emplace_back(n); });
  return out;
}

template <class P>
void set_params(P& p, std::span<const Tensor> values) {
  std::size_t i = 0;
  p.for_each_param([&](std::string_view name, Tensor& t) {
    if (i >= values.size()) throw ShapeError("set_params: too few tensors");
    if (values[i].shape() != t.shape()) {
      throw ShapeError("set_params: shape mismatch for " + std::string(name));
    }
    t = values[i++];
  });
  if (i != values.size()) throw ShapeError("set_params: too many tensors");
}

/// Copy of `p` whose parameters are variables on `tape`.
template <class P>
P bind_params(Tape& tape, const P& p) {
  P bound = p;
  bound.for_each_param([&](std::string_view, Tensor& t) { t = tape.variable(t); });
  return bound;
}

template <class P>
std::vector<Tensor> param_grads(const Gradients& g, const P& bound) {
  std::vector<Tensor> out;
  bound.for_each_param([&](std::string_view, const Tensor& t) { out.push_back(g.of(t)); });
  return out;
}

// ---------------------------------------------------------------------------
// Kernels: effective (masked, transposed) weights prepared once per forward
// ---------------------------------------------------------------------------

namespace detail {

inline void expect_batch(const Tensor& h, const Tensor& x, std::size_t units, std::size_t inputs) {
  if (h.rank() != 2 || h.cols() != units) {
    throw ShapeError("hidden state must be B x " + std::to_string(units) + ", got " + to_string(h.shape()));
  }
  if (x.rank() != 2 || x.cols() != inputs || x.rows() != h.rows()) {
    throw ShapeError("input must be " + std::to_string(h.rows()) + " x " + std::to_string(inputs) +
                     ", got " + to_string(x.shape()));
  }
}

struct Affine {
  Tensor w_rec_t;  // n x n (from x to)
  Tensor w_in_t;   // n_in x n
  RowBroadcast bias;

  Affine(const Tensor& w_rec, const Tensor& w_in, const Tensor& b, const std::optional<Tensor>& rec_s,
         const std::optional<Tensor>& in_s)
      : w_rec_t(transpose(effective(w_rec, rec_s))),
        w_in_t(transpose(effective(w_in, in_s))),
        bias(b) {}

  Tensor operator()(const Tensor& h, const Tensor& x) const {
    return matmul(h, w_rec_t) + matmul(x, w_in_t) + bias(h.rows());
  }

  /// Input and bias part, constant across the unfolds of one step.
  Tensor input(const Tensor& x) const { return matmul(x, w_in_t) + bias(x.rows()); }
  Tensor recurrent(const Tensor& h, const Tensor& input_part) const { return matmul(h, w_rec_t) + input_part; }
};

struct Readout {
  Tensor w_t;
  RowBroadcast b;
  Readout(const Tensor& w, const Tensor& bias, const std::optional<Tensor>& support)
      : w_t(transpose(effective(w, support))), b(bias) {}
  Tensor operator()(const Tensor& h) const { return matmul(h, w_t) + b(h.rows()); }
};

}  // namespace detail

class LtcKernel {
 public:
  explicit LtcKernel(const LtcCellParams& p)
      : p_(&p),
        affine_(p.w_rec, p.w_in, p.bias, p.rec_support, p.in_support),
        inv_tau_(div(Tensor::ones({1, p.n_units}), p.tau)),
        reversal_(p.reversal),
        readout_(p.w_out, p.b_out, p.out_support) {
    p.validate();
  }

  Tensor gate(const Tensor& h, const Tensor& x) const {
    detail::expect_batch(h, x, p_->n_units, p_->n_inputs);
    return sigmoid(affine_(h, x));
  }

  Tensor derivative(const Tensor& h, const Tensor& x) const {
    const Tensor f = gate(h, x);
    const std::size_t b = h.rows();
    return f * reversal_(b) - (inv_tau_(b) + f) * h;
  }

  Tensor fused_step(const Tensor& h, const Tensor& x, double dt, std::size_t unfolds) const {
    detail::check_dt(dt);
    if (unfolds == 0) throw std::invalid_argument("unfolds must be >= 1");
    detail::expect_batch(h, x, p_->n_units, p_->n_inputs);
    const double sub = dt / static_cast<double>(unfolds);
    const std::size_t b = h.rows();
    const Tensor drive = affine_.input(x);
    const Tensor pull = sub * reversal_(b);
    const Tensor leak = 1.0 + sub * inv_tau_(b);
    Tensor state = h;
    for (std::size_t u = 0; u < unfolds; ++u) {
      const Tensor f = sigmoid(affine_.recurrent(state, drive));
      state = (state + f * pull) / (leak + sub * f);
    }
    return state;
  }

  Tensor rk4_step(const Tensor& h, const Tensor& x, double dt) const {
    detail::check_dt(dt);
    const Tensor k1 = derivative(h, x);
    const Tensor k2 = derivative(h + (0.5 * dt) * k1, x);
    const Tensor k3 = derivative(h + (0.5 * dt) * k2, x);
    const Tensor k4 = derivative(h + dt * k3, x);
    return h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  Tensor readout(const Tensor& h) const { return readout_(h); }

 private:
  const LtcCellParams* p_;
  detail::Affine affine_;
  detail::RowBroadcast inv_tau_;
  detail::RowBroadcast reversal_;
  detail::Readout readout_;
};

class CfcKernel {
 public:
  explicit CfcKernel(const CfcCellParams& p)
      : p_(&p),
        f_(p.f_rec, p.f_in, p.f_bias, p.rec_support, p.in_support),
        g_(p.g_rec, p.g_in, p.g_bias, p.rec_support, p.in_support),
        h_(p.h_rec, p.h_in, p.h_bias, p.rec_support, p.in_support),
        readout_(p.w_out, p.b_out, p.out_support) {
    p.validate();
  }

  struct Branches {
    Tensor f, g, candidate;
  };

  Branches branches(const Tensor& h, const Tensor& x) const {
    detail::expect_batch(h, x, p_->n_units, p_->n_inputs);
    return {f_(h, x), tanh(g_(h, x)), tanh(h_(h, x))};
  }

  /// h' = sigma(-f dt) * g + (1 - sigma(-f dt)) * candidate. No solver.
  static Tensor blend(const Branches& br, double dt) {
    const Tensor gate = sigmoid((-dt) * br.f);
    return gate * br.g + (1.0 - gate) * br.candidate;
  }

  Tensor step(const Tensor& h, const Tensor& x, double dt) const {
    detail::check_dt(dt);
    return blend(branches(h, x), dt);
  }

  Tensor readout(const Tensor& h) const { return readout_(h); }

 private:
  const CfcCellParams* p_;
  detail::Affine f_, g_, h_;
  detail::Readout readout_;
};

class GruKernel {
 public:
  explicit GruKernel(const GruCellParams& p)
      : p_(&p),
        z_rec_t_(transpose(p.z_rec)),
        z_in_t_(transpose(p.z_in)),
        r_rec_t_(transpose(p.r_rec)),
        r_in_t_(transpose(p.r_in)),
        c_rec_t_(transpose(p.c_rec)),
        c_in_t_(transpose(p.c_in)),
        z_b_(p.z_bias),
        r_b_(p.r_bias),
        c_b_(p.c_bias),
        readout_(p.w_out, p.b_out, std::nullopt) {
    p.validate();
  }

  Tensor step(const Tensor& h, const Tensor& x) const {
    detail::expect_batch(h, x, p_->n_units, p_->n_inputs);
    const std::size_t b = h.rows();
    const Tensor z = sigmoid(matmul(h, z_rec_t_) + matmul(x, z_in_t_) + z_b_(b));
    const Tensor r = sigmoid(matmul(h, r_rec_t_) + matmul(x, r_in_t_) + r_b_(b));
    const Tensor c = tanh(matmul(r * h, c_rec_t_) + matmul(x, c_in_t_) + c_b_(b));
    return z * h + (1.0 - z) * c;
  }

  Tensor readout(const Tensor& h) const { return readout_(h); }

 private:
  const GruCellParams* p_;
  Tensor z_rec_t_, z_in_t_, r_rec_t_, r_in_t_, c_rec_t_, c_in_t_;
  detail::RowBroadcast z_b_, r_b_, c_b_;
  detail::Readout readout_;
};

// ---------------------------------------------------------------------------
// Single-step entry points
// ---------------------------------------------------------------------------

inline Tensor ltc_derivative(const Tensor& h, const Tensor& x, const LtcCellParams& p) {
  return LtcKernel(p).derivative(h, x);
}

inline Tensor ltc_fused_step(const Tensor& h, const Tensor& x, double dt, const LtcCellParams& p,
                             std::size_t unfolds = 6) {
  return LtcKernel(p).fused_step(h, x, dt, unfolds);
}

inline Tensor ltc_rk4_step(const Tensor& h, const Tensor& x, double dt, const LtcCellParams& p) {
  return LtcKernel(p).rk4_step(h, x, dt);
}

inline Tensor cfc_step(const Tensor& h, const Tensor& x, double dt, const CfcCellParams& p) {
  return CfcKernel(p).step(h, x, dt);
}

inline Tensor gru_step(const Tensor& h, const Tensor& x, const GruCellParams& p) {
  return GruKernel(p).step(h, x);
}

// ---------------------------------------------------------------------------
// Cell-kind-agnostic model and sequence unrolling
// ---------------------------------------------------------------------------

enum class CellKind { ltc, cfc, gru };
enum class OdeSolver { fused, rk4 };

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::ltc: return "ltc";
    case CellKind::cfc: return "cfc";
    case CellKind::gru: return "gru";
  }
  return "?";
}

inline CellKind parse_cell_kind(std::string_view s) {
  if (s == "ltc") return CellKind::ltc;
  if (s == "cfc") return CellKind::cfc;
  if (s == "gru") return CellKind::gru;
  throw std::invalid_argument("unknown cell kind '" + std::string(s) + "'");
}

struct CellModel {
  std::variant<LtcCellParams, CfcCellParams, GruCellParams> params;
  OdeSolver solver = OdeSolver::fused;
  std::size_t unfolds = 6;

  static CellModel make(CellKind kind, std::size_t units, std::size_t inputs, std::size_t outputs,
                        Rng& rng) {
    CellModel m;
    switch (kind) {
      case CellKind::ltc: m.params = LtcCellParams::init(units, inputs, outputs, rng); break;
      case CellKind::cfc: m.params = CfcCellParams::init(units, inputs, outputs, rng); break;
      case CellKind::gru: m.params = GruCellParams::init(units, inputs, outputs, rng); break;
    }
    return m;
  }

  CellKind kind() const { return static_cast<CellKind>(params.index()); }

  std::size_t n_units() const {
    return std::visit([](const auto& p) { return p.n_units; }, params);
  }
  std::size_t n_inputs() const {
    return std::visit([](const auto& p) { return p.n_inputs; }, params);
  }
  std::size_t n_outputs() const {
    return std::visit([](const auto& p) { return p.n_outputs; }, params);
  }

  template <class F>
  void for_each_param(F&& f) {
    std::visit([&](auto& p) { p.for_each_param(f); }, params);
  }
  template <class F>
  void for_each_param(F&& f) const {
    std::visit([&](const auto& p) { p.for_each_param(f); }, params);
  }

  void constrain() {
    std::visit([](auto& p) { p.constrain(); }, params);
  }
};

/// Steps a CellModel; prepared weights live as long as the runner.
class CellRunner {
 public:
  explicit CellRunner(const CellModel& m) : model_(&m) {
    switch (m.kind()) {
      case CellKind::ltc: kernel_.emplace<LtcKernel>(std::get<LtcCellParams>(m.params)); break;
      case CellKind::cfc: kernel_.emplace<CfcKernel>(std::get<CfcCellParams>(m.params)); break;
      case CellKind::gru: kernel_.emplace<GruKernel>(std::get<GruCellParams>(m.params)); break;
    }
  }

  Tensor step(const Tensor& h, const Tensor& x, double dt) const {
    detail::check_dt(dt);
    switch (kernel_.index()) {
      case 1: {
        const auto& k = std::get<LtcKernel>(kernel_);
        return model_->solver == OdeSolver::fused ? k.fused_step(h, x, dt, model_->unfolds)
                                                  : k.rk4_step(h, x, dt);
      }
      case 2: return std::get<CfcKernel>(kernel_).step(h, x, dt);
      case 3: return std::get<GruKernel>(kernel_).step(h, x);
    }
    throw std::logic_error("CellRunner without kernel");
  }

  Tensor readout(const Tensor& h) const {
    return std::visit(
        [&](const auto& k) -> Tensor {
          if constexpr (std::is_same_v<std::decay_t<decltype(k)>, std::monostate>) {
            throw std::logic_error("CellRunner without kernel");
          } else {
            return k.readout(h);
          }
        },
        kernel_);
  }

  Tensor initial_state(std::size_t batch) const { return Tensor::zeros({batch, model_->n_units()}); }

 private:
  const CellModel* model_;
  std::variant<std::monostate, LtcKernel, CfcKernel, GruKernel> kernel_;
};

struct UnrollResult {
  std::vector<Tensor> outputs;  // readout after each step
  Tensor final_state;
};

inline UnrollResult unroll(const CellModel& model, const Tensor& h0, std::span<const Tensor> inputs,
                           std::span<const double> dts) {
  if (inputs.size() != dts.size()) throw std::invalid_argument("unroll: inputs and dts differ in length");
  CellRunner runner(model);
  UnrollResult res;
  res.final_state = h0;
  res.outputs.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    res.final_state = runner.step(res.final_state, inputs[t], dts[t]);
    res.outputs.push_back(runner.readout(res.final_state));
  }
  return res;
}

}  // namespace lnn
