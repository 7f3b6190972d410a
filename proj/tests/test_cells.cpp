#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lnn/cells.hpp"
#include "lnn/grad_check.hpp"

using namespace lnn;

namespace {

// Single-neuron LTC with a frozen gate f = sigmoid(gate_bias).
LtcCellParams frozen_ltc(double tau, double reversal, double gate_bias, std::size_t inputs = 1) {
  LtcCellParams p;
  p.n_units = 1;
  p.n_inputs = inputs;
  p.n_outputs = 1;
  p.tau = Tensor::row({tau});
  p.reversal = Tensor::row({reversal});
  p.w_rec = Tensor::zeros({1, 1});
  p.w_in = Tensor::zeros({1, inputs});
  p.bias = Tensor::row({gate_bias});
  p.w_out = Tensor::ones({1, 1});
  p.b_out = Tensor::zeros({1, 1});
  return p;
}

double inf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.vec()) m = std::max(m, std::abs(v));
  return m;
}

Tensor one(double v) { return Tensor::matrix(1, 1, {v}); }

}  // namespace

TEST(LtcDerivative, RestIsEquilibriumWhenReversalIsZero) {
  Rng rng(1);
  LtcCellParams p = LtcCellParams::init(4, 3, 2, rng);
  p.reversal = Tensor::zeros({1, 4});
  const Tensor d = ltc_derivative(Tensor::zeros({1, 4}), uniform_tensor({1, 3}, -1, 1, rng), p);
  EXPECT_TRUE(d.same_values(Tensor::zeros({1, 4})));
}

TEST(LtcDerivative, Substitution) {
  // tau = 1, A = 0, h = 1, f = sigmoid(0) = 0.5: -(1 + 0.5) * 1
  const LtcCellParams p = frozen_ltc(1.0, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(ltc_derivative(one(1.0), one(0.3), p).item(), -1.5);
}

TEST(LtcDerivative, FrozenGateFixedPoint) {
  const double tau = 0.7, a = 1.3, b = 0.4;
  const double f = 1.0 / (1.0 + std::exp(-b));
  const double h_star = f * a / (1.0 / tau + f);
  const LtcCellParams p = frozen_ltc(tau, a, b);
  EXPECT_NEAR(ltc_derivative(one(h_star), one(0.0), p).item(), 0.0, 1e-12);
}

TEST(LtcDerivative, ShapeMismatchThrows) {
  Rng rng(2);
  const LtcCellParams p = LtcCellParams::init(4, 3, 2, rng);
  EXPECT_THROW(ltc_derivative(Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), p), ShapeError);
  EXPECT_THROW(ltc_derivative(Tensor::zeros({1, 4}), Tensor::zeros({1, 2}), p), ShapeError);
  EXPECT_THROW(ltc_derivative(Tensor::zeros({2, 4}), Tensor::zeros({1, 3}), p), ShapeError);
}

TEST(LtcFusedStep, ZeroDtIsIdentity) {
  Rng rng(3);
  const LtcCellParams p = LtcCellParams::init(5, 2, 1, rng);
  const Tensor h = uniform_tensor({3, 5}, -1, 1, rng);
  EXPECT_TRUE(ltc_fused_step(h, uniform_tensor({3, 2}, -1, 1, rng), 0.0, p).same_values(h));
}

TEST(LtcFusedStep, ZeroStateZeroReversalStaysZero) {
  Rng rng(4);
  LtcCellParams p = LtcCellParams::init(5, 2, 1, rng);
  p.reversal = Tensor::zeros({1, 5});
  const Tensor h = ltc_fused_step(Tensor::zeros({1, 5}), uniform_tensor({1, 2}, -1, 1, rng), 0.3, p);
  EXPECT_TRUE(h.same_values(Tensor::zeros({1, 5})));
}

TEST(LtcFusedStep, HandArithmetic) {
  // (0 + 0.1 * 0.5 * 2) / (1 + 0.1 * (1 + 0.5)) = 0.1 / 1.15
  const LtcCellParams p = frozen_ltc(1.0, 2.0, 0.0);
  EXPECT_NEAR(ltc_fused_step(one(0.0), one(0.0), 0.1, p, 1).item(), 0.1 / 1.15, 1e-15);
  EXPECT_NEAR(ltc_fused_step(one(0.0), one(0.0), 0.1, p, 1).item(), 0.086957, 1e-6);
}

TEST(LtcFusedStep, NegativeDtThrows) {
  const LtcCellParams p = frozen_ltc(1.0, 2.0, 0.0);
  EXPECT_THROW(ltc_fused_step(one(0.0), one(0.0), -0.1, p), std::invalid_argument);
  EXPECT_THROW(ltc_rk4_step(one(0.0), one(0.0), -0.1, p), std::invalid_argument);
}

TEST(LtcFusedStep, BoundedByStateAndReversal) {
  Rng rng(5);
  std::size_t steps = 0;
  double worst_excess = -1.0;
  while (steps < 100000) {
    const std::size_t units = 1 + rng() % 8, inputs = 1 + rng() % 4, batch = 1 + rng() % 8;
    LtcCellParams p = LtcCellParams::init(units, inputs, 1, rng);
    p.w_rec = uniform_tensor({units, units}, -3, 3, rng);
    p.w_in = uniform_tensor({units, inputs}, -3, 3, rng);
    p.reversal = uniform_tensor({1, units}, -2, 2, rng);
    p.tau = uniform_tensor({1, units}, 0.01, 5.0, rng);
    const LtcKernel k(p);
    Tensor h = uniform_tensor({batch, units}, -3, 3, rng);
    const double a_max = inf_norm(p.reversal);
    for (int s = 0; s < 50; ++s, steps += batch) {
      const Tensor x = uniform_tensor({batch, inputs}, -5, 5, rng);
      const double dt = uniform(rng, 0.0, 10.0);
      const Tensor next = k.fused_step(h, x, dt, 1 + rng() % 6);
      for (std::size_t r = 0; r < batch; ++r) {
        double h_in = 0.0, h_out = 0.0;
        for (std::size_t c = 0; c < units; ++c) {
          h_in = std::max(h_in, std::abs(h.at(r, c)));
          h_out = std::max(h_out, std::abs(next.at(r, c)));
        }
        worst_excess = std::max(worst_excess, h_out - std::max(h_in, a_max));
      }
      h = next;
    }
  }
  EXPECT_LE(worst_excess, 1e-12);
}

TEST(LtcRk4Step, ZeroDtIsIdentity) {
  Rng rng(6);
  const LtcCellParams p = LtcCellParams::init(5, 2, 1, rng);
  const Tensor h = uniform_tensor({2, 5}, -1, 1, rng);
  EXPECT_TRUE(ltc_rk4_step(h, uniform_tensor({2, 2}, -1, 1, rng), 0.0, p).same_values(h));
}

// Frozen gate makes the ODE linear: h(t) = h_inf + (h0 - h_inf) exp(-(1/tau + f) t).
TEST(LtcRk4Step, MatchesAnalyticExponential) {
  const double tau = 0.8, a = -1.4, b = 0.9, h0 = 0.6;
  const double f = 1.0 / (1.0 + std::exp(-b));
  const double rate = 1.0 / tau + f;
  const double h_inf = f * a / rate;
  const LtcCellParams p = frozen_ltc(tau, a, b);
  const LtcKernel k(p);
  const double dt = 1e-3;
  Tensor h = one(h0);
  double worst = 0.0;
  for (int n = 1; n <= 1000; ++n) {
    h = k.rk4_step(h, one(0.0), dt);
    const double exact = h_inf + (h0 - h_inf) * std::exp(-rate * n * dt);
    worst = std::max(worst, std::abs(h.item() - exact));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(LtcRk4Step, FourthOrderConvergence) {
  const double tau = 0.5, a = 1.0, b = 1.0, h0 = -0.8;
  const double f = 1.0 / (1.0 + std::exp(-b));
  const double rate = 1.0 / tau + f;
  const double h_inf = f * a / rate;
  const LtcCellParams p = frozen_ltc(tau, a, b);
  const LtcKernel k(p);
  std::vector<double> log_dt, log_err;
  for (double dt : {0.2, 0.1, 0.05, 0.025}) {
    Tensor h = one(h0);
    const int n = static_cast<int>(std::lround(1.0 / dt));
    for (int i = 0; i < n; ++i) h = k.rk4_step(h, one(0.0), dt);
    const double exact = h_inf + (h0 - h_inf) * std::exp(-rate);
    log_dt.push_back(std::log(dt));
    log_err.push_back(std::log(std::abs(h.item() - exact)));
  }
  const double n = static_cast<double>(log_dt.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < log_dt.size(); ++i) {
    sx += log_dt[i];
    sy += log_err[i];
    sxx += log_dt[i] * log_dt[i];
    sxy += log_dt[i] * log_err[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, 4.0, 0.3);
}

TEST(LtcSolvers, FusedConvergesToRk4Trajectory) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t units = 1 + rng() % 8, inputs = 1 + rng() % 3;
    CellModel fused{LtcCellParams::init(units, inputs, 1, rng), OdeSolver::fused, 16};
    CellModel rk4 = fused;
    rk4.solver = OdeSolver::rk4;
    std::vector<Tensor> xs;
    for (int t = 0; t < 100; ++t) xs.push_back(uniform_tensor({1, inputs}, -1, 1, rng));
    const std::vector<double> dts(100, 0.05);
    const auto a = unroll(fused, Tensor::zeros({1, units}), xs, dts);
    const auto b = unroll(rk4, Tensor::zeros({1, units}), xs, dts);
    EXPECT_LT(inf_norm(sub(a.final_state, b.final_state)), 1e-3);
    double worst = 0.0;
    CellRunner rf(fused), rr(rk4);
    Tensor hf = Tensor::zeros({1, units}), hr = hf;
    for (int t = 0; t < 100; ++t) {
      hf = rf.step(hf, xs[t], 0.05);
      hr = rr.step(hr, xs[t], 0.05);
      worst = std::max(worst, inf_norm(sub(hf, hr)));
    }
    EXPECT_LT(worst, 1e-3) << "trial " << trial;
  }
}

TEST(CfcStep, ZeroTimeBranchAveragesCandidates) {
  Rng rng(8);
  CfcCellParams p = CfcCellParams::init(6, 3, 1, rng);
  p.f_in = Tensor::zeros({6, 3});
  p.f_rec = Tensor::zeros({6, 6});
  const Tensor h = uniform_tensor({2, 6}, -1, 1, rng);
  const Tensor x = uniform_tensor({2, 3}, -1, 1, rng);
  const CfcKernel k(p);
  const auto br = k.branches(h, x);
  const Tensor expected = 0.5 * br.g + 0.5 * br.candidate;
  const Tensor got = k.step(h, x, 0.7);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-15);
}

TEST(CfcStep, LargeDtSelectsCandidateBranch) {
  Rng rng(9);
  CfcCellParams p = CfcCellParams::init(6, 3, 1, rng);
  p.f_in = Tensor::zeros({6, 3});
  p.f_rec = Tensor::zeros({6, 6});
  p.f_bias = Tensor::filled({1, 6}, 1.0);
  const Tensor h = uniform_tensor({1, 6}, -1, 1, rng);
  const Tensor x = uniform_tensor({1, 3}, -1, 1, rng);
  const CfcKernel k(p);
  const Tensor got = k.step(h, x, 100.0);
  const Tensor cand = k.branches(h, x).candidate;
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], cand[i], 1e-12);
}

TEST(CfcStep, ConvexCombinationOfBranches) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const CfcCellParams p = CfcCellParams::init(5, 2, 1, rng);
    const CfcKernel k(p);
    const Tensor h = uniform_tensor({3, 5}, -2, 2, rng);
    const Tensor x = uniform_tensor({3, 2}, -2, 2, rng);
    const double dt = uniform(rng, 0.0, 5.0);
    const auto br = k.branches(h, x);
    const Tensor got = k.step(h, x, dt);
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_GE(got[i], std::min(br.g[i], br.candidate[i]) - 1e-15);
      EXPECT_LE(got[i], std::max(br.g[i], br.candidate[i]) + 1e-15);
    }
  }
  const CfcCellParams p = CfcCellParams::init(5, 2, 1, rng);
  EXPECT_THROW(cfc_step(Tensor::zeros({1, 5}), Tensor::zeros({1, 2}), -1.0, p), std::invalid_argument);
}

TEST(GruStep, ZeroWeightsHalveState) {
  const GruCellParams p = GruCellParams::zeros(4, 2, 1);
  const Tensor h = Tensor::matrix({{0.2, -0.4, 1.0, 3.0}});
  const Tensor got = gru_step(h, Tensor::matrix({{1.0, -1.0}}), p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(got[i], 0.5 * h[i]);
}

TEST(GruStep, ZeroStateWithZeroCandidatePathStaysZero) {
  Rng rng(11);
  GruCellParams p = GruCellParams::init(4, 2, 1, rng);
  p.c_in = Tensor::zeros({4, 2});
  p.c_rec = Tensor::zeros({4, 4});
  EXPECT_TRUE(gru_step(Tensor::zeros({1, 4}), uniform_tensor({1, 2}, -1, 1, rng), p)
                  .same_values(Tensor::zeros({1, 4})));
  EXPECT_THROW(gru_step(Tensor::zeros({1, 3}), Tensor::zeros({1, 2}), p), ShapeError);
}

TEST(GruStep, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  const GruCellParams p = GruCellParams::init(4, 3, 2, rng);
  std::vector<Tensor> point = param_list(p);
  point.push_back(uniform_tensor({2, 4}, -1, 1, rng));
  const Tensor x = uniform_tensor({2, 3}, -1, 1, rng);
  auto f = [&](std::span<const Tensor> v) {
    GruCellParams q = p;
    set_params(q, v.first(v.size() - 1));
    return mean(square(gru_step(v.back(), x, q)));
  };
  EXPECT_LT(grad_check(f, point, 1e-5), 1e-5);
}

TEST(Unroll, EmptySequenceReturnsInitialState) {
  Rng rng(13);
  const CellModel m = CellModel::make(CellKind::ltc, 4, 2, 1, rng);
  const Tensor h0 = uniform_tensor({1, 4}, -1, 1, rng);
  const auto r = unroll(m, h0, {}, {});
  EXPECT_TRUE(r.outputs.empty());
  EXPECT_TRUE(r.final_state.same_values(h0));
}

TEST(Unroll, LengthMismatchThrows) {
  Rng rng(14);
  const CellModel m = CellModel::make(CellKind::cfc, 4, 2, 1, rng);
  const std::vector<Tensor> xs = {Tensor::zeros({1, 2})};
  EXPECT_THROW(unroll(m, Tensor::zeros({1, 4}), xs, std::vector<double>{}), std::invalid_argument);
}

TEST(Unroll, SingleStepMatchesManualStep) {
  Rng rng(15);
  for (CellKind kind : {CellKind::ltc, CellKind::cfc, CellKind::gru}) {
    const CellModel m = CellModel::make(kind, 4, 2, 3, rng);
    const Tensor h0 = uniform_tensor({2, 4}, -1, 1, rng);
    const std::vector<Tensor> xs = {uniform_tensor({2, 2}, -1, 1, rng)};
    const auto r = unroll(m, h0, xs, std::vector<double>{0.4});
    CellRunner run(m);
    const Tensor h1 = run.step(h0, xs[0], 0.4);
    EXPECT_TRUE(r.final_state.same_values(h1));
    EXPECT_TRUE(r.outputs[0].same_values(run.readout(h1)));
    EXPECT_EQ(r.outputs[0].shape(), (Shape{2, 3}));
  }
}

TEST(Unroll, CompositionLaw) {
  Rng rng(16);
  for (CellKind kind : {CellKind::ltc, CellKind::cfc, CellKind::gru}) {
    const CellModel m = CellModel::make(kind, 5, 2, 1, rng);
    std::vector<Tensor> xs;
    std::vector<double> dts;
    for (int t = 0; t < 12; ++t) {
      xs.push_back(uniform_tensor({1, 2}, -1, 1, rng));
      dts.push_back(uniform(rng, 0.01, 1.0));
    }
    const Tensor h0 = Tensor::zeros({1, 5});
    const auto whole = unroll(m, h0, xs, dts);
    const auto first = unroll(m, h0, std::span(xs).first(7), std::span(dts).first(7));
    const auto second = unroll(m, first.final_state, std::span(xs).subspan(7), std::span(dts).subspan(7));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(whole.final_state[i], second.final_state[i], 1e-12);
  }
}

TEST(Unroll, TenStepSequenceGradientsMatchFiniteDifferences) {
  Rng rng(17);
  for (CellKind kind : {CellKind::ltc, CellKind::cfc, CellKind::gru}) {
    const CellModel m = CellModel::make(kind, 6, 3, 2, rng);
    std::vector<Tensor> xs;
    for (int t = 0; t < 10; ++t) xs.push_back(uniform_tensor({2, 3}, -1, 1, rng));
    const std::vector<double> dts(10, 0.3);
    const Tensor target = uniform_tensor({2, 2}, -1, 1, rng);
    auto f = [&](std::span<const Tensor> v) {
      CellModel q = m;
      std::visit([&](auto& p) { set_params(p, v); }, q.params);
      const auto r = unroll(q, Tensor::zeros({2, 6}), xs, dts);
      Tensor loss = Tensor::scalar(0.0);
      for (const auto& y : r.outputs) loss = loss + mse_loss(y, target);
      return loss;
    };
    const auto point = std::visit([](const auto& p) { return param_list(p); }, m.params);
    EXPECT_LT(grad_check(f, point, 1e-5), 1e-4) << to_string(kind);
  }
}
