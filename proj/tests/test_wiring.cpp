#include <gtest/gtest.h>

#include "lnn/adam.hpp"
#include "lnn/wiring.hpp"

using namespace lnn;

namespace {

WiringConfig small_config(std::uint64_t seed) {
  WiringConfig c;
  c.n_sensory = 2;
  c.n_inter = 3;
  c.n_command = 3;
  c.n_motor = 1;
  c.fanout_sensory = 2;
  c.fanout_inter = 2;
  c.fanin_motor = 2;
  c.n_command_recurrent = 2;
  c.seed = seed;
  return c;
}

WiringConfig random_config(Rng& rng) {
  WiringConfig c;
  c.n_sensory = 1 + rng() % 10;
  c.n_inter = 1 + rng() % 12;
  c.n_command = 1 + rng() % 10;
  c.n_motor = 1 + rng() % 5;
  c.fanout_sensory = 1 + rng() % c.n_inter;
  c.fanout_inter = 1 + rng() % c.n_command;
  c.fanin_motor = 1 + rng() % c.n_command;
  c.n_command_recurrent = rng() % (c.n_command * c.n_command + 1);
  c.seed = rng();
  return c;
}

// Valid hand-built wiring: 1 sensory, 1 inter, 1 command, 2 motors.
Wiring hand_built() {
  Wiring w(1, 1, 1, 2);
  w(0, 1) = 1;   // sensory -> inter
  w(1, 2) = -1;  // inter -> command
  w(2, 3) = 1;   // command -> motor 0
  w(2, 4) = 1;   // command -> motor 1
  return w;
}

}  // namespace

TEST(BuildWiring, SynapseCountsAtLeastFanoutSums) {
  const Wiring w = build_wiring(small_config(7));
  EXPECT_GE(w.synapse_count(Layer::sensory, Layer::inter), 4u);
  EXPECT_GE(w.synapse_count(Layer::inter, Layer::command), 6u);
  EXPECT_GE(w.synapse_count(Layer::command, Layer::command), 2u);
  EXPECT_GE(w.synapse_count(Layer::command, Layer::motor), 2u);
}

TEST(BuildWiring, DeterministicInSeed) {
  EXPECT_EQ(build_wiring(small_config(7)).adjacency, build_wiring(small_config(7)).adjacency);
  const WiringConfig big = default_wiring(64, 4, 99);
  EXPECT_EQ(build_wiring(big).adjacency, build_wiring(big).adjacency);
  WiringConfig other = big;
  other.seed = 100;
  EXPECT_NE(build_wiring(big).adjacency, build_wiring(other).adjacency);
}

TEST(BuildWiring, SaturatedFanoutIsDense) {
  WiringConfig c = small_config(3);
  c.fanout_sensory = c.n_inter;
  const Wiring w = build_wiring(c);
  EXPECT_EQ(w.synapse_count(Layer::sensory, Layer::inter), c.n_sensory * c.n_inter);
}

TEST(BuildWiring, PolarityIsPlusOrMinusOne) {
  const Wiring w = build_wiring(default_wiring(64, 4, 5));
  std::size_t pos = 0, neg = 0;
  for (auto v : w.adjacency) {
    EXPECT_TRUE(v == 0 || v == 1 || v == -1);
    pos += v == 1;
    neg += v == -1;
  }
  EXPECT_GT(pos, 0u);
  EXPECT_GT(neg, 0u);
}

TEST(BuildWiring, InfeasibleConfigThrows) {
  WiringConfig c = small_config(1);
  c.fanout_sensory = c.n_inter + 1;
  EXPECT_THROW(build_wiring(c), std::invalid_argument);
  c = small_config(1);
  c.fanin_motor = c.n_command + 1;
  EXPECT_THROW(build_wiring(c), std::invalid_argument);
  c = small_config(1);
  c.n_motor = 0;
  EXPECT_THROW(build_wiring(c), std::invalid_argument);
}

TEST(ValidateWiring, BuiltWiringsAreValid) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const WiringConfig c = random_config(rng);
    const auto v = validate_wiring(build_wiring(c));
    EXPECT_TRUE(v.empty()) << (v.empty() ? "" : v.front().message);
  }
}

TEST(ValidateWiring, HandBuiltBaselineIsValid) { EXPECT_TRUE(validate_wiring(hand_built()).empty()); }

TEST(ValidateWiring, IsolatedMotorIsOneReachabilityViolation) {
  Wiring w = hand_built();
  w(2, 4) = 0;
  const auto v = validate_wiring(w);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, WiringViolation::Kind::unreachable);
  EXPECT_EQ(v[0].neuron, 4u);
}

TEST(ValidateWiring, SensoryToMotorIsOneBlockViolation) {
  Wiring w = hand_built();
  w(0, 3) = 1;
  const auto v = validate_wiring(w);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, WiringViolation::Kind::block_structure);
}

TEST(ValidateWiring, DefaultThirtyUnitDensityBelowQuarter) {
  const Wiring w = build_wiring(default_wiring(64, 4, 2024));
  EXPECT_EQ(w.n_units(), 30u);
  EXPECT_EQ(w.n_inter, 16u);
  EXPECT_EQ(w.n_command, 10u);
  EXPECT_LT(density(cell_masks(w).rec), 0.25);
}

TEST(ApplyMasks, AllOnesMasksLeaveParamsUnchanged) {
  Rng rng(3);
  const LtcCellParams p = LtcCellParams::init(5, 3, 2, rng);
  const CellMasks ones{Tensor::ones({5, 5}), Tensor::ones({5, 3}), Tensor::ones({1, 5})};
  const LtcCellParams q = apply_masks(ones, p);
  const auto a = param_list(p), b = param_list(q);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].same_values(b[i]));
}

TEST(ApplyMasks, MaskedDensityMatchesMaskDensity) {
  Rng rng(4);
  const Wiring w = build_wiring(default_wiring(8, 2, 4));
  const LtcCellParams p = apply_masks(w, LtcCellParams::init(w.n_units(), 8, 2, rng));
  EXPECT_DOUBLE_EQ(density(p.w_rec), density(cell_masks(w).rec));
  EXPECT_DOUBLE_EQ(density(p.w_in), density(cell_masks(w).in));
}

TEST(ApplyMasks, DimensionMismatchThrows) {
  Rng rng(5);
  const Wiring w = build_wiring(default_wiring(8, 2, 4));
  EXPECT_THROW(apply_masks(w, LtcCellParams::init(w.n_units() + 1, 8, 2, rng)), ShapeError);
  EXPECT_THROW(apply_masks(w, CfcCellParams::init(w.n_units(), 7, 2, rng)), ShapeError);
}

// Masked entries get identically zero gradients and stay zero under Adam.
template <class P>
void check_gradient_blocking(P p, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t units = p.n_units, inputs = p.n_inputs;
  CellModel model{p};
  AdamState st(AdamConfig{.lr = 0.05});
  for (int step = 0; step < 100; ++step) {
    Tape tape;
    CellModel bound = model;
    std::visit([&](auto& q) { q = bind_params(tape, q); }, bound.params);
    std::vector<Tensor> xs;
    for (int t = 0; t < 3; ++t) xs.push_back(uniform_tensor({4, inputs}, -1, 1, rng));
    const auto r = unroll(bound, Tensor::zeros({4, units}), xs, std::vector<double>(3, 0.5));
    const Tensor loss = mse_loss(r.outputs.back(), Tensor::ones(r.outputs.back().shape()));
    const Gradients g = tape.backward(loss);
    auto grads = std::visit([&](const auto& q) { return param_grads(g, q); }, bound.params);
    auto params = std::visit([](const auto& q) { return param_list(q); }, model.params);
    const auto names = std::visit([](const auto& q) { return param_names(q); }, model.params);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& q = std::get<P>(model.params);
      const std::optional<Tensor>* support = nullptr;
      if (names[i].ends_with("rec")) support = &q.rec_support;
      if (names[i].ends_with("in")) support = &q.in_support;
      if (names[i] == "w_out") support = &q.out_support;
      if (!support) continue;
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        if ((**support)[j] == 0.0) {
          ASSERT_EQ(grads[i][j], 0.0) << names[i];
        }
      }
    }
    adam_step(params, grads, st);
    std::visit([&](auto& q) { set_params(q, params); }, model.params);
    model.constrain();
  }
  const auto& q = std::get<P>(model.params);
  const auto names = param_names(q);
  const auto params = param_list(q);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::optional<Tensor>* support = nullptr;
    if (names[i].ends_with("rec")) support = &q.rec_support;
    if (names[i].ends_with("in")) support = &q.in_support;
    if (!support) continue;
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      if ((**support)[j] == 0.0) {
        EXPECT_EQ(params[i][j], 0.0) << names[i];
      }
    }
  }
}

TEST(ApplyMasks, GradientBlockingLtc) {
  Rng rng(6);
  const Wiring w = build_wiring(default_wiring(6, 2, 17));
  check_gradient_blocking(apply_masks(w, LtcCellParams::init(w.n_units(), 6, 2, rng)), 1);
}

TEST(ApplyMasks, GradientBlockingCfc) {
  Rng rng(7);
  const Wiring w = build_wiring(default_wiring(6, 2, 18));
  check_gradient_blocking(apply_masks(w, CfcCellParams::init(w.n_units(), 6, 2, rng)), 2);
}

TEST(ApplyMasks, ZeroBlockStaysExactlyZero) {
  Rng rng(8);
  LtcCellParams p = LtcCellParams::init(4, 3, 1, rng);
  CellMasks m{Tensor::ones({4, 4}), Tensor::zeros({4, 3}), Tensor::ones({1, 4})};
  check_gradient_blocking(apply_masks(m, p), 3);
}
