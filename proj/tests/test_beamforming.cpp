#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lnn/beamforming.hpp"

using namespace lnn;

namespace {

Eigen::MatrixXcd random_complex(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  Eigen::MatrixXcd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = cplx(n(rng), n(rng));
  return m;
}

ChannelSet random_channels(std::size_t k, Eigen::Index nr, Eigen::Index m, std::uint64_t seed) {
  Rng rng(seed);
  ChannelSet h;
  for (std::size_t i = 0; i < k; ++i) h.push_back(random_complex(nr, m, rng));
  return h;
}

PrecoderSet random_precoders(std::size_t k, Eigen::Index m, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  PrecoderSet v;
  for (std::size_t i = 0; i < k; ++i) v.push_back(random_complex(m, d, rng));
  return v;
}

// Rate of single-antenna users with single-stream beams, written out directly.
double miso_sum_rate(const ChannelSet& h, const PrecoderSet& v, double noise) {
  double r = 0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    double interference = noise;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j != k) interference += std::norm((h[k] * v[j])(0, 0));
    }
    r += std::log2(1.0 + std::norm((h[k] * v[k])(0, 0)) / interference);
  }
  return r;
}

BeamformingScenario small_scenario() {
  BeamformingScenario sc;
  sc.n_bs_antennas = 8;
  sc.n_users = 2;
  sc.n_user_antennas = 2;
  sc.phases = {{6.0, 20}, {15.0, 20}, {30.0, 20}};
  return sc;
}

}  // namespace

TEST(SumSe, ZeroPrecodersGiveZeroRate) {
  const ChannelSet h = random_channels(3, 2, 6, 1);
  PrecoderSet v(3, Eigen::MatrixXcd::Zero(6, 2));
  EXPECT_EQ(sum_se(h, v, 0.1), 0.0);
}

TEST(SumSe, ScalarChannelMatchesShannon) {
  const ChannelSet h{Eigen::MatrixXcd::Constant(1, 1, cplx(1, 0))};
  const PrecoderSet v{Eigen::MatrixXcd::Constant(1, 1, cplx(1, 0))};
  EXPECT_NEAR(sum_se(h, v, 1.0), 1.0, 1e-12);
}

TEST(SumSe, OrthogonalUsersAddUp) {
  ChannelSet h{Eigen::MatrixXcd::Zero(1, 2), Eigen::MatrixXcd::Zero(1, 2)};
  h[0](0, 0) = cplx(2, 0);
  h[1](0, 1) = cplx(0, 1);
  PrecoderSet v{Eigen::MatrixXcd::Zero(2, 1), Eigen::MatrixXcd::Zero(2, 1)};
  v[0](0, 0) = cplx(0.5, 0.5);
  v[1](1, 0) = cplx(0.3, 0);
  const double expected = std::log2(1 + 4 * 0.5 / 0.2) + std::log2(1 + 0.09 / 0.2);
  EXPECT_NEAR(sum_se(h, v, 0.2), expected, 1e-9);
}

TEST(SumSe, MisoMatchesScalarFormula) {
  const ChannelSet h = random_channels(3, 1, 4, 2);
  const PrecoderSet v = random_precoders(3, 4, 1, 3);
  EXPECT_NEAR(sum_se(h, v, 0.5), miso_sum_rate(h, v, 0.5), 1e-10);
}

TEST(SumSe, NonIncreasingInNoise) {
  const ChannelSet h = random_channels(2, 2, 4, 4);
  const PrecoderSet v = random_precoders(2, 4, 2, 5);
  double prev = std::numeric_limits<double>::infinity();
  for (double s : {0.01, 0.1, 0.5, 1.0, 5.0, 50.0}) {
    const double r = sum_se(h, v, s);
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(SumSe, TensorLoweringAgrees) {
  const ChannelSet h = random_channels(3, 2, 5, 6);
  const PrecoderSet v = random_precoders(3, 5, 2, 7);
  std::vector<SplitMatrix> s;
  for (const auto& m : v) s.push_back(split(m));
  EXPECT_NEAR(sum_se_tensor(h, s, 0.3).item(), sum_se(h, v, 0.3), 1e-10);
}

TEST(SumSe, RejectsBadInput) {
  const ChannelSet h = random_channels(2, 2, 4, 8);
  EXPECT_THROW(sum_se(h, random_precoders(3, 4, 2, 9), 0.1), ShapeError);
  EXPECT_THROW(sum_se(h, random_precoders(2, 5, 2, 9), 0.1), ShapeError);
  EXPECT_THROW(sum_se(h, random_precoders(2, 4, 2, 9), 0.0), std::invalid_argument);
}

TEST(Gradient, MatchesCentralDifferences) {
  const ChannelSet h = random_channels(2, 2, 4, 10);
  const PrecoderSet v = random_precoders(2, 4, 2, 11);
  const double noise = 0.4, eps = 1e-6;
  const PrecoderSet g = se_gradient(h, v, noise);
  for (std::size_t k = 0; k < v.size(); ++k) {
    for (Eigen::Index i = 0; i < v[k].size(); ++i) {
      for (const cplx dir : {cplx(1, 0), cplx(0, 1)}) {
        PrecoderSet up = v, down = v;
        up[k].data()[i] += eps * dir;
        down[k].data()[i] -= eps * dir;
        const double fd = (sum_se(h, up, noise) - sum_se(h, down, noise)) / (2 * eps);
        const double ad = dir.real() != 0 ? g[k].data()[i].real() : g[k].data()[i].imag();
        EXPECT_NEAR(ad, fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(Gradient, NonZeroAtOriginForSingleUser) {
  const ChannelSet h = random_channels(1, 1, 3, 12);
  PrecoderSet v{Eigen::MatrixXcd::Zero(3, 1)};
  v[0](0, 0) = cplx(1e-3, 0);
  EXPECT_GT(se_gradient(h, v, 1.0)[0].norm(), 0.0);
}

TEST(Gradient, VanishesForZeroChannel) {
  const ChannelSet h(2, Eigen::MatrixXcd::Zero(2, 4));
  const PrecoderSet g = se_gradient(h, random_precoders(2, 4, 2, 13), 0.1);
  for (const auto& m : g) EXPECT_EQ(m.norm(), 0.0);
}

TEST(PowerProject, ScalesOnlyWhenOverBudget) {
  const PrecoderSet v = random_precoders(2, 4, 2, 14);
  const double p = total_power(v);
  const PrecoderSet down = power_project(v, 0.5 * p);
  EXPECT_NEAR(total_power(down), 0.5 * p, 1e-12);
  EXPECT_NEAR(std::abs((down[0](0, 0) / v[0](0, 0)) - std::sqrt(0.5)), 0.0, 1e-12);
  const PrecoderSet same = power_project(v, 2 * p);
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_EQ(same[k], v[k]);
  EXPECT_THROW(power_project(v, 0.0), std::invalid_argument);
}

TEST(Reference, MrtSingleUserIsMatchedFilter) {
  const ChannelSet h = random_channels(1, 1, 5, 15);
  const PrecoderSet v = reference_precoders(ReferenceKind::mrt, h, 2.0);
  EXPECT_NEAR(total_power(v), 2.0, 1e-12);
  const double expected = std::log2(1 + 2.0 * h[0].squaredNorm() / 0.1);
  EXPECT_NEAR(sum_se(h, v, 0.1), expected, 1e-10);
}

TEST(Reference, ZfCancelsInterference) {
  const ChannelSet h = random_channels(3, 2, 8, 16);
  const PrecoderSet v = reference_precoders(ReferenceKind::zf, h, 1.0);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(v[k].squaredNorm(), 1.0 / 3.0, 1e-12);
    for (std::size_t j = 0; j < 3; ++j) {
      if (j != k) {
        EXPECT_LT((h[k] * v[j]).norm(), 1e-9);
      }
    }
  }
}

TEST(Reference, ZfNeedsEnoughAntennas) {
  EXPECT_THROW(reference_precoders(ReferenceKind::zf, random_channels(3, 2, 5, 17), 1.0), std::invalid_argument);
}

TEST(Wmmse, SingleUserReachesCapacity) {
  const ChannelSet h = random_channels(1, 1, 4, 18);
  const WmmseResult r = wmmse_solve(h, 1.5, 0.2);
  EXPECT_NEAR(r.objective.back(), std::log2(1 + 1.5 * h[0].squaredNorm() / 0.2), 1e-6);
  EXPECT_LE(total_power(r.v), 1.5 + 1e-9);
}

// Serving only the strongest user is always feasible, so its capacity
// log2(1 + P |h_k|^2 / noise) is a lower bound on the optimum.
TEST(Wmmse, AtLeastBestSingleUserCapacity) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const ChannelSet h = random_channels(2, 1, 2, 400 + seed);
    const double single = std::log2(1 + std::max(h[0].squaredNorm(), h[1].squaredNorm()) / 0.1);
    EXPECT_GE(wmmse_solve(h, 1.0, 0.1).objective.back(), single - 1e-6) << "seed " << seed;
  }
}

TEST(Wmmse, ObjectiveIsMonotone) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ChannelSet h = random_channels(3, 2, 6, 100 + seed);
    WmmseOptions opt;
    opt.tol = 0;
    opt.max_iters = 60;
    const WmmseResult r = wmmse_solve(h, 1.0, 0.1, opt);
    for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_GE(r.objective[i], r.objective[i - 1] - 1e-9);
    EXPECT_LE(total_power(r.v), 1.0 + 1e-9);
  }
}

TEST(Wmmse, BeatsMrtAndZfOnAverage) {
  double w = 0, m = 0, z = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ChannelSet h = random_channels(2, 2, 8, 200 + seed);
    w += wmmse_solve(h, 1.0, 0.1).objective.back();
    m += sum_se(h, reference_precoders(ReferenceKind::mrt, h, 1.0), 0.1);
    z += sum_se(h, reference_precoders(ReferenceKind::zf, h, 1.0), 0.1);
  }
  EXPECT_GT(w, m);
  EXPECT_GT(w, z);
}

// Two single-antenna users, two transmit antennas. Every Pareto-optimal beam
// pair has the form w_k = sqrt(p_k) (cos a_k u_k + sin a_k e_k) where u_k is
// the unit projection of g_k orthogonal to the other user and e_k the unit
// projection onto the other user, a_k in [0, pi/2]; search that grid.
TEST(Wmmse, CloseToGridOptimumForTwoUsers) {
  const double power = 1.0, noise = 0.1;
  const int n = 200;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ChannelSet h = random_channels(2, 1, 2, 300 + seed);
    Eigen::VectorXcd basis[2][2];
    for (int k = 0; k < 2; ++k) {
      const Eigen::VectorXcd gk = h[k].adjoint();
      const Eigen::VectorXcd go = h[1 - k].adjoint();
      const Eigen::VectorXcd along = go * (go.adjoint() * gk)(0, 0) / go.squaredNorm();
      basis[k][0] = (gk - along).normalized();
      basis[k][1] = along.normalized();
    }
    // Received amplitudes h_j w_k for each angle, then sweep the power split.
    std::vector<double> own[2], cross[2];
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < n; ++i) {
        const double a = 0.5 * std::numbers::pi * i / (n - 1);
        const Eigen::VectorXcd w = std::cos(a) * basis[k][0] + std::sin(a) * basis[k][1];
        own[k].push_back(std::norm((h[k] * w)(0, 0)));
        cross[k].push_back(std::norm((h[1 - k] * w)(0, 0)));
      }
    }
    double best = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        for (int s = 0; s < n; ++s) {
          const double p0 = power * s / (n - 1), p1 = power - p0;
          const double r = std::log2(1 + p0 * own[0][i] / (noise + p1 * cross[1][j])) +
                           std::log2(1 + p1 * own[1][j] / (noise + p0 * cross[0][i]));
          best = std::max(best, r);
        }
      }
    }
    const double w = wmmse_solve(h, power, noise).objective.back();
    EXPECT_GE(w, 0.98 * best) << "seed " << seed;
  }
}

TEST(Glnn, TraceShapeAndPowerBudget) {
  const BeamformingScenario sc = small_scenario();
  const SeTrace tr = run_glnn_experiment(sc, GlnnConfig{}, 3);
  ASSERT_EQ(tr.steps(), 60u);
  EXPECT_EQ(tr.phase[19], 0u);
  EXPECT_EQ(tr.phase[20], 1u);
  EXPECT_EQ(tr.phase[40], 2u);
  for (const auto& s : tr.se) {
    ASSERT_EQ(s.size(), 60u);
    for (double v : s) EXPECT_TRUE(std::isfinite(v) && v >= 0);
  }
  for (double p : tr.max_power) EXPECT_LE(p, sc.power_budget + 1e-9);
}

TEST(Glnn, Deterministic) {
  const BeamformingScenario sc = small_scenario();
  const SeTrace a = run_glnn_experiment(sc, GlnnConfig{}, 4);
  const SeTrace b = run_glnn_experiment(sc, GlnnConfig{}, 4);
  EXPECT_EQ(a.se, b.se);
}

TEST(Glnn, WiringMasksApplied) {
  const BeamformingScenario sc = small_scenario();
  const GlnnOptimizer g(sc, GlnnConfig{}, 5);
  ASSERT_TRUE(g.wiring().has_value());
  EXPECT_EQ(g.wiring()->n_motor, sc.n_users);
  EXPECT_EQ(g.projection().shape(), (Shape{2 * 2 * 8 * 2 * 2, 64}));
}

TEST(Glnn, ImprovesOnStaticChannel) {
  BeamformingScenario sc = small_scenario();
  sc.phases = {{0.0, 300}};
  const SeTrace tr = run_glnn_experiment(sc, GlnnConfig{}, 6);
  EXPECT_GT(tr.mean("glnn", 280, 300), tr.se[0][0] + 0.5);
  EXPECT_GT(tr.mean("glnn", 280, 300), tr.mean("mrt", 280, 300));
}
