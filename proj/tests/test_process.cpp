#include <cmath>
#include <map>
#include <numeric>

#include <gtest/gtest.h>

#include "mpp/arrigoni.hpp"
#include "mpp/diagnostics.hpp"
#include "mpp/process.hpp"
#include "mpp/stats.hpp"

namespace mpp {
namespace {

using arrigoni::Chain;
using arrigoni::Law;
using arrigoni::ModelSpec;

// A single jump family e^(0) -> +1 at rate N lambda: a Poisson process.
struct Immigration {
  double lambda;
  void enumerate_rates(const SparseCounts&, std::int64_t n, RateTable& t) const {
    t.add(JumpVector{{0, 1}}, static_cast<double>(n) * lambda);
  }
};

struct Frozen {
  void enumerate_rates(const SparseCounts&, std::int64_t, RateTable&) const {}
};

ModelSpec pure_death(double d) {
  ModelSpec m;
  m.law = Law::kConstant;
  m.b = 0.0;
  m.d = d;
  m.gamma = 0.0;
  m.rho = 0.0;
  m.kappa = 0.0;
  return m;
}

ModelSpec zero_model() {
  ModelSpec m = pure_death(0.0);
  return m;
}

TEST(Simulate, ZeroRateModelStaysPut) {
  const SparseCounts x0({3, 2, 1});
  for (auto traj : {simulate_ssa(Chain(zero_model()), x0, 6, 5.0, 1),
                    simulate_time_change(Chain(zero_model()), x0, 6, 5.0, 1)}) {
    ASSERT_EQ(traj.size(), 1u);
    EXPECT_EQ(traj.times[0], 0.0);
    EXPECT_EQ(traj.states[0], x0);
    EXPECT_EQ(traj.events, 0u);
  }
  auto traj = simulate_ssa(Frozen{}, x0, 6, 1.0, 2);
  EXPECT_EQ(traj.size(), 1u);
}

TEST(Simulate, RejectsBadInputs) {
  EXPECT_THROW(simulate_ssa(Frozen{}, SparseCounts({1}), 0, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(simulate_ssa(Frozen{}, SparseCounts({1}), 1, 0.0, 1), std::invalid_argument);
}

TEST(Simulate, EventBudgetIsEnforced) {
  SimOptions opt;
  opt.max_events = 10;
  EXPECT_THROW(simulate_ssa(Immigration{100.0}, SparseCounts({1}), 1, 10.0, 3, opt), SimulationError);
  EXPECT_THROW(simulate_time_change(Immigration{100.0}, SparseCounts({1}), 1, 10.0, 3, opt), SimulationError);
}

TEST(Simulate, ConservesPatchCountAndStaysValid) {
  const Chain chain{ModelSpec{}};
  const std::int64_t N = 60;
  const SparseCounts x0 = diagnostics::initial_counts(DensityVector{{0, 0.4}, {2, 0.2}, {4, 0.2}, {6, 0.2}}, N);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (auto traj : {simulate_ssa(chain, x0, N, 2.0, seed), simulate_time_change(chain, x0, N, 2.0, seed)}) {
      ASSERT_GT(traj.events, 100u);
      for (std::size_t k = 0; k < traj.size(); ++k) {
        EXPECT_EQ(traj.states[k].total(), N);
        if (k > 0) {
          EXPECT_GT(traj.times[k], traj.times[k - 1]);
          // consecutive states differ by one model jump
          JumpVector diff;
          for (std::size_t j = 0; j < std::max(traj.states[k].extent(), traj.states[k - 1].extent()); ++j)
            diff.add(j, static_cast<std::int32_t>(traj.states[k][j] - traj.states[k - 1][j]));
          EXPECT_TRUE(arrigoni::classify(diff).has_value()) << diff.to_string();
        }
      }
    }
  }
}

TEST(Simulate, SeedDeterminism) {
  const Chain chain{ModelSpec{}};
  const SparseCounts x0({10, 5, 5});
  for (int method = 0; method < 2; ++method) {
    auto run = [&](std::uint64_t seed) {
      return method == 0 ? simulate_ssa(chain, x0, 20, 3.0, seed) : simulate_time_change(chain, x0, 20, 3.0, seed);
    };
    const auto a = run(42), b = run(42), c = run(43);
    EXPECT_EQ(a.times, b.times);
    EXPECT_EQ(a.states, b.states);
    EXPECT_NE(a.times, c.times);
  }
}

TEST(Simulate, GenericAndFactorizedSamplersAgreeInLaw) {
  // Same chain through the table scan and the factorized sampler.
  const Chain chain{ModelSpec{}};
  const SparseCounts x0 = diagnostics::initial_counts(DensityVector{{0, 0.4}, {2, 0.2}, {4, 0.2}, {6, 0.2}}, 50);
  SimOptions generic;
  generic.generic_direct = true;
  generic.recording = Recording::none();
  SimOptions fast;
  fast.recording = Recording::none();
  std::vector<double> a, b;
  for (std::uint64_t r = 0; r < 400; ++r) {
    a.push_back(moment_S(density(simulate_ssa(chain, x0, 50, 1.0, r, generic).states.back(), 50), 1.0));
    b.push_back(moment_S(density(simulate_ssa(chain, x0, 50, 1.0, 1000 + r, fast).states.back(), 50), 1.0));
  }
  EXPECT_GT(stats::ks_two_sample(a, b).p_value, 0.01);
}

TEST(Simulate, GridRecordingMatchesFullRecording) {
  const Chain chain{ModelSpec{}};
  const SparseCounts x0({10, 5, 5});
  SimOptions grid;
  grid.recording = Recording::uniform(2.0, 41);
  const auto full = simulate_ssa(chain, x0, 20, 2.0, 9);
  const auto coarse = simulate_ssa(chain, x0, 20, 2.0, 9, grid);
  ASSERT_EQ(coarse.size(), 41u);
  for (std::size_t k = 0; k < coarse.size(); ++k) EXPECT_EQ(coarse.states[k], full.at(coarse.times[k]));
}

// Three patches of two individuals, independent unit-rate deaths: the
// absorption time is the maximum of six Exp(1) variables.
TEST(PureDeathOracle, AbsorptionTimeAndJumpCount) {
  const Chain chain(pure_death(1.0));
  const SparseCounts x0({0, 0, 3});
  std::vector<double> ssa_times, tc_times;
  double x1_mean = 0.0;
  const int R = 4000;
  const double t_mid = 0.5;
  SimOptions opt;
  for (int r = 0; r < R; ++r) {
    for (int method = 0; method < 2; ++method) {
      const auto traj = method == 0 ? simulate_ssa(chain, x0, 3, 100.0, r, opt)
                                    : simulate_time_change(chain, x0, 3, 100.0, r, opt);
      ASSERT_EQ(traj.events, 6u);
      ASSERT_EQ(traj.states.back(), SparseCounts({3}));
      (method == 0 ? ssa_times : tc_times).push_back(traj.times.back());
      if (method == 0) x1_mean += static_cast<double>(traj.at(t_mid)[1]) / R;
    }
  }
  const double h6 = 1.0 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4 + 1.0 / 5 + 1.0 / 6;
  double var = 0.0;
  for (int k = 1; k <= 6; ++k) var += 1.0 / (k * k);
  const double se = std::sqrt(var / R);
  EXPECT_NEAR(stats::mean(ssa_times), h6, 4 * se);
  EXPECT_NEAR(stats::mean(tc_times), h6, 4 * se);
  auto cdf = [](double t) { return std::pow(1.0 - std::exp(-t), 6); };
  EXPECT_GT(stats::ks_one_sample(ssa_times, cdf).p_value, 0.01);
  EXPECT_GT(stats::ks_one_sample(tc_times, cdf).p_value, 0.01);
  // Patch sizes at t are Binomial(2, e^-t); E X^1_t = 3 * 2 p (1 - p).
  const double p = std::exp(-t_mid);
  const double e1 = 3 * 2 * p * (1 - p);
  const double sd1 = std::sqrt(3 * 2 * p * (1 - p) * (1 - 2 * p * (1 - p)));
  EXPECT_NEAR(x1_mean, e1, 4 * sd1 / std::sqrt(R));
}

// Brute-force oracle: a 3-patch chain without births, so the individual
// count never grows and the reachable state space is finite. States are
// enumerated breadth-first and the master equation is propagated with small
// Euler steps.
TEST(SmallChainOracle, MeanOccupancyMatchesMasterEquation) {
  ModelSpec m;
  m.law = Law::kConstant;
  m.b = 0.0;
  m.d = 0.5;
  m.gamma = 0.8;
  m.rho = 0.5;
  m.kappa = 0.3;
  const Chain chain(m);
  const std::int64_t N = 3;
  const SparseCounts x0({1, 0, 1, 0, 1});
  std::map<std::vector<std::int64_t>, int> index;
  std::vector<SparseCounts> states;
  auto key = [](const SparseCounts& x) { return x.dense(); };
  index[key(x0)] = 0;
  states.push_back(x0);
  std::vector<std::vector<std::pair<int, double>>> out;
  for (std::size_t s = 0; s < states.size(); ++s) {
    RateTable t;
    chain.enumerate_rates(states[s], N, t);
    out.emplace_back();
    for (const auto& e : t) {
      SparseCounts y = states[s];
      apply_jump(y, e.jump);
      auto [it, fresh] = index.try_emplace(key(y), static_cast<int>(states.size()));
      if (fresh) states.push_back(y);
      out[s].push_back({it->second, e.rate});
    }
  }
  const std::size_t S = states.size();
  ASSERT_GT(S, 10u);
  std::vector<double> p(S, 0.0);
  p[0] = 1.0;
  const double T = 1.0, h = 1e-4;
  for (int step = 0; step < static_cast<int>(T / h); ++step) {
    std::vector<double> dp(S, 0.0);
    for (std::size_t s = 0; s < S; ++s)
      for (const auto& [to, rate] : out[s]) {
        dp[s] -= rate * p[s];
        dp[to] += rate * p[s];
      }
    for (std::size_t s = 0; s < S; ++s) p[s] += h * dp[s];
  }
  double expect_s1 = 0.0;
  for (std::size_t s = 0; s < S; ++s) expect_s1 += p[s] * moment_S(density(states[s], N), 1.0);

  const int R = 20000;
  SimOptions opt;
  opt.recording = Recording::none();
  std::vector<double> ssa, tc;
  for (int r = 0; r < R; ++r) {
    ssa.push_back(moment_S(density(simulate_ssa(chain, x0, N, T, r, opt).states.back(), N), 1.0));
    tc.push_back(moment_S(density(simulate_time_change(chain, x0, N, T, r, opt).states.back(), N), 1.0));
  }
  // Euler bias on the master equation is O(h), far below the Monte-Carlo error.
  EXPECT_NEAR(stats::mean(ssa), expect_s1, 4 * stats::standard_error(ssa));
  EXPECT_NEAR(stats::mean(tc), expect_s1, 4 * stats::standard_error(tc));
}

TEST(TimeChange, SingleFamilyIsPoisson) {
  const double lambda = 2.0, T = 3.0;
  const std::int64_t N = 10;
  const double mean = N * lambda * T;
  std::vector<double> counts_tc, counts_ssa;
  for (std::uint64_t r = 0; r < 300; ++r) {
    SimOptions opt;
    opt.recording = Recording::none();
    const auto a = simulate_time_change(Immigration{lambda}, SparseCounts({0}), N, T, r, opt);
    const auto b = simulate_ssa(Immigration{lambda}, SparseCounts({0}), N, T, r, opt);
    EXPECT_NEAR(static_cast<double>(a.events), mean, 3 * std::sqrt(mean) + 15);
    counts_tc.push_back(static_cast<double>(a.events));
    counts_ssa.push_back(static_cast<double>(b.events));
  }
  EXPECT_NEAR(stats::mean(counts_tc), mean, 4 * std::sqrt(mean / 300));
  EXPECT_NEAR(stats::variance(counts_tc), mean, 0.25 * mean);
  EXPECT_NEAR(stats::mean(counts_ssa), mean, 4 * std::sqrt(mean / 300));
}

TEST(TimeChange, AgreesWithSsaInLaw) {
  const Chain chain{ModelSpec{}};
  const std::int64_t N = 50;
  const SparseCounts x0 = diagnostics::initial_counts(DensityVector{{0, 0.4}, {2, 0.2}, {4, 0.2}, {6, 0.2}}, N);
  SimOptions opt;
  opt.recording = Recording::none();
  std::vector<double> a, b;
  for (std::uint64_t r = 0; r < 300; ++r) {
    a.push_back(moment_S(density(simulate_ssa(chain, x0, N, 1.0, r, opt).states.back(), N), 1.0));
    b.push_back(moment_S(density(simulate_time_change(chain, x0, N, 1.0, 5000 + r, opt).states.back(), N), 1.0));
  }
  EXPECT_GT(stats::ks_two_sample(a, b).p_value, 0.01);
}

TEST(Martingale, StartsAtZeroAndVanishesForFrozenModel) {
  const SparseCounts x0({4, 3, 3});
  const auto frozen = simulate_ssa(Chain(zero_model()), x0, 10, 2.0, 1);
  const auto path = martingale_path(frozen, Chain(zero_model()));
  for (const auto& v : path.values) EXPECT_EQ(weighted_norm(v), 0.0);
  const Chain chain{ModelSpec{}};
  const auto traj = simulate_ssa(chain, x0, 10, 2.0, 5);
  const auto mp = martingale_path(traj, chain);
  ASSERT_FALSE(mp.values.empty());
  EXPECT_EQ(weighted_norm(mp.values.front()), 0.0);
  EXPECT_EQ(mp.times.back(), 2.0);
}

TEST(Martingale, MatchesTableCompensator) {
  // Generic path (table drift) and the chain's closed-form drift agree.
  struct TableOnly {
    Chain chain;
    void enumerate_rates(const SparseCounts& x, std::int64_t n, RateTable& t) const { chain.enumerate_rates(x, n, t); }
  };
  const Chain chain{ModelSpec{}};
  const auto traj = simulate_ssa(chain, SparseCounts({10, 5, 5}), 20, 1.0, 3);
  const auto a = martingale_path(traj, chain);
  const auto b = martingale_path(traj, TableOnly{chain});
  ASSERT_EQ(a.values.size(), b.values.size());
  for (std::size_t k = 0; k < a.values.size(); ++k) EXPECT_LE(weighted_norm(a.values[k] - b.values[k]), 1e-10);
}

TEST(Martingale, MeanIsZeroWithinThreeSigma) {
  diagnostics::StudySetup s;
  s.x0 = DensityVector{{0, 0.4}, {2, 0.2}, {4, 0.2}, {6, 0.2}};
  s.T = 1.0;
  s.seed = 77;
  const auto rep = diagnostics::martingale_study(s, 100, 200);
  EXPECT_TRUE(rep.all_within());
  EXPECT_GT(rep.mean.size(), 5u);
}

}  // namespace
}  // namespace mpp
