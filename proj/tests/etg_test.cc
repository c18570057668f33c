#include "etgrl/etg.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace etgrl::es {
namespace {

using trajgen::CpgConfig;
using trajgen::RbfConfig;
using trajgen::TrajectoryParams;

using testing::RandomParams;
using testing::SyntheticFitness;
using testing::TrajectoryGap;

TrajectoryParams ReachableTarget(const CpgConfig& cpg, const RbfConfig& rbf,
                                 std::uint64_t seed) {
  return testing::ReachableTarget(cpg, rbf, 12, seed);
}

struct Fixture {
  CpgConfig cpg;
  RbfConfig rbf{20, 0.0, 4};
};

TEST(EsConfigTest, Validate) {
  EsConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.population = 3;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = {};
  cfg.noise_std = 0.0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = {};
  cfg.control_points = 1;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = {};
  cfg.noise_decay = 1.5;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  EXPECT_THROW(ParseNormalization("l2"), ConfigError);
  EXPECT_EQ(ParseSearchSpace(ToString(SearchSpace::kParameters)),
            SearchSpace::kParameters);
}

TEST(NoiseTest, AntitheticPairsMirror) {
  const auto noise = SampleNoise(10, 6, 0.3, true, 42);
  for (int p = 0; p < 3; ++p) EXPECT_EQ(noise[2 * p], -noise[2 * p + 1]);
  EXPECT_NE(noise[0], noise[2]);
}

TEST(PerturbTest, SearchDimensions) {
  Fixture f;
  EsConfig cfg;
  EXPECT_EQ(SearchDim(cfg, f.rbf), 12 * 4);
  cfg.space = SearchSpace::kParameters;
  EXPECT_EQ(SearchDim(cfg, f.rbf), 4 * 20 + 4);
  const auto cands = PerturbCandidates(
      EsState::Start(TrajectoryParams::Zero(f.rbf), 1), cfg, f.cpg, f.rbf);
  EXPECT_EQ(cands[0].noise.size(), 84);
}

TEST(PerturbTest, AntitheticControlPointsMirrorCurrent) {
  Fixture f;
  EsConfig cfg;
  cfg.population = 2;
  const auto state = EsState::Start(RandomParams(f.rbf, 3, 0.3), 9);
  const auto cands = PerturbCandidates(state, cfg, f.cpg, f.rbf);
  const Vec base =
      trajgen::SampleControlPoints(state.params, f.cpg, f.rbf, 12).Stacked();
  const Vec a =
      trajgen::SampleControlPoints(cands[0].params, f.cpg, f.rbf, 12).Stacked();
  const Vec b =
      trajgen::SampleControlPoints(cands[1].params, f.cpg, f.rbf, 12).Stacked();
  EXPECT_LT(((a - base) + (b - base)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PerturbTest, CandidatesCarryInjectedNoise) {
  Fixture f;
  EsConfig cfg;
  const auto state = EsState::Start(RandomParams(f.rbf, 4, 0.3), 10);
  const Vec base =
      trajgen::SampleControlPoints(state.params, f.cpg, f.rbf, 12).Stacked();
  for (const auto& c : PerturbCandidates(state, cfg, f.cpg, f.rbf)) {
    const Vec pts =
        trajgen::SampleControlPoints(c.params, f.cpg, f.rbf, 12).Stacked();
    EXPECT_LT((pts - base - c.noise).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(PerturbTest, TinyNoiseReproducesCurrent) {
  Fixture f;
  EsConfig cfg;
  cfg.noise_std = 1e-12;
  const auto state = EsState::Start(RandomParams(f.rbf, 5, 0.3), 11);
  const Vec base =
      trajgen::SampleControlPoints(state.params, f.cpg, f.rbf, 12).Stacked();
  for (const auto& c : PerturbCandidates(state, cfg, f.cpg, f.rbf)) {
    const Vec pts =
        trajgen::SampleControlPoints(c.params, f.cpg, f.rbf, 12).Stacked();
    EXPECT_LT((pts - base).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(PerturbTest, TrajectorySpaceLocality) {
  Fixture f;
  EsConfig cfg;
  cfg.noise_std = 0.01;
  cfg.population = 50;
  int within = 0;
  int total = 0;
  for (int it = 0; it < 20; ++it) {
    auto state = EsState::Start(RandomParams(f.rbf, 100 + it, 0.3), it);
    const Vec base =
        trajgen::SampleControlPoints(state.params, f.cpg, f.rbf, 12).Stacked();
    for (const auto& c : PerturbCandidates(state, cfg, f.cpg, f.rbf)) {
      const Vec pts =
          trajgen::SampleControlPoints(c.params, f.cpg, f.rbf, 12).Stacked();
      within += (pts - base).cwiseAbs().maxCoeff() <= 0.05 ? 1 : 0;
      ++total;
    }
  }
  EXPECT_GE(within, 0.99 * total);
}

TEST(NormalizeTest, ZScoreAndGuard) {
  const Vec w = NormalizeFitness({1.0, 2.0, 3.0}, FitnessNormalization::kZScore);
  const double sd = std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(w[0], -1.0 / sd, 1e-12);
  EXPECT_NEAR(w[2], 1.0 / sd, 1e-12);
  EXPECT_EQ(NormalizeFitness({5.0, 5.0, 5.0}, FitnessNormalization::kZScore),
            Vec::Zero(3));
  EXPECT_EQ(NormalizeFitness({5.0, 5.0}, FitnessNormalization::kRank),
            Vec::Zero(2));
}

TEST(NormalizeTest, RankCenteredWithTies) {
  const Vec w = NormalizeFitness({10.0, -3.0, 10.0, 0.0},
                                 FitnessNormalization::kRank);
  EXPECT_DOUBLE_EQ(w[1], -0.5);
  EXPECT_DOUBLE_EQ(w[3], -0.5 + 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(w[0], (2.5 / 3.0) - 0.5);
  EXPECT_DOUBLE_EQ(w[0], w[2]);
}

TEST(NormalizeTest, NonFiniteGetsZeroWeight) {
  int bad = 0;
  const Vec w =
      NormalizeFitness({1.0, std::nan(""), 3.0, -INFINITY},
                       FitnessNormalization::kZScore, &bad);
  EXPECT_EQ(bad, 2);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_EQ(w[3], 0.0);
  EXPECT_DOUBLE_EQ(w[0], -1.0);
  EXPECT_DOUBLE_EQ(w[2], 1.0);
}

TEST(AggregateTest, EqualFitnessLeavesParamsUnchanged) {
  Fixture f;
  EsConfig cfg;
  const auto state = EsState::Start(RandomParams(f.rbf, 6, 0.3), 12);
  const auto cands = PerturbCandidates(state, cfg, f.cpg, f.rbf);
  const auto next = AggregateUpdate(state, cfg, cands,
                                    std::vector<double>(cfg.population, 2.0));
  EXPECT_EQ(next.params, state.params);
}

TEST(AggregateTest, TwoPointMovesTowardBetter) {
  Fixture f;
  EsConfig cfg;
  cfg.population = 2;
  const auto state = EsState::Start(RandomParams(f.rbf, 7, 0.3), 13);
  const auto cands = PerturbCandidates(state, cfg, f.cpg, f.rbf);
  const auto next = AggregateUpdate(state, cfg, cands, {1.0, -1.0});
  const Vec step = next.params.Flatten() - state.params.Flatten();
  const Vec o0 = cands[0].params.Flatten() - state.params.Flatten();
  const Vec o1 = cands[1].params.Flatten() - state.params.Flatten();
  // Weights (+1, -1): step = lr/2 (o0 - o1). Offsets share the part that
  // projects the current params onto the fit's row space; it cancels.
  EXPECT_LT((step - 0.5 * cfg.learning_rate * (o0 - o1)).norm(),
            1e-9 * o0.norm());
  const Vec moved =
      trajgen::SampleControlPoints(next.params, f.cpg, f.rbf, 12).Stacked() -
      trajgen::SampleControlPoints(state.params, f.cpg, f.rbf, 12).Stacked();
  EXPECT_LT((moved - cfg.learning_rate * cands[0].noise).cwiseAbs().maxCoeff(),
            1e-9);
  EXPECT_EQ(next.best_fitness, 1.0);
  EXPECT_EQ(next.best_params, cands[0].params);
}

TEST(AggregateTest, NonFiniteCounted) {
  Fixture f;
  EsConfig cfg;
  cfg.population = 4;
  const auto state = EsState::Start(TrajectoryParams::Zero(f.rbf), 1);
  const auto cands = PerturbCandidates(state, cfg, f.cpg, f.rbf);
  const auto next =
      AggregateUpdate(state, cfg, cands, {1.0, std::nan(""), 0.0, 2.0});
  EXPECT_EQ(next.nonfinite_fitness_count, 1);
  EXPECT_TRUE(next.params.weights.allFinite());
  EXPECT_THROW(AggregateUpdate(state, cfg, cands, {1.0}), ArgumentError);
}

TEST(EvolveTest, ZeroIterationsIsIdentity) {
  Fixture f;
  EsConfig cfg;
  cfg.max_iters = 0;
  const auto init = RandomParams(f.rbf, 8, 0.3);
  auto state = EsState::Start(init, 1);
  const auto result =
      Evolve(state, cfg, f.cpg, f.rbf, SyntheticFitness(init, f.cpg, f.rbf));
  EXPECT_EQ(state.params, init);
  EXPECT_EQ(state.iteration, 0);
  EXPECT_TRUE(result.transitions.empty());
  EXPECT_EQ(result.evaluations, 0);
}

TEST(EvolveTest, EvaluatesCenterAndCandidates) {
  Fixture f;
  EsConfig cfg;
  cfg.max_iters = 3;
  cfg.convergence_window = 0;
  auto state = EsState::Start(TrajectoryParams::Zero(f.rbf), 1);
  int calls = 0;
  const auto result = Evolve(state, cfg, f.cpg, f.rbf,
                             [&](const TrajectoryParams&, std::uint64_t) {
                               ++calls;
                               FitnessReport r;
                               r.total_return = 0.0;
                               r.transitions.resize(2);
                               return r;
                             });
  EXPECT_EQ(calls, 3 * (cfg.population + 1));
  EXPECT_EQ(result.evaluations, calls);
  EXPECT_EQ(result.transitions.size(), static_cast<size_t>(2 * calls));
  EXPECT_EQ(result.history.size(), 3u);
}

TEST(EvolveTest, BestSoFarMonotone) {
  Fixture f;
  EsConfig cfg;
  cfg.max_iters = 40;
  cfg.convergence_window = 0;
  auto state = EsState::Start(RandomParams(f.rbf, 9, 0.3), 2);
  // Noisy callback: fitness is random, so only bookkeeping keeps it monotone.
  const auto result = Evolve(state, cfg, f.cpg, f.rbf,
                             [](const TrajectoryParams&, std::uint64_t seed) {
                               FitnessReport r;
                               r.total_return =
                                   static_cast<double>(seed % 1000) - 500.0;
                               return r;
                             });
  for (size_t i = 1; i < state.best_history.size(); ++i) {
    EXPECT_GE(state.best_history[i], state.best_history[i - 1]);
  }
  EXPECT_EQ(result.history.back().best_fitness, state.best_fitness);
}

TEST(EvolveTest, ConvergesOnFlatFitness) {
  Fixture f;
  EsConfig cfg;
  cfg.max_iters = 100;
  cfg.convergence_window = 5;
  auto state = EsState::Start(TrajectoryParams::Zero(f.rbf), 2);
  const auto result =
      Evolve(state, cfg, f.cpg, f.rbf, [](const TrajectoryParams&, auto) {
        FitnessReport r;
        r.total_return = -1.0;
        return r;
      });
  EXPECT_TRUE(result.converged);
  EXPECT_EQ(state.iteration, 6);
}

TEST(EvolveTest, CallbackFailurePreservesLastState) {
  Fixture f;
  EsConfig cfg;
  cfg.max_iters = 5;
  cfg.convergence_window = 0;
  const auto target = ReachableTarget(f.cpg, f.rbf, 1);
  const auto fit = SyntheticFitness(target, f.cpg, f.rbf);
  auto state = EsState::Start(TrajectoryParams::Zero(f.rbf), 3);
  auto reference = state;
  cfg.max_iters = 2;
  Evolve(reference, cfg, f.cpg, f.rbf, fit);
  int calls = 0;
  cfg.max_iters = 5;
  EXPECT_THROW(Evolve(state, cfg, f.cpg, f.rbf,
                      [&](const TrajectoryParams& p, std::uint64_t s) {
                        if (++calls > 2 * (cfg.population + 1) + 3) {
                          throw std::runtime_error("rollout failed");
                        }
                        return fit(p, s);
                      }),
               std::runtime_error);
  EXPECT_EQ(state.iteration, 2);
  EXPECT_EQ(state.params, reference.params);
}

TEST(EvolveTest, DeterministicAndScheduleIndependent) {
  Fixture f;
  EsConfig cfg;
  cfg.max_iters = 10;
  cfg.convergence_window = 0;
  const auto fit = SyntheticFitness(ReachableTarget(f.cpg, f.rbf, 2), f.cpg,
                                    f.rbf);
  auto a = EsState::Start(TrajectoryParams::Zero(f.rbf), 77);
  auto b = a;
  auto c = a;
  Evolve(a, cfg, f.cpg, f.rbf, fit);
  Evolve(b, cfg, f.cpg, f.rbf, fit);
  cfg.parallelism = 4;
  Evolve(c, cfg, f.cpg, f.rbf, fit);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params, c.params);
  EXPECT_EQ(a.best_history, c.best_history);
}

TEST(EvolveTest, SyntheticBenchmarkClosesGap) {
  for (std::uint64_t seed : {1, 2}) {
    const auto out = testing::RunSyntheticBenchmark(seed, 200);
    EXPECT_GE(out.closed_fraction(), 0.9) << "seed " << seed;
    // Trajectory-space distance is the square root of the fitness gap.
    EXPECT_LE(std::sqrt(out.final_fitness / out.initial_fitness), 0.2);
  }
}

TEST(HistoryTest, CsvFormat) {
  std::ostringstream os;
  WriteHistoryCsvHeader(os);
  WriteHistoryCsv(os, {{1, -2.5, -3.0, 0.5, 0.01}});
  EXPECT_EQ(os.str(),
            "iteration,best_fitness,mean_fitness,std_fitness,update_norm\n"
            "1,-2.5,-3,0.5,0.01\n");
}

TEST(BoxSearchTest, FindsQuadraticMinimumWithinBudget) {
  EsConfig cfg;
  cfg.noise_std = 0.1;
  cfg.learning_rate = 1.0;
  cfg.normalization = FitnessNormalization::kRank;
  const Vec goal = (Vec(3) << 0.2, 0.9, 0.6).finished();
  int calls = 0;
  const auto r = MinimizeInBox(
      Vec::Constant(3, 0.5), cfg,
      [&](const Vec& x) {
        ++calls;
        EXPECT_GE(x.minCoeff(), 0.0);
        EXPECT_LE(x.maxCoeff(), 1.0);
        return (x - goal).squaredNorm();
      },
      801, 3);
  EXPECT_EQ(calls, r.evaluations);
  EXPECT_LE(r.evaluations, 801);
  EXPECT_EQ(r.evaluations, 801);
  EXPECT_LT((r.best_x - goal).cwiseAbs().maxCoeff(), 0.03);
}

TEST(BoxSearchTest, BudgetBelowOneIterationEvaluatesStartOnly) {
  int calls = 0;
  const auto r = MinimizeInBox(Vec::Constant(2, 2.0), EsConfig{},
                               [&](const Vec& x) {
                                 ++calls;
                                 return x.sum();
                               },
                               16, 1);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(r.best_x, Vec::Constant(2, 1.0));
  EXPECT_EQ(r.best_value, 2.0);
}

}  // namespace
}  // namespace etgrl::es
