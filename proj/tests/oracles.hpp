#pragma once

// Reference computations shared by the unit tests and the acceptance
// runner. Each one is independent of the code path it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "etgrl/etg.hpp"
#include "etgrl/neural.hpp"
#include "etgrl/rlcore.hpp"
#include "etgrl/trajgen.hpp"

namespace etgrl::testing {

inline trajgen::TrajectoryParams RandomParams(const trajgen::RbfConfig& rbf,
                                              std::uint64_t seed,
                                              double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  auto p = trajgen::TrajectoryParams::Zero(rbf);
  for (int i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = n(rng);
  for (int i = 0; i < p.bias.size(); ++i) p.bias[i] = n(rng);
  return p;
}

// ---- synthetic trajectory-matching benchmark ----

inline constexpr int kProbePhases = 32;

// Squared distance between two trajectories summed over probe phases.
inline double TrajectoryGap(const trajgen::TrajectoryParams& a,
                            const trajgen::TrajectoryParams& b,
                            const trajgen::CpgConfig& cpg,
                            const trajgen::RbfConfig& rbf) {
  double sum = 0.0;
  for (int i = 0; i < kProbePhases; ++i) {
    const double t = i * cpg.Period() / kProbePhases;
    sum += (trajgen::GeneratorOutput(a, cpg, rbf, t) -
            trajgen::GeneratorOutput(b, cpg, rbf, t))
               .squaredNorm();
  }
  return sum;
}

inline es::FitnessFn SyntheticFitness(const trajgen::TrajectoryParams& target,
                                      const trajgen::CpgConfig& cpg,
                                      const trajgen::RbfConfig& rbf) {
  return [=](const trajgen::TrajectoryParams& p, std::uint64_t) {
    es::FitnessReport r;
    r.total_return = -TrajectoryGap(p, target, cpg, rbf);
    return r;
  };
}

// Target the generator can represent through `control_points` samples.
inline trajgen::TrajectoryParams ReachableTarget(
    const trajgen::CpgConfig& cpg, const trajgen::RbfConfig& rbf,
    int control_points, std::uint64_t seed) {
  const auto raw = RandomParams(rbf, seed, 0.1);
  return trajgen::FitParams(
      trajgen::SampleControlPoints(raw, cpg, rbf, control_points), cpg, rbf);
}

struct SyntheticOutcome {
  double initial_fitness = 0.0;
  double final_fitness = 0.0;
  // Fraction of the gap to the optimum (fitness 0) that was closed.
  double closed_fraction() const {
    return 1.0 - final_fitness / initial_fitness;
  }
};

inline SyntheticOutcome RunSyntheticBenchmark(std::uint64_t seed,
                                              int iterations) {
  const trajgen::CpgConfig cpg;
  const trajgen::RbfConfig rbf{20, 0.0, 4};
  es::EsConfig cfg;
  cfg.population = 16;
  cfg.noise_std = 0.02;
  cfg.learning_rate = 0.5;
  cfg.max_iters = iterations;
  cfg.convergence_window = 0;
  const auto target = ReachableTarget(cpg, rbf, cfg.control_points, seed);
  const auto init = trajgen::TrajectoryParams::Zero(rbf);
  const auto fitness = SyntheticFitness(target, cpg, rbf);
  auto state = es::EsState::Start(init, seed);
  es::Evolve(state, cfg, cpg, rbf, fitness);
  return {fitness(init, 0).total_return, fitness(state.params, 0).total_return};
}

// ---- gradient check ----

// Worst per-parameter relative error between Backward and central
// differences of sum(Y .* dy) with step h.
inline double GradientCheck(nn::Mlp net, const Mat& x, const Mat& dy,
                            double h = 1e-5) {
  auto loss = [&](const nn::Mlp& m) {
    return (m.ForwardBatch(x).array() * dy.array()).sum();
  };
  nn::ForwardCache cache;
  net.ForwardBatch(x, &cache);
  const nn::Gradients g = net.Backward(cache, dy);
  double worst = 0.0;
  const int layers = static_cast<int>(net.layers().size());
  for (int l = 0; l < layers; ++l) {
    const int wn = static_cast<int>(net.layers()[l].weight.size());
    const int bn = static_cast<int>(net.layers()[l].bias.size());
    for (int i = 0; i < wn + bn; ++i) {
      auto entry = [&]() -> double& {
        return i < wn ? net.mutable_layers()[l].weight.data()[i]
                      : net.mutable_layers()[l].bias.data()[i - wn];
      };
      const double orig = entry();
      entry() = orig + h;
      const double up = loss(net);
      entry() = orig - h;
      const double down = loss(net);
      entry() = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = i < wn ? g.layers[l].weight.data()[i]
                                     : g.layers[l].bias.data()[i - wn];
      const double denom =
          std::max(1e-6, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

// Random architecture with 1..3 hidden layers of 1..64 units.
inline double RandomGradientCheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> depth(1, 3);
  std::uniform_int_distribution<int> width(1, 64);
  std::uniform_int_distribution<int> io(1, 6);
  std::vector<int> sizes{io(rng)};
  const int hidden = depth(rng);
  for (int h = 0; h < hidden; ++h) sizes.push_back(width(rng));
  sizes.push_back(io(rng));
  const auto out =
      seed % 2 == 0 ? nn::Activation::kIdentity : nn::Activation::kTanh;
  const nn::Mlp net =
      nn::Mlp::Random(sizes, nn::Activation::kTanh, out, seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat x(sizes.front(), 10);
  Mat dy(sizes.back(), 10);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (int i = 0; i < dy.size(); ++i) dy.data()[i] = n(rng);
  return GradientCheck(net, x, dy);
}

// ---- two-state deterministic MDP ----
//
// States A and B alternate under a fixed policy. Leaving A pays 1, leaving
// B pays 0. Observations are one-hot, the action is a single coordinate
// pinned to 0 by the joint limits.

inline std::array<double, 2> TwoStateValueIteration(double gamma) {
  std::array<double, 2> v{0.0, 0.0};
  for (int i = 0; i < 10000; ++i) v = {1.0 + gamma * v[1], 0.0 + gamma * v[0]};
  return v;
}

struct TwoStateRun {
  std::array<double, 2> q{0.0, 0.0};
  std::int64_t skipped = 0;
  bool finite = true;
};

inline TwoStateRun TrainTwoStateCritic(std::uint64_t seed, int updates,
                                       double gamma) {
  rl::RlConfig cfg;
  cfg.gamma = gamma;
  cfg.soft_update = 0.05;
  cfg.critic_lr = 3e-3;
  const rl::ActionComposer composer{Vec::Zero(1), Vec::Zero(1), 0.3, -1};
  const Vec scale = Vec::Ones(2);
  const rl::UpdateContext ctx{cfg, composer, scale};

  nn::Mlp critic = nn::Mlp::Random({3, 32, 32, 1}, nn::Activation::kTanh,
                                   nn::Activation::kIdentity, seed);
  nn::Mlp critic_target = critic;
  const nn::Mlp policy({2, 1}, nn::Activation::kTanh, nn::Activation::kTanh);
  auto opt = nn::OptimState::For(critic, cfg.critic_lr);

  const Vec a = (Vec(2) << 1.0, 0.0).finished();
  const Vec b = (Vec(2) << 0.0, 1.0).finished();
  const Transition ta{a, Vec::Zero(1), 1.0, b, false};
  const Transition tb{b, Vec::Zero(1), 0.0, a, false};
  const rl::Batch batch = rl::Batch::From({&ta, &tb});

  TwoStateRun run;
  for (int i = 0; i < updates; ++i) {
    rl::CriticUpdate(critic, opt, critic_target, policy, batch, ctx);
    nn::SoftUpdate(critic_target, critic, cfg.soft_update);
    run.finite = run.finite && nn::AllFinite(critic.layers());
  }
  run.skipped = opt.skipped_steps;
  const Mat in = (Mat(3, 2) << 1, 0, 0, 1, 0, 0).finished();
  const Mat q = critic.ForwardBatch(in);
  run.q = {q(0, 0), q(0, 1)};
  return run;
}

}  // namespace etgrl::testing
