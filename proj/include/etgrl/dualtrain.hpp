#pragma once

// Alternating optimization of the trajectory generator (by ES, policy
// frozen) and the residual policy (by actor-critic, generator frozen). All
// ES rollouts are pushed into the replay buffer before the next RL phase.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "etgrl/etg.hpp"
#include "etgrl/rlcore.hpp"
#include "etgrl/rollout.hpp"

namespace etgrl::train {

enum class Variant { kEtgRl, kTgRl, kCpgRl, kEsOnly, kRlOnly };

// etg-rl, tg-rl, cpg-rl, es-only, rl-only. Unknown names throw ArgumentError.
std::string ToString(Variant v);
Variant ParseVariant(const std::string& name);

struct DualConfig {
  int outer_iterations = 40;
  int rl_steps = 10000;        // E, environment steps per RL phase
  int etg_iterations = 10;     // ES iterations per ETG phase
  int warmup_steps = 1000;     // buffer size before the first update
  int eval_episodes = 5;
  int metrics_every = 1000;    // environment steps between step rows
  std::uint64_t seed = 0;

  void Validate() const;
};

struct TrainSetup {
  TaskConfig task;
  GeneratorSpec generator = DefaultGenerator();
  MotionPrior prior;
  es::EsConfig es;
  rl::RlConfig rl;
  DualConfig dual;
  Variant variant = Variant::kEtgRl;

  void Validate() const;
};

// Applies an ablation variant to a shared setup.
TrainSetup ApplyVariant(TrainSetup setup, Variant variant);

// Generator parameters every variant except rl-only starts from.
trajgen::TrajectoryParams InitialParams(const TrainSetup& setup);

struct RunArtifacts {
  Variant variant = Variant::kEtgRl;
  trajgen::TrajectoryParams initial_params;
  trajgen::TrajectoryParams final_params;
  trajgen::TrajectoryParams best_params;
  nlohmann::json policy;
  nlohmann::json critic;
  double best_eval_return = -std::numeric_limits<double>::infinity();
  int best_outer = -1;
  double final_eval_return = 0.0;
  std::vector<rl::MetricsRow> metrics;
  std::vector<es::IterationRecord> evolution;
  std::int64_t env_steps = 0;
  std::int64_t es_transitions = 0;
  std::int64_t rl_transitions = 0;
  int buffer_size = 0;
  int diverged_episodes = 0;
  int search_dim = 0;  // coordinates perturbed by ES (0 if never evolved)
};

enum class Phase { kEtgBegin, kEtgEnd, kRlBegin, kRlEnd };

struct PhaseEvent {
  int outer = 0;
  Phase phase = Phase::kEtgBegin;
  const rl::ResidualAgent& agent;
  const trajgen::TrajectoryParams& params;
  const rl::ReplayBuffer& buffer;
  std::int64_t env_steps = 0;
};

struct RunHooks {
  // Run directory; empty disables all file output.
  std::filesystem::path out_dir;
  bool write_traces = true;
  // Restart from checkpoints/latest.json in out_dir with an empty buffer.
  bool resume = false;
  // Written to config.json when non-null.
  nlohmann::json config_snapshot;
  std::function<void(const PhaseEvent&)> on_phase;
};

RunArtifacts DualTrain(const TrainSetup& setup, const RunHooks& hooks = {});

RunArtifacts RunAblation(Variant variant, const TrainSetup& shared,
                         const RunHooks& hooks = {});

PolicyView ViewOf(const rl::ResidualAgent& agent);

// Loads the generator and policy stored in a checkpoint file.
struct LoadedCheckpoint {
  trajgen::TrajectoryParams params;
  nn::Mlp policy;
  double residual_bound = 0.3;
  Vec input_scale;
  bool uses_policy = true;
};
LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& file);

}  // namespace etgrl::train
