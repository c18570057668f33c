#pragma once

// Controller composition and episode rollouts: the generator's gait signal
// plus the policy's residual, clamped to the joint limits, drives the
// simulator.

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "etgrl/common.hpp"
#include "etgrl/neural.hpp"
#include "etgrl/quadsim.hpp"
#include "etgrl/rlcore.hpp"
#include "etgrl/trajgen.hpp"
#include "etgrl/transition.hpp"

namespace etgrl::train {

struct TaskConfig {
  sim::TerrainProfile terrain;
  sim::SimParams params;
  sim::RewardConfig reward;
  sim::EpisodeOptions episode;
  sim::ContactParams contact;
  sim::RobotGeometry geometry;
  bool include_velocity = true;

  sim::ObservationLayout layout() const { return {include_velocity}; }
  sim::Simulator MakeSimulator() const;
};

struct GeneratorSpec {
  trajgen::CpgConfig cpg;
  trajgen::RbfConfig rbf;  // resolved bandwidth
  trajgen::PhaseLayout layout = trajgen::PhaseLayout::Trot();

  Vec Signal(const trajgen::TrajectoryParams& params, double t) const {
    return trajgen::GaitSignal(params, cpg, rbf, layout, t);
  }
};

// Default generator: 2 Hz CPG, 20 RBF units, 8 outputs, trot phasing.
GeneratorSpec DefaultGenerator();

// Per-leg walking prior over gait phase s in [0, 1):
//   hip  = stance_hip + hip_amplitude cos(2 pi s)
//   knee = stance_knee - knee_amplitude max(0, -sin(2 pi s))
// Stance is the first half cycle (hip sweeping back), swing the second.
struct MotionPrior {
  double hip_amplitude = 0.25;   // rad
  double knee_amplitude = 0.5;   // rad
  int fit_samples = 64;
};

Vec MotionPriorTargets(const MotionPrior& prior,
                       const sim::RobotGeometry& geometry, double phase01);
trajgen::TrajectoryParams MotionPriorParams(const GeneratorSpec& gen,
                                            const MotionPrior& prior,
                                            const sim::RobotGeometry& geometry);
// W = 0, b = pose: a generator that holds a fixed posture.
trajgen::TrajectoryParams StaticPoseParams(const trajgen::RbfConfig& rbf,
                                           const Vec& pose);

// Residual source. A null network means zero residuals.
struct PolicyView {
  const nn::Mlp* net = nullptr;
  Vec input_scale;
  double residual_bound = 0.3;
};

// Steps one episode at a time, building observations and transitions.
class ControlLoop {
 public:
  ControlLoop(sim::Simulator& sim, const GeneratorSpec& gen,
              const trajgen::TrajectoryParams& params, bool include_velocity,
              double residual_bound);

  // Resets the simulator and returns the first observation.
  const Vec& Begin(std::uint64_t seed);

  struct Outcome {
    Transition transition;  // done marks terminal (failure) ends only
    Vec command;            // composed joint targets
    double reward = 0.0;
    bool episode_over = false;
    bool diverged = false;
    sim::StepInfo info;
  };
  // Applies generator + residual for one control period.
  Outcome Advance(const Vec& residual);

  const Vec& observation() const { return obs_; }
  const Vec& generator_signal() const { return signal_; }
  const rl::ActionComposer& composer() const { return composer_; }
  sim::Simulator& simulator() { return sim_; }

 private:
  sim::Simulator& sim_;
  const GeneratorSpec& gen_;
  const trajgen::TrajectoryParams& params_;
  bool include_velocity_;
  rl::ActionComposer composer_;
  Vec obs_;
  Vec signal_;
  bool active_ = false;
};

struct RolloutOptions {
  double exploration_std = 0.0;
  bool collect_transitions = false;
  // When set, one JSON trace record per control step is written here.
  std::ostream* trace = nullptr;
};

struct RolloutResult {
  double total_return = 0.0;
  int steps = 0;
  bool diverged = false;
  bool terminated = false;
  double distance = 0.0;  // trunk x travelled, m
  TransitionList transitions;
};

RolloutResult Rollout(const TaskConfig& task, const GeneratorSpec& gen,
                      const trajgen::TrajectoryParams& params,
                      const PolicyView& policy, std::uint64_t seed,
                      const RolloutOptions& options = {});

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

// Noise-free episodes with seeds derived from `seed`.
EvalResult Evaluate(const TaskConfig& task, const GeneratorSpec& gen,
                    const trajgen::TrajectoryParams& params,
                    const PolicyView& policy, int episodes, std::uint64_t seed,
                    int parallelism = 1);

}  // namespace etgrl::train
