#include "etgrl/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "etgrl/parallel.hpp"

namespace etgrl::train {

sim::Simulator TaskConfig::MakeSimulator() const {
  return sim::Simulator(terrain, params, reward, episode, geometry, contact);
}

GeneratorSpec DefaultGenerator() {
  GeneratorSpec g;
  g.rbf.output_dim = sim::kJoints;
  g.rbf = trajgen::Resolve(g.cpg, g.rbf);
  return g;
}

Vec MotionPriorTargets(const MotionPrior& prior,
                       const sim::RobotGeometry& geometry, double phase01) {
  const double a = trajgen::kTwoPi * phase01;
  const double hip = geometry.stance_hip + prior.hip_amplitude * std::cos(a);
  const double knee = geometry.stance_knee -
                      prior.knee_amplitude * std::max(0.0, -std::sin(a));
  Vec q(sim::kJoints);
  for (int leg = 0; leg < sim::kLegs; ++leg) {
    q[2 * leg] = hip;
    q[2 * leg + 1] = knee;
  }
  return q;
}

trajgen::TrajectoryParams MotionPriorParams(
    const GeneratorSpec& gen, const MotionPrior& prior,
    const sim::RobotGeometry& geometry) {
  if (gen.rbf.output_dim != sim::kJoints) {
    throw ConfigError("the motion prior needs an 8-output generator");
  }
  if (prior.fit_samples < 1) throw ConfigError("fit_samples must be >= 1");
  const double period = gen.cpg.Period();
  trajgen::ControlPointSet points;
  for (int i = 0; i < prior.fit_samples; ++i) {
    const double s = static_cast<double>(i) / prior.fit_samples;
    points.points.push_back({s * period, MotionPriorTargets(prior, geometry, s)});
  }
  return trajgen::FitParams(points, gen.cpg, gen.rbf);
}

trajgen::TrajectoryParams StaticPoseParams(const trajgen::RbfConfig& rbf,
                                           const Vec& pose) {
  if (pose.size() != rbf.output_dim) {
    throw ArgumentError("pose length differs from generator output size");
  }
  trajgen::TrajectoryParams p = trajgen::TrajectoryParams::Zero(rbf);
  p.bias = pose;
  return p;
}

ControlLoop::ControlLoop(sim::Simulator& sim, const GeneratorSpec& gen,
                         const trajgen::TrajectoryParams& params,
                         bool include_velocity, double residual_bound)
    : sim_(sim),
      gen_(gen),
      params_(params),
      include_velocity_(include_velocity) {
  composer_.lower = sim.lower_limits();
  composer_.upper = sim.upper_limits();
  composer_.residual_bound = residual_bound;
  composer_.generator_offset =
      sim::ObservationLayout{include_velocity}.generator_offset();
  composer_.Validate();
}

const Vec& ControlLoop::Begin(std::uint64_t seed) {
  const sim::SimState& s = sim_.Reset(seed);
  signal_ = gen_.Signal(params_, s.time);
  obs_ = sim::BuildObservation(s, signal_, include_velocity_);
  active_ = true;
  return obs_;
}

ControlLoop::Outcome ControlLoop::Advance(const Vec& residual) {
  if (!active_) throw StateError("Advance called outside an episode");
  Outcome out;
  out.command = composer_.Compose(signal_, residual);
  sim::StepResult step;
  try {
    step = sim_.Step(out.command);
  } catch (const sim::SimulationDiverged&) {
    out.diverged = true;
    out.episode_over = true;
    active_ = false;
    return out;
  }
  signal_ = gen_.Signal(params_, sim_.state().time);
  Vec next = sim::BuildObservation(sim_.state(), signal_, include_velocity_);
  out.reward = step.reward;
  out.info = step.info;
  out.episode_over = step.done;
  out.transition = {obs_, out.command, step.reward, next, step.terminated};
  obs_ = std::move(next);
  if (step.done) active_ = false;
  return out;
}

RolloutResult Rollout(const TaskConfig& task, const GeneratorSpec& gen,
                      const trajgen::TrajectoryParams& params,
                      const PolicyView& policy, std::uint64_t seed,
                      const RolloutOptions& options) {
  sim::Simulator sim = task.MakeSimulator();
  ControlLoop loop(sim, gen, params, task.include_velocity,
                   policy.residual_bound);
  NormalSampler explore(SplitSeed(seed, 0x6578706c6f7265));
  RolloutResult result;
  loop.Begin(seed);
  const double x0 = sim.state().position.x();
  const Vec zero = Vec::Zero(sim::kJoints);
  for (;;) {
    const Vec residual =
        policy.net ? rl::Act(*policy.net, loop.observation(),
                             policy.input_scale, policy.residual_bound,
                             options.exploration_std, explore)
                   : zero;
    auto out = loop.Advance(residual);
    if (out.diverged) {
      result.diverged = true;
      result.terminated = true;
      break;
    }
    result.total_return += out.reward;
    ++result.steps;
    if (options.trace) {
      *options.trace
          << sim::ToJson(sim::MakeTraceRecord(sim, out.command, out.reward))
                 .dump()
          << '\n';
    }
    if (options.collect_transitions) {
      result.transitions.push_back(std::move(out.transition));
    }
    if (out.episode_over) {
      result.terminated = !out.info.time_limit || out.info.fell ||
                          out.info.ceiling_hit || out.info.left_walkway;
      break;
    }
  }
  result.distance = sim.state().position.x() - x0;
  return result;
}

EvalResult Evaluate(const TaskConfig& task, const GeneratorSpec& gen,
                    const trajgen::TrajectoryParams& params,
                    const PolicyView& policy, int episodes, std::uint64_t seed,
                    int parallelism) {
  if (episodes < 1) throw ArgumentError("evaluation needs >= 1 episode");
  EvalResult r;
  r.returns.resize(episodes);
  ParallelFor(episodes, parallelism, [&](int i) {
    r.returns[i] = Rollout(task, gen, params, policy,
                           SplitSeed(seed, 0x6576616c, i))
                       .total_return;
  });
  double sum = 0.0;
  for (double v : r.returns) sum += v;
  r.mean = sum / episodes;
  double var = 0.0;
  for (double v : r.returns) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / episodes);
  return r;
}

}  // namespace etgrl::train
