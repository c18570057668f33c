// Acceptance runner: one PASS/FAIL line per criterion. With arguments, runs
// only the listed criterion numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "etgrl/dualtrain.hpp"
#include "etgrl/sim2real.hpp"
#include "oracles.hpp"

namespace etgrl {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Format(const char* fmt, double a = 0, double b = 0, double c = 0,
                   double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c, d);
  return buf;
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- 1: interpolation ----

Outcome Interpolation() {
  const trajgen::CpgConfig cpg;
  const trajgen::RbfConfig rbf = trajgen::Resolve(cpg, {20, 0.0, 4});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.5);
  double worst = 0.0;
  for (int g = 0; g < 50; ++g) {
    const auto gen = testing::RandomParams(rbf, 1000 + g, 0.3);
    auto set = trajgen::SampleControlPoints(gen, cpg, rbf, 12);
    for (auto& pt : set.points) {
      for (int k = 0; k < pt.target.size(); ++k) pt.target[k] = n(rng);
    }
    const auto fit = trajgen::FitParams(set, cpg, rbf);
    for (const auto& pt : set.points) {
      const Vec out = trajgen::GeneratorOutput(fit, cpg, rbf, pt.phase);
      worst = std::max(worst, (out - pt.target).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-6, Format("worst error %.2e rad", worst)};
}

// ---- 2: ES synthetic convergence ----

Outcome EsConvergence() {
  int ok = 0;
  std::ostringstream d;
  d << "closed fraction";
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto r = testing::RunSyntheticBenchmark(seed, 200);
    ok += r.closed_fraction() >= 0.9;
    d << Format(" %.4f", r.closed_fraction());
  }
  return {ok == 4, d.str()};
}

// ---- 3: gradient oracle ----

Outcome GradientOracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    worst = std::max(worst, testing::RandomGradientCheck(500 + seed));
  }
  return {worst <= 1e-4, Format("worst relative error %.2e", worst)};
}

// ---- 4: TD oracle ----

Outcome TdOracle() {
  const double gamma = 0.9;
  const auto v = testing::TwoStateValueIteration(gamma);
  const auto run = testing::TrainTwoStateCritic(1, 5000, gamma);
  const double err =
      std::max(std::abs(run.q[0] - v[0]), std::abs(run.q[1] - v[1]));
  return {run.finite && err <= 1e-2,
          Format("Q(A)=%.4f vs %.4f, Q(B)=%.4f vs %.4f", run.q[0], v[0],
                 run.q[1], v[1])};
}

// ---- 5: ablation ordering ----

train::TrainSetup AblationSetup() {
  train::TrainSetup s;
  s.task.terrain = sim::TerrainProfile::ForTask("stairstair", 0);
  s.es.population = 16;
  s.es.noise_std = 0.05;
  s.es.common_eval_seed = true;
  s.rl.batch_size = 64;
  s.rl.policy_hidden = {32, 32};
  s.rl.critic_hidden = {64, 64};
  s.rl.buffer_capacity = 100000;
  s.dual.outer_iterations = 40;
  s.dual.rl_steps = 2000;
  s.dual.etg_iterations = 2;
  s.dual.warmup_steps = 500;
  s.dual.eval_episodes = 3;
  s.dual.metrics_every = 0;
  return s;
}

// Return of the best checkpoint of a run on fresh evaluation episodes.
double HeldOutReturn(const train::TrainSetup& shared,
                     const train::RunArtifacts& art) {
  const train::TrainSetup s = train::ApplyVariant(shared, art.variant);
  const nn::Mlp policy = nn::MlpFromJson(art.policy);
  const auto scale = art.policy.at("input_scale").get<std::vector<double>>();
  const train::PolicyView view{
      &policy, Eigen::Map<const Vec>(scale.data(), scale.size()),
      art.policy.at("residual_bound").get<double>()};
  const bool uses_policy = s.dual.rl_steps > 0;
  return train::Evaluate(s.task, s.generator, art.best_params,
                         uses_policy ? view : train::PolicyView{}, 10,
                         SplitSeed(s.dual.seed, 0x686f6c64))
      .mean;
}

Outcome AblationOrdering() {
  const std::vector<train::Variant> variants = {
      train::Variant::kEtgRl, train::Variant::kTgRl, train::Variant::kCpgRl,
      train::Variant::kRlOnly};
  std::vector<double> med;
  std::ostringstream d;
  for (train::Variant v : variants) {
    std::vector<double> returns;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      train::TrainSetup s = AblationSetup();
      s.dual.seed = seed;
      const auto art = train::RunAblation(v, s);
      returns.push_back(HeldOutReturn(s, art));
    }
    med.push_back(Median(returns));
    d << train::ToString(v) << " median " << Format("%.1f", med.back())
      << " [";
    for (std::size_t i = 0; i < returns.size(); ++i) {
      d << (i ? " " : "") << Format("%.1f", returns[i]);
    }
    d << "]; ";
  }
  const double etg = med[0], tg = med[1], cpg = med[2], rl = med[3];
  const bool pass = etg >= tg && etg >= cpg && etg >= rl &&
                    etg - rl >= 0.5 * std::abs(rl);
  return {pass, d.str()};
}

// ---- 6: calibration recovery ----

Outcome CalibrationRecovery() {
  const sim::SimParams base;
  const s2r::ReplaySetup setup;
  int ok = 0;
  std::ostringstream d;
  d << "worst relative error per seed:";
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    NormalSampler rng(SplitSeed(seed, 0x6869646e));
    sim::SimParams hidden = base;
    hidden.kp *= 1.0 + 0.3 * (2.0 * rng.Uniform() - 1.0);
    hidden.kd *= 1.0 + 0.3 * (2.0 * rng.Uniform() - 1.0);
    hidden.foot_friction *= 1.0 + 0.3 * (2.0 * rng.Uniform() - 1.0);
    std::vector<s2r::JointTrace> traces;
    for (int v = 0; v < 3; ++v) {
      traces.push_back(s2r::RecordTrace(
          hidden,
          s2r::ExcitationCommands(setup.geometry, 250, base.control_period, v),
          setup));
    }
    s2r::CalibrationOptions opt;
    opt.budget = 2000;
    opt.seed = seed;
    const auto r = s2r::Calibrate(traces, s2r::CalibrationSpace::Gains(base),
                                  base, setup, opt);
    const double worst =
        std::max({std::abs(r.params.kp / hidden.kp - 1.0),
                  std::abs(r.params.kd / hidden.kd - 1.0),
                  std::abs(r.params.foot_friction / hidden.foot_friction - 1.0)});
    ok += worst <= 0.1;
    d << Format(" %.3f", worst);
  }
  d << " (" << ok << "/4 within 0.1)";
  return {ok >= 3, d.str()};
}

// ---- 7: distillation ----

Outcome Distillation() {
  train::TrainSetup s;
  s.task.terrain = sim::TerrainProfile::ForTask("flat", 0);
  s.es.population = 8;
  s.es.noise_std = 0.05;
  s.es.common_eval_seed = true;
  s.rl.batch_size = 64;
  s.rl.policy_hidden = {32, 32};
  s.rl.critic_hidden = {64, 64};
  s.dual.outer_iterations = 5;
  s.dual.rl_steps = 2000;
  s.dual.etg_iterations = 5;
  s.dual.warmup_steps = 500;
  s.dual.eval_episodes = 3;
  s.dual.metrics_every = 0;
  s.dual.seed = 1;
  const auto art = train::DualTrain(s);

  const nn::Mlp policy = nn::MlpFromJson(art.policy);
  const auto sc = art.policy.at("input_scale").get<std::vector<double>>();
  const Vec scale = Eigen::Map<const Vec>(sc.data(), sc.size());
  const train::PolicyView view{&policy, scale, s.rl.residual_bound};
  const std::uint64_t eval_seed = 77;
  const auto teacher = train::Evaluate(s.task, s.generator, art.best_params,
                                       view, 10, eval_seed);

  s2r::DistillConfig cfg;
  cfg.seed = 3;
  const auto noise = s2r::NoiseProfile::Default(sim::ObservationLayout{false});
  const auto student =
      s2r::Distill({&policy, scale, s.rl.residual_bound}, s.task, s.generator,
                   art.best_params, noise, cfg);
  const auto se = s2r::EvaluateStudent(student, s.task, s.generator,
                                       art.best_params, 10, eval_seed);
  const double ratio = se.mean / teacher.mean;
  return {teacher.mean > 0.0 && ratio >= 0.8 &&
              student.reward_evaluations == 0,
          Format("teacher %.2f, student %.2f, ratio %.3f", teacher.mean,
                 se.mean, ratio)};
}

// ---- 8: physics suite ----

// Nominal gait plus uniform residuals in [-amp, amp], clamped to the limits.
std::vector<Vec> GaitCommands(const sim::Simulator& sim, int steps, double amp,
                              std::uint64_t seed) {
  const auto gen = train::DefaultGenerator();
  const auto params = train::MotionPriorParams(gen, {}, sim.geometry());
  NormalSampler rng(seed);
  std::vector<Vec> out;
  for (int i = 0; i < steps; ++i) {
    Vec a = gen.Signal(params, i * sim.params().control_period);
    for (int j = 0; j < a.size(); ++j) a[j] += amp * (2 * rng.Uniform() - 1);
    out.push_back(a.cwiseMax(sim.lower_limits()).cwiseMin(sim.upper_limits()));
  }
  return out;
}

Outcome PhysicsSuite() {
  std::ostringstream d;
  bool pass = true;

  // Determinism.
  auto run = [](std::uint64_t seed) {
    sim::Simulator sim(sim::TerrainProfile::ForTask("stairstair", 0), {});
    sim.Reset(seed);
    std::vector<double> trace;
    for (const Vec& a : GaitCommands(sim, 200, 0.2, seed)) {
      trace.push_back(sim.Step(a).reward);
      const auto& st = sim.state();
      trace.insert(trace.end(), st.q.data(), st.q.data() + st.q.size());
      trace.push_back(st.position.x());
      trace.push_back(st.position.y());
    }
    return trace;
  };
  const bool deterministic = run(5) == run(5);
  pass = pass && deterministic;
  d << "determinism " << (deterministic ? "ok" : "FAIL");

  // Contact and energy contracts.
  double min_energy = INFINITY, max_pen = 0.0, max_excess = -INFINITY;
  for (const std::string task : {"flat", "stairstair", "slopeslope"}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      sim::Simulator sim(sim::TerrainProfile::ForTask(task, seed), {});
      sim.Reset(seed);
      for (const Vec& a : GaitCommands(sim, 400, 0.3, seed)) {
        const auto r = sim.Step(a);
        min_energy = std::min(min_energy, r.info.energy);
        max_pen = std::max(max_pen, r.info.max_penetration);
        max_excess = std::max(max_excess, r.info.max_friction_excess);
        if (r.done) break;
      }
    }
  }
  pass = pass && min_energy >= 0.0 && max_pen <= 0.005 && max_excess <= 1e-9;
  d << Format("; min energy %.2e J, max penetration %.2e m, friction excess "
              "%.2e N",
              min_energy, max_pen, max_excess);

  // Latency impulse: one perturbed target reaches the motors m substeps later.
  sim::SimParams p;
  p.latency = 3 * p.physics_step;
  sim::EpisodeOptions quiet;
  quiet.initial_joint_noise = 0.0;
  sim::Simulator sim(sim::TerrainProfile::ForTask("flat", 0), p, {}, quiet);
  sim.Reset(0);
  const Vec stance = sim.geometry().StancePose();
  int seen_at = -1;
  bool formula = true;
  std::vector<Vec> issued;
  for (int i = 0; i < 20; ++i) {
    Vec target = stance;
    if (i == 5) target[0] += 0.4;
    issued.push_back(target);
    const Vec q = sim.state().q, qd = sim.state().qd;
    const Vec tau = sim.Substep(target);
    const Vec delayed = i >= 3 ? issued[i - 3] : stance;
    const Vec expect = (p.kp * (delayed - q) - p.kd * qd)
                           .cwiseMax(-p.torque_limit)
                           .cwiseMin(p.torque_limit);
    formula = formula && (tau - expect).cwiseAbs().maxCoeff() < 1e-12;
    const double nominal = p.kp * (stance[0] - q[0]) - p.kd * qd[0];
    if (seen_at < 0 && std::abs(tau[0] - nominal) > 1.0) seen_at = i;
  }
  const bool latency_ok = formula && seen_at == 5 + 3;
  pass = pass && latency_ok;
  d << "; latency impulse at substep " << seen_at << " (expected 8)";
  return {pass, d.str()};
}

// ---- 9: reward contract ----

Outcome RewardContract() {
  double max_energy_only = -INFINITY;
  {
    sim::RewardConfig reward;
    reward.energy_weight = 1.0;
    for (const std::string task : {"flat", "stairstair"}) {
      sim::Simulator sim(sim::TerrainProfile::ForTask(task, 0), {}, reward);
      sim.Reset(2);
      for (const Vec& a : GaitCommands(sim, 300, 0.3, 2)) {
        const auto r = sim.Step(a);
        max_energy_only = std::max(max_energy_only, r.reward);
        if (r.done) break;
      }
    }
  }
  double max_static = 0.0;
  {
    sim::RewardConfig reward;
    reward.energy_weight = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      sim::Simulator sim(sim::TerrainProfile::ForTask("flat", 0), {}, reward);
      sim.Reset(seed);
      // Static: keep commanding the (noisy) targets the robot settled on.
      const Vec hold = sim.state().latency_queue.back();
      for (int i = 0; i < 250; ++i) {
        max_static = std::max(max_static, std::abs(sim.Step(hold).reward));
      }
    }
  }
  return {max_energy_only <= 0.0 && max_static < 1e-3,
          Format("lambda=1 max reward %.3e, lambda=0 static max |reward| %.3e",
                 max_energy_only, max_static)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace etgrl

int main(int argc, char** argv) {
  using namespace etgrl;
  const std::vector<Criterion> all = {
      {1, "rbf interpolation", Interpolation},
      {2, "es synthetic convergence", EsConvergence},
      {3, "gradient oracle", GradientOracle},
      {4, "td oracle", TdOracle},
      {5, "ablation ordering", AblationOrdering},
      {6, "calibration recovery", CalibrationRecovery},
      {7, "distillation", Distillation},
      {8, "simulator physics suite", PhysicsSuite},
      {9, "reward contract", RewardContract},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), c.id) == selected.end()) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("criterion %d %s: %s (%s; %.1f s)\n", c.id, c.name,
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
