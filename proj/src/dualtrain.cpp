#include "etgrl/dualtrain.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

namespace etgrl::train {
namespace {

namespace fs = std::filesystem;

constexpr char kCheckpointSchema[] = "etgrl.checkpoint/1";
constexpr char kReportSchema[] = "etgrl.final_report/1";

constexpr std::uint64_t kAgentTag = 0x6167656e74;
constexpr std::uint64_t kEsTag = 0x6573;
constexpr std::uint64_t kRlTag = 0x726c;
constexpr std::uint64_t kEpisodeTag = 0x747261696e;
constexpr std::uint64_t kEvalTag = 0x6576616c;

struct KindName {
  Variant v;
  const char* name;
};
constexpr KindName kVariantNames[] = {
    {Variant::kEtgRl, "etg-rl"}, {Variant::kTgRl, "tg-rl"},
    {Variant::kCpgRl, "cpg-rl"}, {Variant::kEsOnly, "es-only"},
    {Variant::kRlOnly, "rl-only"},
};

void WriteJsonFile(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Optional run-directory output.
class RunWriter {
 public:
  RunWriter(const RunHooks& hooks, bool append) : hooks_(hooks) {
    if (!enabled()) return;
    fs::create_directories(dir() / "checkpoints");
    if (hooks.write_traces) fs::create_directories(dir() / "traces");
    if (!hooks.config_snapshot.is_null()) {
      WriteJsonFile(dir() / "config.json", hooks.config_snapshot);
    }
    const auto mode = append ? std::ios::app : std::ios::trunc;
    metrics_.open(dir() / "metrics.csv", std::ios::out | mode);
    evolution_.open(dir() / "evolution.csv", std::ios::out | mode);
    if (!metrics_ || !evolution_) {
      throw std::runtime_error("cannot open output files in " + dir().string());
    }
    if (!append) {
      rl::WriteMetricsCsvHeader(metrics_);
      es::WriteHistoryCsvHeader(evolution_);
    }
  }

  bool enabled() const { return !hooks_.out_dir.empty(); }
  const fs::path& dir() const { return hooks_.out_dir; }

  void Metrics(const rl::MetricsRow& row) {
    if (!enabled()) return;
    rl::WriteMetricsRow(metrics_, row);
    metrics_.flush();
  }

  void Evolution(const std::vector<es::IterationRecord>& history) {
    if (!enabled()) return;
    es::WriteHistoryCsv(evolution_, history);
    evolution_.flush();
  }

  void Checkpoint(const std::string& name, const nlohmann::json& j) {
    if (enabled()) WriteJsonFile(dir() / "checkpoints" / name, j);
  }

  std::ofstream Trace(const std::string& name) {
    if (!enabled() || !hooks_.write_traces) return {};
    return std::ofstream(dir() / "traces" / name);
  }

  void Report(const nlohmann::json& j) {
    if (enabled()) WriteJsonFile(dir() / "final_report.json", j);
  }

 private:
  const RunHooks& hooks_;
  std::ofstream metrics_;
  std::ofstream evolution_;
};

double Mean(const std::deque<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

rl::ActionComposer MakeComposer(const TrainSetup& s) {
  rl::ActionComposer c;
  c.lower = s.task.geometry.LowerLimits();
  c.upper = s.task.geometry.UpperLimits();
  c.residual_bound = s.rl.residual_bound;
  c.generator_offset = s.task.layout().generator_offset();
  return c;
}

void Emit(const RunHooks& hooks, int outer, Phase phase,
          const rl::ResidualAgent& agent,
          const trajgen::TrajectoryParams& params,
          const rl::ReplayBuffer& buffer, std::int64_t env_steps) {
  if (hooks.on_phase) {
    hooks.on_phase(PhaseEvent{outer, phase, agent, params, buffer, env_steps});
  }
}

}  // namespace

std::string ToString(Variant v) {
  for (const auto& kn : kVariantNames) {
    if (kn.v == v) return kn.name;
  }
  return "etg-rl";
}

Variant ParseVariant(const std::string& name) {
  for (const auto& kn : kVariantNames) {
    if (name == kn.name) return kn.v;
  }
  throw ArgumentError("unknown variant '" + name + "'");
}

void DualConfig::Validate() const {
  if (outer_iterations < 0 || rl_steps < 0 || etg_iterations < 0 ||
      warmup_steps < 0 || metrics_every < 0) {
    throw ConfigError("dual training counts must be >= 0");
  }
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
}

void TrainSetup::Validate() const {
  task.terrain.Validate();
  task.params.Validate();
  task.reward.Validate();
  task.episode.Validate();
  generator.cpg.Validate();
  generator.rbf.Validate();
  if (generator.rbf.output_dim != sim::kJoints ||
      generator.layout.joint_phase_offsets.size() !=
          static_cast<size_t>(sim::kJoints)) {
    throw ConfigError("generator must produce 8 joint targets");
  }
  es.Validate();
  rl.Validate();
  dual.Validate();
}

TrainSetup ApplyVariant(TrainSetup s, Variant variant) {
  s.variant = variant;
  switch (variant) {
    case Variant::kEtgRl:
      s.es.space = es::SearchSpace::kControlPoints;
      break;
    case Variant::kTgRl:
      s.dual.etg_iterations = 0;
      break;
    case Variant::kCpgRl:
      s.es.space = es::SearchSpace::kParameters;
      break;
    case Variant::kEsOnly:
      s.dual.rl_steps = 0;
      break;
    case Variant::kRlOnly:
      // Pure RL: the generator holds the stance pose and the residual gets
      // the full joint range it needs to produce a gait on its own.
      s.dual.etg_iterations = 0;
      s.rl.residual_bound = 1.0;
      break;
  }
  return s;
}

trajgen::TrajectoryParams InitialParams(const TrainSetup& s) {
  if (s.variant == Variant::kRlOnly) {
    return StaticPoseParams(s.generator.rbf, s.task.geometry.StancePose());
  }
  return MotionPriorParams(s.generator, s.prior, s.task.geometry);
}

PolicyView ViewOf(const rl::ResidualAgent& agent) {
  return {&agent.policy(), agent.input_scale(),
          agent.composer().residual_bound};
}

RunArtifacts DualTrain(const TrainSetup& setup, const RunHooks& hooks) {
  setup.Validate();
  const TaskConfig& task = setup.task;
  const GeneratorSpec& gen = setup.generator;
  const DualConfig& dual = setup.dual;
  const std::uint64_t seed = dual.seed;
  const bool use_policy = dual.rl_steps > 0;
  const sim::ObservationLayout layout = task.layout();

  RunArtifacts art;
  art.variant = setup.variant;
  art.initial_params = InitialParams(setup);

  trajgen::TrajectoryParams params = art.initial_params;
  rl::ResidualAgent agent(layout.size(), setup.rl, MakeComposer(setup),
                          sim::DefaultInputScale(layout),
                          SplitSeed(seed, kAgentTag));
  rl::ReplayBuffer buffer(setup.rl.buffer_capacity);
  es::EsState es_state = es::EsState::Start(params, SplitSeed(seed, kEsTag));
  es::EsConfig es_cfg = setup.es;
  es_cfg.max_iters = dual.etg_iterations;
  if (dual.etg_iterations > 0) {
    art.search_dim = es::SearchDim(es_cfg, gen.rbf);
  }

  int start_outer = 0;
  std::int64_t episode_counter = 0;
  if (hooks.resume) {
    if (hooks.out_dir.empty()) throw ConfigError("resume needs a run directory");
    const auto ck = ReadJsonFile(hooks.out_dir / "checkpoints" / "latest.json");
    if (ck.value("schema", "") != kCheckpointSchema) {
      throw ConfigError("checkpoint schema tag is not etgrl.checkpoint/1");
    }
    params = trajgen::ParamsFromJson(ck.at("params"));
    agent.LoadPolicy(ck.at("policy"));
    agent.LoadCritic(ck.at("critic"));
    agent.LoadTargets(ck.at("targets"));
    es_state.params = params;
    es_state.iteration = ck.at("es_iteration").get<std::int64_t>();
    start_outer = ck.at("outer_iteration").get<int>();
    art.env_steps = ck.at("env_steps").get<std::int64_t>();
    episode_counter = ck.at("episodes").get<std::int64_t>();
    if (ck.at("best_eval_return").is_number()) {
      art.best_eval_return = ck["best_eval_return"].get<double>();
      art.best_outer = ck.at("best_outer").get<int>();
    }
  }
  RunWriter writer(hooks, hooks.resume);

  const std::uint64_t eval_seed = SplitSeed(seed, kEvalTag);
  auto checkpoint = [&](int completed_outer) {
    nlohmann::json j = {
        {"schema", kCheckpointSchema},
        {"variant", ToString(setup.variant)},
        {"outer_iteration", completed_outer},
        {"env_steps", art.env_steps},
        {"episodes", episode_counter},
        {"es_iteration", es_state.iteration},
        {"uses_policy", use_policy},
        {"params", trajgen::ToJson(params, gen.cpg, gen.rbf)},
        {"policy", agent.PolicyCheckpoint()},
        {"critic", agent.CriticCheckpoint()},
        {"targets", agent.TargetsCheckpoint()},
        {"best_outer", art.best_outer}};
    j["best_eval_return"] = std::isfinite(art.best_eval_return)
                                ? nlohmann::json(art.best_eval_return)
                                : nlohmann::json(nullptr);
    return j;
  };

  std::deque<double> recent_returns;
  for (int outer = start_outer; outer < dual.outer_iterations; ++outer) {
    const PolicyView view =
        use_policy ? ViewOf(agent) : PolicyView{nullptr, {}, 0.3};

    // ETG phase: policy frozen.
    Emit(hooks, outer, Phase::kEtgBegin, agent, params, buffer, art.env_steps);
    if (dual.etg_iterations > 0) {
      es_state.params = params;
      const es::FitnessFn fitness = [&](const trajgen::TrajectoryParams& p,
                                        std::uint64_t s) {
        RolloutOptions opt;
        opt.collect_transitions = true;
        RolloutResult r = Rollout(task, gen, p, view, s, opt);
        es::FitnessReport rep;
        rep.total_return = r.total_return;
        rep.episode_length = r.steps;
        rep.transitions = std::move(r.transitions);
        return rep;
      };
      es::EvolveResult evo =
          es::Evolve(es_state, es_cfg, gen.cpg, gen.rbf, fitness);
      params = es_state.params;
      for (auto& tr : evo.transitions) {
        buffer.Push(std::move(tr));
        ++art.es_transitions;
        ++art.env_steps;
      }
      writer.Evolution(evo.history);
      art.evolution.insert(art.evolution.end(), evo.history.begin(),
                           evo.history.end());
    }
    Emit(hooks, outer, Phase::kEtgEnd, agent, params, buffer, art.env_steps);

    // RL phase: generator frozen.
    Emit(hooks, outer, Phase::kRlBegin, agent, params, buffer, art.env_steps);
    double critic_sum = 0.0, actor_sum = 0.0;
    int update_count = 0;
    if (dual.rl_steps > 0) {
      sim::Simulator simulator = task.MakeSimulator();
      ControlLoop loop(simulator, gen, params, task.include_velocity,
                       setup.rl.residual_bound);
      NormalSampler rng(SplitSeed(seed, kRlTag, outer));
      bool active = false;
      double episode_return = 0.0;
      double update_credit = 0.0;
      for (int step = 0; step < dual.rl_steps; ++step) {
        if (!active) {
          loop.Begin(SplitSeed(seed, kEpisodeTag, episode_counter++));
          active = true;
          episode_return = 0.0;
        }
        const Vec residual =
            agent.Act(loop.observation(), setup.rl.exploration_std, rng);
        auto out = loop.Advance(residual);
        ++art.env_steps;
        if (out.diverged) {
          ++art.diverged_episodes;
          active = false;
        } else {
          episode_return += out.reward;
          buffer.Push(std::move(out.transition));
          ++art.rl_transitions;
          if (out.episode_over) {
            active = false;
            recent_returns.push_back(episode_return);
            if (recent_returns.size() > 10) recent_returns.pop_front();
          }
        }
        if (buffer.size() >= std::max(dual.warmup_steps, setup.rl.batch_size)) {
          update_credit += setup.rl.train_steps_per_env_step;
          while (update_credit >= 1.0) {
            update_credit -= 1.0;
            const auto losses = agent.Update(
                rl::Batch::From(buffer.Sample(setup.rl.batch_size, rng)));
            critic_sum += losses.critic;
            actor_sum += losses.actor;
            ++update_count;
          }
        }
        if (dual.metrics_every > 0 && (step + 1) % dual.metrics_every == 0) {
          rl::MetricsRow row;
          row.record = "step";
          row.outer_iteration = outer;
          row.step = art.env_steps;
          row.critic_loss = update_count ? critic_sum / update_count : 0.0;
          row.actor_loss = update_count ? actor_sum / update_count : 0.0;
          row.mean_episode_return = Mean(recent_returns);
          row.buffer_size = buffer.size();
          row.eval_return = std::numeric_limits<double>::quiet_NaN();
          writer.Metrics(row);
          art.metrics.push_back(row);
          critic_sum = actor_sum = 0.0;
          update_count = 0;
        }
      }
    }
    Emit(hooks, outer, Phase::kRlEnd, agent, params, buffer, art.env_steps);

    const EvalResult eval =
        Evaluate(task, gen, params, use_policy ? ViewOf(agent) : view,
                 dual.eval_episodes, eval_seed, es_cfg.parallelism);
    rl::MetricsRow row;
    row.record = "outer";
    row.outer_iteration = outer;
    row.step = art.env_steps;
    row.critic_loss = update_count ? critic_sum / update_count : 0.0;
    row.actor_loss = update_count ? actor_sum / update_count : 0.0;
    row.mean_episode_return = Mean(recent_returns);
    row.buffer_size = buffer.size();
    row.eval_return = eval.mean;
    writer.Metrics(row);
    art.metrics.push_back(row);
    art.final_eval_return = eval.mean;

    const bool improved = eval.mean > art.best_eval_return;
    if (improved) {
      art.best_eval_return = eval.mean;
      art.best_outer = outer;
      art.best_params = params;
      art.policy = agent.PolicyCheckpoint();
      art.critic = agent.CriticCheckpoint();
    }
    const nlohmann::json ck = checkpoint(outer + 1);
    writer.Checkpoint("latest.json", ck);
    if (improved) {
      writer.Checkpoint("best.json", ck);
      if (auto trace = writer.Trace("best_eval.jsonl"); trace.is_open()) {
        RolloutOptions opt;
        opt.trace = &trace;
        Rollout(task, gen, params, use_policy ? ViewOf(agent) : view,
                SplitSeed(eval_seed, kEvalTag, 0), opt);
      }
    }
  }

  art.final_params = params;
  if (art.best_outer < 0) {
    art.best_params = params;
    art.policy = agent.PolicyCheckpoint();
    art.critic = agent.CriticCheckpoint();
  }
  art.buffer_size = buffer.size();
  writer.Report({{"schema", kReportSchema},
                 {"variant", ToString(setup.variant)},
                 {"task", sim::ToString(task.terrain.kind)},
                 {"seed", seed},
                 {"best_eval_return",
                  std::isfinite(art.best_eval_return)
                      ? nlohmann::json(art.best_eval_return)
                      : nlohmann::json(nullptr)},
                 {"best_outer", art.best_outer},
                 {"final_eval_return", art.final_eval_return},
                 {"env_steps", art.env_steps},
                 {"es_transitions", art.es_transitions},
                 {"rl_transitions", art.rl_transitions},
                 {"diverged_episodes", art.diverged_episodes},
                 {"buffer_size", art.buffer_size}});
  return art;
}

RunArtifacts RunAblation(Variant variant, const TrainSetup& shared,
                         const RunHooks& hooks) {
  return DualTrain(ApplyVariant(shared, variant), hooks);
}

LoadedCheckpoint LoadCheckpoint(const fs::path& file) {
  const auto j = ReadJsonFile(file);
  if (j.value("schema", "") != kCheckpointSchema) {
    throw ConfigError(file.string() + ": schema tag is not " +
                      kCheckpointSchema);
  }
  LoadedCheckpoint out;
  out.params = trajgen::ParamsFromJson(j.at("params"));
  const auto& pol = j.at("policy");
  out.policy = nn::MlpFromJson(pol);
  out.residual_bound = pol.at("residual_bound").get<double>();
  const auto scale = pol.at("input_scale").get<std::vector<double>>();
  out.input_scale = Eigen::Map<const Vec>(scale.data(), scale.size());
  out.uses_policy = j.value("uses_policy", true);
  return out;
}

}  // namespace etgrl::train
