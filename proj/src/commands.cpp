#include "etgrl/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>

#include "etgrl/plot.hpp"

namespace etgrl::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvolveTag = 0x65766f6c7665;
constexpr std::uint64_t kEvalTag = 0x6576616c;
constexpr std::uint64_t kDistillTag = 0x64697374696c;
constexpr std::uint64_t kCalibrateTag = 0x63616c6962;

// Input problems found while running; mapped to the usage exit code.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int Guard(const CommandOptions& o, const std::function<int()>& body) {
  std::ostream& err = *o.err_stream;
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

void WriteText(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

void WriteJson(const fs::path& file, const json& j) {
  WriteText(file, j.dump(2) + "\n");
}

train::LoadedCheckpoint LoadExisting(const fs::path& file) {
  if (!fs::exists(file)) {
    throw MissingInput("checkpoint '" + file.string() + "' does not exist");
  }
  return train::LoadCheckpoint(file);
}

void CheckGenerator(const train::LoadedCheckpoint& ck,
                    const train::GeneratorSpec& gen) {
  if (ck.params.output_dim() != gen.rbf.output_dim ||
      ck.params.neuron_count() != gen.rbf.neuron_count) {
    throw ConfigError("checkpoint generator shape differs from the config");
  }
}

train::PolicyView ViewOf(const train::LoadedCheckpoint& ck,
                         const train::TaskConfig& task) {
  if (!ck.uses_policy) return {};
  if (ck.policy.input_size() != task.layout().size()) {
    throw ConfigError("checkpoint policy expects " +
                      std::to_string(ck.policy.input_size()) +
                      " inputs, the task provides " +
                      std::to_string(task.layout().size()));
  }
  return {&ck.policy, ck.input_scale, ck.residual_bound};
}

std::string MeanStd(const train::EvalResult& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(3) << r.mean << " +/- " << r.std;
  return o.str();
}

json EvalJson(const train::EvalResult& r) {
  return {{"mean", r.mean}, {"std", r.std}, {"returns", r.returns}};
}

}  // namespace

RunConfig ResolveConfig(const CommandOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = LoadRunConfig(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.terrain.seed = *o.seed;
  }
  if (o.variant) {
    try {
      cfg.variant = train::ParseVariant(*o.variant);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.out) {
    cfg.out_dir = *o.out;
  } else if (const char* env = std::getenv("ETGRL_OUT_DIR"); env && *env) {
    cfg.out_dir = env;
  }
  if (o.parallel) {
    cfg.parallelism = *o.parallel;
  } else if (const char* env = std::getenv("ETGRL_PARALLEL"); env && *env) {
    try {
      cfg.parallelism = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("ETGRL_PARALLEL is not an integer: ") +
                        env);
    }
  }
  cfg.Validate();
  return cfg;
}

int CmdTrain(const CommandOptions& o) {
  return Guard(o, [&] {
    const RunConfig cfg = ResolveConfig(o);
    train::RunHooks hooks;
    hooks.out_dir = cfg.out_dir;
    hooks.resume = o.resume;
    hooks.config_snapshot = ToJson(cfg);
    std::ostream& out = *o.out_stream;
    hooks.on_phase = [&](const train::PhaseEvent& e) {
      if (e.phase == train::Phase::kRlEnd) {
        out << "outer " << e.outer << " env_steps " << e.env_steps << '\n';
      }
    };
    const auto art = train::DualTrain(cfg.Setup(), hooks);
    out << std::fixed << std::setprecision(3) << train::ToString(art.variant)
        << ": best evaluation return " << art.best_eval_return
        << " (outer " << art.best_outer << "), final "
        << art.final_eval_return << ", " << art.env_steps
        << " environment steps\n";
    out << "run directory: " << cfg.out_dir << '\n';
    return kExitOk;
  });
}

int CmdEvolve(const CommandOptions& o) {
  return Guard(o, [&] {
    const RunConfig cfg = ResolveConfig(o);
    const train::TrainSetup setup = cfg.Setup();
    const train::TaskConfig& task = setup.task;
    const train::GeneratorSpec& gen = setup.generator;
    const auto init = train::InitialParams(setup);
    es::EsState state = es::EsState::Start(init, SplitSeed(cfg.seed, kEvolveTag));
    auto fitness = [&](const trajgen::TrajectoryParams& p, std::uint64_t seed) {
      const auto r = train::Rollout(task, gen, p, {}, seed);
      es::FitnessReport rep;
      rep.total_return = r.total_return;
      rep.episode_length = r.steps;
      return rep;
    };
    const auto result = es::Evolve(state, setup.es, gen.cpg, gen.rbf, fitness);

    const fs::path dir = fs::path(cfg.out_dir) / "evolve";
    WriteJson(dir / "initial_params.json", trajgen::ToJson(init, gen.cpg, gen.rbf));
    WriteJson(dir / "params.json", trajgen::ToJson(state.params, gen.cpg, gen.rbf));
    WriteJson(dir / "best_params.json",
              trajgen::ToJson(state.best_params, gen.cpg, gen.rbf));
    std::ostringstream csv;
    es::WriteHistoryCsvHeader(csv);
    es::WriteHistoryCsv(csv, result.history);
    WriteText(dir / "evolution.csv", csv.str());
    std::ostream& out = *o.out_stream;
    out << std::fixed << std::setprecision(3) << "evolved "
        << result.history.size() << " iterations ("
        << result.evaluations << " rollouts)";
    if (!result.history.empty()) out << ", best fitness " << state.best_fitness;
    if (result.converged) out << ", converged";
    out << "\nparameters: " << (dir / "params.json").string() << '\n';
    return kExitOk;
  });
}

int CmdEval(const CommandOptions& o) {
  return Guard(o, [&] {
    const RunConfig cfg = ResolveConfig(o);
    const fs::path file =
        o.checkpoint ? fs::path(*o.checkpoint)
        : !cfg.eval.checkpoint.empty()
            ? fs::path(cfg.eval.checkpoint)
            : fs::path(cfg.out_dir) / "checkpoints" / "best.json";
    const auto ck = LoadExisting(file);
    const train::TaskConfig task = cfg.Task();
    const train::GeneratorSpec gen = cfg.Generator();
    CheckGenerator(ck, gen);
    const auto r = train::Evaluate(task, gen, ck.params, ViewOf(ck, task),
                                   cfg.eval.episodes,
                                   SplitSeed(cfg.seed, kEvalTag),
                                   cfg.ResolvedParallelism());
    json report = EvalJson(r);
    report["checkpoint"] = file.string();
    report["task"] = cfg.task;
    report["episodes"] = cfg.eval.episodes;
    WriteJson(fs::path(cfg.out_dir) / "eval.json", report);
    *o.out_stream << "return " << MeanStd(r) << " over " << cfg.eval.episodes
                  << " episodes on " << cfg.task << '\n';
    return kExitOk;
  });
}

int CmdDistill(const CommandOptions& o) {
  return Guard(o, [&] {
    const RunConfig cfg = ResolveConfig(o);
    const fs::path file =
        o.checkpoint ? fs::path(*o.checkpoint)
        : !cfg.distill.teacher.empty()
            ? fs::path(cfg.distill.teacher)
            : fs::path(cfg.out_dir) / "checkpoints" / "best.json";
    const auto ck = LoadExisting(file);
    if (!ck.uses_policy) {
      throw ConfigError("checkpoint '" + file.string() +
                        "' holds no trained policy to distill");
    }
    train::TaskConfig task = cfg.Task();
    if (!task.include_velocity) {
      throw ConfigError("distillation needs include_velocity = true");
    }
    const train::GeneratorSpec gen = cfg.Generator();
    CheckGenerator(ck, gen);
    const train::PolicyView teacher_view = ViewOf(ck, task);

    s2r::DistillConfig dc = cfg.distill.config;
    dc.seed = SplitSeed(cfg.seed, kDistillTag);
    const s2r::Teacher teacher{&ck.policy, ck.input_scale, ck.residual_bound};
    const auto student =
        s2r::Distill(teacher, task, gen, ck.params, cfg.DistillNoise(), dc);

    const std::uint64_t eval_seed = SplitSeed(cfg.seed, kEvalTag);
    const int n = cfg.distill.eval_episodes;
    const auto te = train::Evaluate(task, gen, ck.params, teacher_view, n,
                                    eval_seed, cfg.ResolvedParallelism());
    const auto se =
        s2r::EvaluateStudent(student, task, gen, ck.params, n, eval_seed);

    const fs::path dir = fs::path(cfg.out_dir) / "distill";
    json sj = s2r::StudentToJson(student);
    WriteJson(dir / "student.json", sj);
    WriteJson(dir / "report.json",
              {{"teacher", EvalJson(te)},
               {"student", EvalJson(se)},
               {"best_round", student.best_round},
               {"best_holdout_mse", student.best_holdout_mse},
               {"round_holdout_mse", student.round_holdout_mse},
               {"train_samples", student.train_samples},
               {"holdout_samples", student.holdout_samples},
               {"reward_evaluations", student.reward_evaluations}});
    std::ostream& out = *o.out_stream;
    out << "teacher return " << MeanStd(te) << ", student return "
        << MeanStd(se) << " over " << n << " episodes\n";
    out << std::scientific << std::setprecision(3)
        << "held-out action mse " << student.best_holdout_mse << " rad^2 (round "
        << student.best_round << ")\n";
    out << "student: " << (dir / "student.json").string() << '\n';
    return kExitOk;
  });
}

int CmdCalibrate(const CommandOptions& o) {
  return Guard(o, [&] {
    const RunConfig cfg = ResolveConfig(o);
    const fs::path dir = fs::path(cfg.out_dir) / "calibration";
    s2r::ReplaySetup setup;
    setup.contact = cfg.contact;
    setup.geometry = cfg.geometry;
    setup.episode.settle_time = cfg.episode.settle_time;
    setup.reset_seed = cfg.seed;

    std::vector<s2r::JointTrace> traces;
    if (cfg.calibrate.traces.empty()) {
      for (int i = 0; i < cfg.calibrate.excitation_traces; ++i) {
        const auto cmds = s2r::ExcitationCommands(
            cfg.geometry, cfg.calibrate.excitation_steps,
            cfg.sim.control_period, i);
        traces.push_back(s2r::RecordTrace(cfg.sim, cmds, setup));
        std::ostringstream jsonl;
        s2r::WriteJointTrace(jsonl, traces.back());
        WriteText(dir / ("trace_" + std::to_string(i) + ".jsonl"), jsonl.str());
      }
      *o.out_stream << "generated " << traces.size()
                    << " excitation traces from the configured parameters\n";
    } else {
      for (const auto& path : cfg.calibrate.traces) {
        if (!fs::exists(path)) {
          throw MissingInput("trace '" + path + "' does not exist");
        }
        traces.push_back(s2r::ReadJointTrace(fs::path(path)));
      }
    }

    s2r::CalibrationOptions opts;
    opts.budget = cfg.calibrate.budget;
    opts.seed = SplitSeed(cfg.seed, kCalibrateTag);
    opts.es = cfg.calibrate.es;
    opts.es.parallelism = cfg.ResolvedParallelism();
    const auto space = cfg.CalibrationSpace();
    const auto r = s2r::Calibrate(traces, space, cfg.sim, setup, opts);

    WriteJson(dir / "sim_params.json", sim::ToJson(r.params));
    WriteJson(dir / "report.json",
              {{"objective", r.objective},
               {"evaluations", r.evaluations},
               {"normalized", std::vector<double>(
                                  r.normalized.data(),
                                  r.normalized.data() + r.normalized.size())},
               {"space", s2r::ToJson(space)},
               {"params", sim::ToJson(r.params)}});
    std::ostream& out = *o.out_stream;
    out << std::scientific << std::setprecision(6) << "objective "
        << r.objective << " rad after " << r.evaluations << " evaluations\n";
    out << std::defaultfloat;
    for (const auto& b : space.bounds) {
      out << "  " << b.name << " = " << sim::ToJson(r.params).at(b.name) << '\n';
    }
    out << "parameters: " << (dir / "sim_params.json").string() << '\n';
    return kExitOk;
  });
}

int CmdPlot(const CommandOptions& o) {
  return Guard(o, [&] {
    fs::path run;
    if (o.out) {
      run = *o.out;
    } else if (!o.config.empty()) {
      run = ResolveConfig(o).out_dir;
    } else if (const char* env = std::getenv("ETGRL_OUT_DIR"); env && *env) {
      run = env;
    } else {
      throw ConfigError("plot needs --out DIR or --config PATH");
    }
    const fs::path metrics_file = run / "metrics.csv";
    const fs::path evolution_file = run / "evolution.csv";
    for (const auto& f : {metrics_file, evolution_file}) {
      if (!fs::exists(f)) throw MissingInput("missing " + f.string());
    }
    std::ifstream mf(metrics_file), ef(evolution_file);
    const auto metrics = plot::ReadMetricsCsv(mf);
    const auto history = plot::ReadHistoryCsv(ef);

    const fs::path plots = run / "plots";
    WriteText(plots / "training.svg",
              plot::RenderSvg(plot::TrainingChart(metrics)));
    WriteText(plots / "evolution.svg",
              plot::RenderSvg(plot::EvolutionChart(history)));
    std::ostream& out = *o.out_stream;
    out << "wrote " << (plots / "training.svg").string() << '\n'
        << "wrote " << (plots / "evolution.svg").string() << '\n';

    fs::path trace_file = run / "traces" / "best_eval.jsonl";
    if (!fs::exists(trace_file)) {
      trace_file.clear();
      std::vector<fs::path> found;
      if (fs::is_directory(run / "traces")) {
        for (const auto& e : fs::directory_iterator(run / "traces")) {
          if (e.path().extension() == ".jsonl") found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      if (!found.empty()) trace_file = found.front();
    }
    std::vector<sim::TraceRecord> trace;
    if (!trace_file.empty()) {
      std::ifstream tf(trace_file);
      trace = plot::ReadTrace(tf);
    }
    if (trace.empty()) {
      *o.err_stream << "warning: no evaluation trace under "
                    << (run / "traces").string() << "; wrote curves only\n";
    } else {
      WriteText(plots / "trajectory.svg",
                plot::RenderSvg(plot::TrajectoryChart(trace)));
      out << "wrote " << (plots / "trajectory.svg").string() << '\n';
    }
    return kExitOk;
  });
}

}  // namespace etgrl::cli
