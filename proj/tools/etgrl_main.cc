// etgrl: train, evolve, eval, distill, calibrate, plot.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "etgrl/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> out;
  std::optional<int> parallel;
  std::optional<std::string> checkpoint;
  bool resume = false;
};

CLI::App* AddCommand(CLI::App& app, const std::string& name,
                     const std::string& help, Flags& f, bool needs_config) {
  CLI::App* cmd = app.add_subcommand(name, help);
  auto* config = cmd->add_option("--config", f.config, "Run config (JSON)");
  if (needs_config) config->required();
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--variant", f.variant,
                  "etg-rl, tg-rl, cpg-rl, es-only or rl-only");
  cmd->add_option("--out", f.out, "Output (run) directory");
  cmd->add_option("--parallel", f.parallel, "Parallel evaluations")
      ->check(CLI::NonNegativeNumber);
  return cmd;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace etgrl::cli;
  CLI::App app{"Evolutionary trajectory generator with residual RL"};
  app.require_subcommand(1);
  Flags f;
  auto* train = AddCommand(app, "train", "Dual ES/RL training", f, true);
  train->add_flag("--resume", f.resume,
                  "Continue from checkpoints/latest.json in the run directory");
  auto* evolve = AddCommand(app, "evolve", "Evolve the generator alone", f, true);
  auto* eval = AddCommand(app, "eval", "Evaluate a checkpoint", f, true);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  auto* distill = AddCommand(app, "distill",
                             "Distill a velocity-free student", f, true);
  distill->add_option("--checkpoint", f.checkpoint, "Teacher checkpoint");
  auto* calibrate = AddCommand(app, "calibrate",
                               "Fit sim parameters to joint traces", f, true);
  auto* plot = AddCommand(app, "plot", "Render SVG plots of a run", f, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CommandOptions o;
  o.config = f.config;
  o.seed = f.seed;
  o.variant = f.variant;
  o.out = f.out;
  o.parallel = f.parallel;
  o.checkpoint = f.checkpoint;
  o.resume = f.resume;

  if (train->parsed()) return CmdTrain(o);
  if (evolve->parsed()) return CmdEvolve(o);
  if (eval->parsed()) return CmdEval(o);
  if (distill->parsed()) return CmdDistill(o);
  if (calibrate->parsed()) return CmdCalibrate(o);
  if (plot->parsed()) return CmdPlot(o);
  return kExitUsage;
}
