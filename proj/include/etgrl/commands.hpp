#pragma once

// Subcommands behind the etgrl executable. Each returns a process exit code
// and reports problems on the error stream instead of throwing.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "etgrl/config.hpp"

namespace etgrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad config, flags or inputs
inline constexpr int kExitRuntime = 3;  // failure while running

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> out;
  std::optional<int> parallel;
  std::optional<std::string> checkpoint;  // eval and distill
  bool resume = false;                    // train
  std::ostream* out_stream = &std::cout;
  std::ostream* err_stream = &std::cerr;
};

// Loads the config and applies overrides: flags first, then ETGRL_OUT_DIR
// and ETGRL_PARALLEL for the settings no flag named.
RunConfig ResolveConfig(const CommandOptions& options);

int CmdTrain(const CommandOptions& options);
int CmdEvolve(const CommandOptions& options);
int CmdEval(const CommandOptions& options);
int CmdDistill(const CommandOptions& options);
int CmdCalibrate(const CommandOptions& options);
// Run directory: --out, else the config's out_dir, else ETGRL_OUT_DIR.
int CmdPlot(const CommandOptions& options);

}  // namespace etgrl::cli
