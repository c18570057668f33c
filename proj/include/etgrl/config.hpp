#pragma once

// Run configuration: one JSON document with a schema tag and one section
// per module. Sections and keys are optional; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "etgrl/dualtrain.hpp"
#include "etgrl/sim2real.hpp"

namespace etgrl::cli {

inline constexpr char kRunConfigSchema[] = "etgrl.run_config/1";

struct EvalSection {
  int episodes = 10;
  std::string checkpoint;  // empty: <out_dir>/checkpoints/best.json
};

struct DistillSection {
  s2r::DistillConfig config;
  std::string teacher;  // checkpoint; empty: <out_dir>/checkpoints/best.json
  // Per student channel; empty selects the default profile.
  std::vector<double> noise;
  int eval_episodes = 10;
};

struct CalibrateSection {
  // JSONL joint traces. Empty: excitation traces are generated from the
  // configured sim parameters.
  std::vector<std::string> traces;
  int excitation_traces = 3;
  int excitation_steps = 250;
  int budget = 2000;
  // Empty selects the default space around the configured sim parameters.
  std::vector<s2r::CalibrationBound> space;
  es::EsConfig es = s2r::CalibrationOptions::DefaultSearch();
};

struct RunConfig {
  std::string task = "flat";
  train::Variant variant = train::Variant::kEtgRl;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  int parallelism = 0;  // 0: available cores
  bool include_velocity = true;

  // Fully resolved terrain; the "terrain" section overrides the task's
  // defaults.
  sim::TerrainProfile terrain;
  trajgen::CpgConfig cpg;
  trajgen::RbfConfig rbf;
  train::MotionPrior prior;
  es::EsConfig es;
  rl::RlConfig rl;
  train::DualConfig dual;
  sim::SimParams sim;
  sim::ContactParams contact;
  sim::RewardConfig reward;
  sim::EpisodeOptions episode;
  sim::RobotGeometry geometry;
  EvalSection eval;
  DistillSection distill;
  CalibrateSection calibrate;

  // Throws ConfigError.
  void Validate() const;

  int ResolvedParallelism() const;
  train::TaskConfig Task() const;
  train::GeneratorSpec Generator() const;
  // Shared setup with the variant applied and the seed propagated.
  train::TrainSetup Setup() const;
  s2r::NoiseProfile DistillNoise() const;
  s2r::CalibrationSpace CalibrationSpace() const;
};

// Throws ConfigError on schema mismatch, unknown keys, wrong types or
// invalid values.
RunConfig RunConfigFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const RunConfig& cfg);

// Throws ConfigError naming the path when it cannot be read or parsed.
RunConfig LoadRunConfig(const std::filesystem::path& file);

}  // namespace etgrl::cli
