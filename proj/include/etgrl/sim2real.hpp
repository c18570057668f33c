#pragma once

// Transfer tools: calibration of simulator parameters against logged joint
// traces, teacher-to-student distillation without the velocity input, and
// observation noise for the student.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "etgrl/common.hpp"
#include "etgrl/etg.hpp"
#include "etgrl/neural.hpp"
#include "etgrl/quadsim.hpp"
#include "etgrl/rollout.hpp"

namespace etgrl::s2r {

// ---- joint traces ----

struct JointSample {
  double time = 0.0;  // s, end of the control period
  Vec target;         // commanded during the period, rad
  Vec q;              // measured at `time`, rad
};

struct JointTrace {
  std::vector<JointSample> samples;

  // Throws ArgumentError on ragged sizes, non-increasing times or
  // non-uniform sampling.
  void Validate() const;
  double Period() const;
};

// JSONL, one object per sample. Reads the simulator's rollout trace export;
// only time, target and q are required.
JointTrace ReadJointTrace(std::istream& is);
JointTrace ReadJointTrace(const std::filesystem::path& file);
void WriteJointTrace(std::ostream& os, const JointTrace& trace);

// Replay environment: the robot starts from a noise-free settle on this
// terrain, then the commanded targets are applied one control period each.
// Episode ends (falls, time limit) do not stop a replay.
struct ReplaySetup {
  sim::TerrainProfile terrain;  // flat by default
  sim::EpisodeOptions episode = NoiseFreeEpisode();
  sim::ContactParams contact;
  sim::RobotGeometry geometry;
  std::uint64_t reset_seed = 0;

  static sim::EpisodeOptions NoiseFreeEpisode();
};

// Drives the simulator with `commands` and records the measured angles.
// Throws SimulationDiverged.
JointTrace RecordTrace(const sim::SimParams& params,
                       const std::vector<Vec>& commands,
                       const ReplaySetup& setup);

// Predefined excitation: per-joint sums of two sines around the stance pose,
// phased per leg. `variant` selects frequencies and amplitudes.
std::vector<Vec> ExcitationCommands(const sim::RobotGeometry& geometry,
                                    int steps, double control_period,
                                    int variant);

// Mean over traces, samples and joints of |q_sim - q_measured|. Returns
// +inf if a replay diverges.
double TraceObjective(const std::vector<JointTrace>& traces,
                      const sim::SimParams& params, const ReplaySetup& setup);

// ---- calibration ----

struct CalibrationBound {
  std::string name;  // SimParams field
  double lower = 0.0;
  double upper = 0.0;
};

struct CalibrationSpace {
  std::vector<CalibrationBound> bounds;

  // latency, foot_friction, base_mass, kp, kd over [0.5, 1.5] x `base`
  // (latency over [0, 3 h]).
  static CalibrationSpace Default(const sim::SimParams& base);
  // kp, kd, foot_friction over [0.5, 1.5] x `base`.
  static CalibrationSpace Gains(const sim::SimParams& base);

  // Throws ConfigError on unknown names, duplicates or bad bounds.
  void Validate() const;
  int dim() const { return static_cast<int>(bounds.size()); }
  // u in [0,1]^d to parameters; latency is rounded to whole physics steps.
  sim::SimParams Apply(const sim::SimParams& base, const Vec& u) const;
  Vec Normalize(const sim::SimParams& params) const;
};

nlohmann::json ToJson(const CalibrationSpace& space);
CalibrationSpace CalibrationSpaceFromJson(const nlohmann::json& j);

class CalibrationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CalibrationOptions {
  int budget = 2000;  // objective evaluations, the start point included
  std::uint64_t seed = 0;
  es::EsConfig es = DefaultSearch();

  static es::EsConfig DefaultSearch();
};

struct CalibrationResult {
  sim::SimParams params;
  double objective = 0.0;
  Vec normalized;
  int evaluations = 0;
  std::vector<es::IterationRecord> history;
};

// Searches the space from its midpoint. Throws ArgumentError on empty
// traces and CalibrationFailed if every candidate diverged.
CalibrationResult Calibrate(const std::vector<JointTrace>& traces,
                            const CalibrationSpace& space,
                            const sim::SimParams& base,
                            const ReplaySetup& setup,
                            const CalibrationOptions& options);

// ---- observation noise ----

struct NoiseProfile {
  Vec std;  // per observation channel; contacts use it as a flip probability

  // pitch 0.005 rad, angles 0.01 rad, rates 0.05 rad/s, contacts 0.02,
  // velocity 0.05 m/s, generator channels 0.
  static NoiseProfile Default(const sim::ObservationLayout& layout);
  static NoiseProfile Zero(const sim::ObservationLayout& layout);
  void Validate() const;
};

nlohmann::json ToJson(const NoiseProfile& noise);
NoiseProfile NoiseProfileFromJson(const nlohmann::json& j);

// Additive Gaussian noise; contact flags flip with probability
// min(std, 0.1) and stay in {0, 1}.
Vec PerturbObservation(const Vec& obs, const NoiseProfile& noise,
                       const sim::ObservationLayout& layout,
                       NormalSampler& rng);

// Drops the velocity channels of a full observation.
Vec StripVelocity(const Vec& obs);

// ---- distillation ----

struct Teacher {
  const nn::Mlp* net = nullptr;
  Vec input_scale;
  double residual_bound = 0.3;
};

struct DistillConfig {
  int rounds = 5;
  int episodes_per_round = 4;
  int epochs = 40;              // passes over the aggregate per round
  int batch_size = 128;
  double learning_rate = 1e-3;
  double holdout_fraction = 0.1;
  std::vector<int> student_hidden{64, 64};
  bool student_velocity = false;  // true keeps the teacher's inputs
  std::uint64_t seed = 0;

  void Validate() const;
};

struct DistillResult {
  nn::Mlp student;
  Vec input_scale;
  double residual_bound = 0.3;
  bool uses_velocity = false;
  int best_round = -1;
  double best_holdout_mse = 0.0;  // rad^2
  std::vector<double> round_holdout_mse;
  int train_samples = 0;
  int holdout_samples = 0;
  std::int64_t reward_evaluations = 0;  // read off the simulators; always 0
};

// Dataset-aggregation imitation. The task must produce the teacher's
// observation layout (with velocity). Throws ArgumentError on a layout
// mismatch.
DistillResult Distill(const Teacher& teacher, const train::TaskConfig& task,
                      const train::GeneratorSpec& gen,
                      const trajgen::TrajectoryParams& params,
                      const NoiseProfile& noise, const DistillConfig& config);

// Residual of a student on a full observation.
Vec StudentResidual(const DistillResult& r, const Vec& full_obs);

// Evaluation of a student: velocity channels are removed before the student
// sees the observation, and noise (if non-null) is applied.
train::EvalResult EvaluateStudent(const DistillResult& student,
                                  const train::TaskConfig& task,
                                  const train::GeneratorSpec& gen,
                                  const trajgen::TrajectoryParams& params,
                                  int episodes, std::uint64_t seed,
                                  const NoiseProfile* noise = nullptr);

nlohmann::json StudentToJson(const DistillResult& r);

}  // namespace etgrl::s2r
