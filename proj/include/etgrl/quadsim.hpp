#pragma once

// Planar quadruped in the sagittal plane.
//
// A rigid trunk (x, z, pitch) carries four two-link legs ordered FL, FR, RL,
// RR; joints are ordered (hip, knee) per leg, so K = 8. Leg mass is lumped
// into the trunk and each joint has its own rotor inertia. Feet touch the
// ground through a spring-damper normal force and a stick-slip tangential
// spring capped at mu * N. Joint targets pass through a latency FIFO and a
// PD loop; physics uses semi-implicit Euler.
//
// Angles: the direction of a link at absolute angle a is (sin a, -cos a), so
// a = 0 hangs straight down and positive angles swing the foot forward.
// Positive pitch raises the front of the trunk.

#include <array>
#include <cstdint>
#include <deque>
#include <ostream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "json.hpp"

#include "etgrl/common.hpp"
#include "etgrl/terrain.hpp"

namespace etgrl::sim {

inline constexpr int kLegs = 4;
inline constexpr int kJoints = 8;
inline constexpr double kGravity = 9.81;

struct SimParams {
  double latency = 0.002;         // t_c, s
  double foot_friction = 0.8;     // mu
  double base_mass = 1.6;         // kg
  double base_inertia = 0.03;     // kg m^2
  double leg_mass = 0.1;          // kg, per leg, lumped into the trunk
  double leg_inertia = 0.01;      // kg m^2, per joint
  double kp = 20.0;               // N m / rad
  double kd = 0.5;                // N m s / rad
  double torque_limit = 6.0;      // N m
  double physics_step = 0.001;    // h, s
  double control_period = 0.02;   // s

  void Validate() const;
  int LatencySteps() const;
  int SubstepsPerControl() const;
  double TotalMass() const { return base_mass + kLegs * leg_mass; }
};

nlohmann::json ToJson(const SimParams& p);
SimParams SimParamsFromJson(const nlohmann::json& j);

struct ContactParams {
  double stiffness = 20000.0;           // N/m
  double damping = 300.0;               // N s/m
  double tangential_stiffness = 5000.0;  // N/m, stick spring
  double tangential_damping = 20.0;     // N s/m
};

struct RobotGeometry {
  double hip_offset = 0.18;         // m, +front / -rear from the trunk center
  double thigh = 0.2;               // m
  double shank = 0.2;               // m
  double trunk_half_length = 0.22;  // m
  double trunk_half_height = 0.04;  // m
  double stance_hip = 0.6;          // rad
  double stance_knee = -1.2;        // rad
  double hip_lower = -0.4, hip_upper = 1.6;     // rad
  double knee_lower = -2.4, knee_upper = -0.3;  // rad

  // Trunk center height above flat ground in the nominal stance.
  double StandingHeight() const;
  Vec StancePose() const;
  Vec LowerLimits() const;
  Vec UpperLimits() const;
  // +1 for front legs, -1 for rear.
  double HipX(int leg) const { return leg < 2 ? hip_offset : -hip_offset; }
};

struct RewardConfig {
  double energy_weight = 0.1;                   // lambda
  Eigen::Vector2d direction{1.0, 0.0};          // d, unit

  void Validate() const;
};

struct EpisodeOptions {
  double time_limit = 10.0;           // s
  double settle_time = 3.0;           // s at stance before t = 0
  double initial_joint_noise = 0.03;  // rad, on the settling targets
  double pitch_limit = 0.8;           // rad
  double min_height_fraction = 0.4;   // of the standing height

  void Validate() const;
};

struct SimState {
  Eigen::Vector2d position{0.0, 0.0};  // trunk center, m
  double pitch = 0.0;                  // rad
  Eigen::Vector2d velocity{0.0, 0.0};  // m/s
  double pitch_rate = 0.0;             // rad/s
  Vec q = Vec::Zero(kJoints);          // rad
  Vec qd = Vec::Zero(kJoints);         // rad/s
  std::array<bool, kLegs> contacts{};
  std::deque<Vec> latency_queue;       // oldest first
  std::array<Eigen::Vector2d, kLegs> anchors{};
  std::array<bool, kLegs> anchored{};
  Vec torque = Vec::Zero(kJoints);     // last applied, N m
  double time = 0.0;                   // s since the end of settling
  std::int64_t substeps = 0;

  bool Finite() const;
};

// Thrown when integration produced a non-finite state.
class SimulationDiverged : public std::runtime_error {
 public:
  SimulationDiverged(const std::string& what, SimState last_valid)
      : std::runtime_error(what), last_valid_(std::move(last_valid)) {}
  const SimState& last_valid_state() const { return last_valid_; }

 private:
  SimState last_valid_;
};

struct StepInfo {
  double energy = 0.0;            // sum |tau qd| h over the substeps, J
  double progress = 0.0;          // (P_t - P_{t-1}) . d, m
  double max_penetration = 0.0;   // m, over the substeps
  double max_friction_excess = 0.0;  // max(|F_t| - mu N), N
  bool fell = false;
  bool ceiling_hit = false;
  bool left_walkway = false;
  bool time_limit = false;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;        // any episode end
  bool terminated = false;  // failure end; time-limit ends are not terminal
  StepInfo info;
};

// Observation layout:
// [pitch, pitch_rate, q (8), qd (8), contacts (4), velocity (2)?, e (8)].
struct ObservationLayout {
  bool include_velocity = true;

  static constexpr int kPitch = 0;
  static constexpr int kPitchRate = 1;
  static constexpr int kJointAngles = 2;
  static constexpr int kJointRates = kJointAngles + kJoints;
  static constexpr int kContacts = kJointRates + kJoints;
  static constexpr int kVelocity = kContacts + kLegs;

  int velocity_offset() const { return include_velocity ? kVelocity : -1; }
  int generator_offset() const { return kVelocity + (include_velocity ? 2 : 0); }
  int size() const { return generator_offset() + kJoints; }
};

Vec BuildObservation(const SimState& state, const Vec& generator,
                     bool include_velocity);

// Per-channel scale applied before the networks see an observation.
Vec DefaultInputScale(const ObservationLayout& layout);

class Simulator {
 public:
  Simulator(const TerrainProfile& terrain, const SimParams& params,
            const RewardConfig& reward = {}, const EpisodeOptions& episode = {},
            const RobotGeometry& geometry = {},
            const ContactParams& contact = {});

  // Places the trunk at x = 0 in the stance pose and settles it. Throws
  // ConfigError when the stance does not fit the terrain.
  const SimState& Reset(std::uint64_t seed);

  // One control period with constant joint targets.
  StepResult Step(const Vec& targets);

  // One physics substep; exposed for latency and contact tests. Returns the
  // motor torques applied.
  Vec Substep(const Vec& targets, StepInfo* info = nullptr);

  const SimState& state() const { return state_; }
  void set_state(const SimState& s) { state_ = s; }

  std::array<Eigen::Vector2d, kLegs> FootPositions() const;
  // Trunk corners, front-top, front-bottom, rear-top, rear-bottom.
  std::array<Eigen::Vector2d, 4> TrunkCorners() const;
  double HeightAboveGround() const;

  // Rewards are computed only while enabled; evaluations are counted so a
  // caller can prove it never used them.
  void set_reward_enabled(bool enabled) { reward_enabled_ = enabled; }
  std::int64_t reward_evaluations() const { return reward_evaluations_; }

  const Terrain& terrain() const { return terrain_; }
  const SimParams& params() const { return params_; }
  const RewardConfig& reward_config() const { return reward_; }
  const EpisodeOptions& episode() const { return episode_; }
  const RobotGeometry& geometry() const { return geometry_; }
  Vec lower_limits() const { return lower_; }
  Vec upper_limits() const { return upper_; }

 private:
  void CheckTargets(const Vec& targets) const;

  Terrain terrain_;
  SimParams params_;
  RewardConfig reward_;
  EpisodeOptions episode_;
  RobotGeometry geometry_;
  ContactParams contact_;
  Vec lower_, upper_;
  int latency_steps_ = 0;
  int substeps_per_control_ = 0;
  double standing_height_ = 0.0;
  SimState state_;
  bool reset_done_ = false;
  bool reward_enabled_ = true;
  std::int64_t reward_evaluations_ = 0;
};

// Rollout trace export, one JSON object per control step.
struct TraceRecord {
  double time = 0.0;
  Eigen::Vector2d position{0.0, 0.0};
  double pitch = 0.0;
  Vec target;  // commanded joint targets
  Vec q;
  Vec qd;
  Vec torque;
  std::array<bool, kLegs> contacts{};
  std::array<Eigen::Vector2d, kLegs> feet{};
  double reward = 0.0;
};

TraceRecord MakeTraceRecord(const Simulator& sim, const Vec& target,
                            double reward);
nlohmann::json ToJson(const TraceRecord& r);
TraceRecord TraceRecordFromJson(const nlohmann::json& j);

}  // namespace etgrl::sim
