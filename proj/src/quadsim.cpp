#include "etgrl/quadsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace etgrl::sim {
namespace {

constexpr double kLimitStiffness = 50.0;  // N m / rad beyond a joint limit
constexpr double kLimitDamping = 1.0;     // N m s / rad
constexpr double kDivergenceBound = 1e4;

Eigen::Vector2d Dir(double a) { return {std::sin(a), -std::cos(a)}; }
Eigen::Vector2d DirRate(double a) { return {std::cos(a), std::sin(a)}; }
Eigen::Vector2d Perp(const Eigen::Vector2d& v) { return {-v.y(), v.x()}; }
double Cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}
Eigen::Vector2d Rotate(double pitch, const Eigen::Vector2d& body) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  return {c * body.x() - s * body.y(), s * body.x() + c * body.y()};
}

struct LegKinematics {
  Eigen::Vector2d hip, knee, foot;
  Eigen::Vector2d foot_velocity;
};

LegKinematics Leg(const SimState& s, const RobotGeometry& g, int leg) {
  LegKinematics k;
  const Eigen::Vector2d r = Rotate(s.pitch, {g.HipX(leg), 0.0});
  const double a1 = s.pitch + s.q[2 * leg];
  const double a2 = a1 + s.q[2 * leg + 1];
  k.hip = s.position + r;
  k.knee = k.hip + g.thigh * Dir(a1);
  k.foot = k.knee + g.shank * Dir(a2);
  const double w1 = s.pitch_rate + s.qd[2 * leg];
  const double w2 = w1 + s.qd[2 * leg + 1];
  k.foot_velocity = s.velocity + s.pitch_rate * Perp(r) +
                    g.thigh * w1 * DirRate(a1) + g.shank * w2 * DirRate(a2);
  return k;
}

double LimitTorque(double q, double qd, double lower, double upper) {
  if (q < lower) return kLimitStiffness * (lower - q) - kLimitDamping * qd;
  if (q > upper) return kLimitStiffness * (upper - q) - kLimitDamping * qd;
  return 0.0;
}

bool Bounded(const SimState& s) {
  return s.Finite() && s.position.cwiseAbs().maxCoeff() < kDivergenceBound &&
         s.velocity.cwiseAbs().maxCoeff() < kDivergenceBound &&
         std::abs(s.pitch_rate) < kDivergenceBound &&
         s.qd.cwiseAbs().maxCoeff() < kDivergenceBound;
}

std::vector<double> ToStd(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vec FromStd(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void SimParams::Validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("sim parameter ") + name + " must be > 0");
    }
  };
  if (!(latency >= 0.0) || !std::isfinite(latency)) {
    throw ConfigError("sim parameter latency must be >= 0");
  }
  positive(foot_friction, "foot_friction");
  positive(base_mass, "base_mass");
  positive(base_inertia, "base_inertia");
  positive(leg_mass, "leg_mass");
  positive(leg_inertia, "leg_inertia");
  positive(kp, "kp");
  positive(kd, "kd");
  positive(torque_limit, "torque_limit");
  positive(physics_step, "physics_step");
  positive(control_period, "control_period");
  const double ratio = control_period / physics_step;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || ratio < 1.0) {
    throw ConfigError("control_period must be a whole multiple of physics_step");
  }
}

int SimParams::LatencySteps() const {
  return static_cast<int>(std::lround(latency / physics_step));
}

int SimParams::SubstepsPerControl() const {
  return static_cast<int>(std::lround(control_period / physics_step));
}

nlohmann::json ToJson(const SimParams& p) {
  return {{"latency", p.latency},
          {"foot_friction", p.foot_friction},
          {"base_mass", p.base_mass},
          {"base_inertia", p.base_inertia},
          {"leg_mass", p.leg_mass},
          {"leg_inertia", p.leg_inertia},
          {"kp", p.kp},
          {"kd", p.kd},
          {"torque_limit", p.torque_limit},
          {"physics_step", p.physics_step},
          {"control_period", p.control_period}};
}

SimParams SimParamsFromJson(const nlohmann::json& j) {
  SimParams p;
  for (const auto& [key, value] : j.items()) {
    const double v = value.get<double>();
    if (key == "latency") p.latency = v;
    else if (key == "foot_friction") p.foot_friction = v;
    else if (key == "base_mass") p.base_mass = v;
    else if (key == "base_inertia") p.base_inertia = v;
    else if (key == "leg_mass") p.leg_mass = v;
    else if (key == "leg_inertia") p.leg_inertia = v;
    else if (key == "kp") p.kp = v;
    else if (key == "kd") p.kd = v;
    else if (key == "torque_limit") p.torque_limit = v;
    else if (key == "physics_step") p.physics_step = v;
    else if (key == "control_period") p.control_period = v;
    else throw ConfigError("unknown sim parameter '" + key + "'");
  }
  p.Validate();
  return p;
}

double RobotGeometry::StandingHeight() const {
  const double a1 = stance_hip;
  const double a2 = stance_hip + stance_knee;
  return thigh * std::cos(a1) + shank * std::cos(a2);
}

Vec RobotGeometry::StancePose() const {
  Vec q(kJoints);
  for (int leg = 0; leg < kLegs; ++leg) {
    q[2 * leg] = stance_hip;
    q[2 * leg + 1] = stance_knee;
  }
  return q;
}

Vec RobotGeometry::LowerLimits() const {
  Vec v(kJoints);
  for (int leg = 0; leg < kLegs; ++leg) {
    v[2 * leg] = hip_lower;
    v[2 * leg + 1] = knee_lower;
  }
  return v;
}

Vec RobotGeometry::UpperLimits() const {
  Vec v(kJoints);
  for (int leg = 0; leg < kLegs; ++leg) {
    v[2 * leg] = hip_upper;
    v[2 * leg + 1] = knee_upper;
  }
  return v;
}

void RewardConfig::Validate() const {
  if (!(energy_weight >= 0.0 && energy_weight <= 1.0)) {
    throw ConfigError("energy weight must lie in [0, 1]");
  }
  if (!direction.allFinite() || std::abs(direction.norm() - 1.0) > 1e-9) {
    throw ConfigError("reward direction must be a unit vector");
  }
}

void EpisodeOptions::Validate() const {
  if (!(time_limit > 0.0)) throw ConfigError("time_limit must be > 0");
  if (!(settle_time >= 0.0)) throw ConfigError("settle_time must be >= 0");
  if (!(initial_joint_noise >= 0.0)) {
    throw ConfigError("initial_joint_noise must be >= 0");
  }
  if (!(pitch_limit > 0.0)) throw ConfigError("pitch_limit must be > 0");
  if (!(min_height_fraction >= 0.0 && min_height_fraction < 1.0)) {
    throw ConfigError("min_height_fraction must lie in [0, 1)");
  }
}

bool SimState::Finite() const {
  return position.allFinite() && std::isfinite(pitch) &&
         velocity.allFinite() && std::isfinite(pitch_rate) && q.allFinite() &&
         qd.allFinite();
}

Vec BuildObservation(const SimState& state, const Vec& generator,
                     bool include_velocity) {
  if (generator.size() != kJoints) {
    throw ArgumentError("generator signal must have 8 entries");
  }
  const ObservationLayout layout{include_velocity};
  Vec obs(layout.size());
  obs[ObservationLayout::kPitch] = state.pitch;
  obs[ObservationLayout::kPitchRate] = state.pitch_rate;
  obs.segment(ObservationLayout::kJointAngles, kJoints) = state.q;
  obs.segment(ObservationLayout::kJointRates, kJoints) = state.qd;
  for (int i = 0; i < kLegs; ++i) {
    obs[ObservationLayout::kContacts + i] = state.contacts[i] ? 1.0 : 0.0;
  }
  if (include_velocity) {
    obs.segment<2>(ObservationLayout::kVelocity) = state.velocity;
  }
  obs.segment(layout.generator_offset(), kJoints) = generator;
  return obs;
}

Vec DefaultInputScale(const ObservationLayout& layout) {
  Vec s = Vec::Ones(layout.size());
  s[ObservationLayout::kPitchRate] = 0.2;
  s.segment(ObservationLayout::kJointRates, kJoints).setConstant(0.05);
  return s;
}

Simulator::Simulator(const TerrainProfile& terrain, const SimParams& params,
                     const RewardConfig& reward, const EpisodeOptions& episode,
                     const RobotGeometry& geometry,
                     const ContactParams& contact)
    : terrain_(terrain),
      params_(params),
      reward_(reward),
      episode_(episode),
      geometry_(geometry),
      contact_(contact) {
  params_.Validate();
  reward_.Validate();
  episode_.Validate();
  lower_ = geometry_.LowerLimits();
  upper_ = geometry_.UpperLimits();
  latency_steps_ = params_.LatencySteps();
  substeps_per_control_ = params_.SubstepsPerControl();
  standing_height_ = geometry_.StandingHeight();
}

const SimState& Simulator::Reset(std::uint64_t seed) {
  SimState s;
  s.position = {0.0, terrain_.Height(0.0) + standing_height_};
  s.q = geometry_.StancePose();
  state_ = s;
  for (const auto& foot : FootPositions()) {
    if (terrain_.Height(foot.x()) > foot.y() + 1e-9) {
      throw ConfigError("stance pose puts a foot below the ground");
    }
  }
  for (const auto& c : TrunkCorners()) {
    if (c.y() >= terrain_.Ceiling(c.x())) {
      throw ConfigError("stance pose does not fit under the ceiling");
    }
  }
  NormalSampler rng(SplitSeed(seed, 0x7265736574));
  Vec settle_target = geometry_.StancePose();
  for (int j = 0; j < kJoints; ++j) {
    settle_target[j] += episode_.initial_joint_noise * rng();
  }
  settle_target = settle_target.cwiseMax(lower_).cwiseMin(upper_);
  state_.latency_queue.assign(latency_steps_, settle_target);
  const int settle_steps = static_cast<int>(
      std::lround(episode_.settle_time / params_.physics_step));
  for (int i = 0; i < settle_steps; ++i) Substep(settle_target);
  state_.time = 0.0;
  state_.substeps = 0;
  reset_done_ = true;
  return state_;
}

void Simulator::CheckTargets(const Vec& targets) const {
  if (targets.size() != kJoints) {
    throw ArgumentError("joint targets must have 8 entries");
  }
  if (!targets.allFinite()) throw ArgumentError("joint targets not finite");
  constexpr double kTol = 1e-9;
  if ((targets.array() < lower_.array() - kTol).any() ||
      (targets.array() > upper_.array() + kTol).any()) {
    throw ArgumentError("joint targets outside the joint limits");
  }
}

Vec Simulator::Substep(const Vec& targets, StepInfo* info) {
  const SimState before = state_;
  SimState& s = state_;
  const double h = params_.physics_step;

  Vec q_des;
  if (latency_steps_ == 0) {
    q_des = targets;
  } else {
    s.latency_queue.push_back(targets);
    q_des = s.latency_queue.front();
    s.latency_queue.pop_front();
  }
  Vec tau = params_.kp * (q_des - s.q) - params_.kd * s.qd;
  tau = tau.cwiseMax(-params_.torque_limit).cwiseMin(params_.torque_limit);

  Eigen::Vector2d force(0.0, -params_.TotalMass() * kGravity);
  double trunk_torque = 0.0;
  Vec qdd(kJoints);
  for (int leg = 0; leg < kLegs; ++leg) {
    const LegKinematics k = Leg(s, geometry_, leg);
    Eigen::Vector2d f = Eigen::Vector2d::Zero();
    const GroundContact c = terrain_.Contact(k.foot);
    if (c.depth > 0.0) {
      const Eigen::Vector2d n = c.normal;
      const Eigen::Vector2d t(n.y(), -n.x());
      const double vn = k.foot_velocity.dot(n);
      const double vt = k.foot_velocity.dot(t);
      const double normal =
          std::max(0.0, contact_.stiffness * c.depth - contact_.damping * vn);
      if (!s.anchored[leg]) {
        s.anchors[leg] = k.foot;
        s.anchored[leg] = true;
      }
      const double slip = (k.foot - s.anchors[leg]).dot(t);
      double ft = -contact_.tangential_stiffness * slip -
                  contact_.tangential_damping * vt;
      const double cap = params_.foot_friction * normal;
      if (std::abs(ft) > cap) {
        ft = std::copysign(cap, ft);
        // Slide the anchor so the spring alone carries the capped force.
        s.anchors[leg] = k.foot + (ft / contact_.tangential_stiffness) * t;
      }
      f = normal * n + ft * t;
      s.contacts[leg] = true;
      if (info) {
        info->max_penetration = std::max(info->max_penetration, c.depth);
        info->max_friction_excess =
            std::max(info->max_friction_excess, std::abs(ft) - cap);
      }
    } else {
      s.contacts[leg] = false;
      s.anchored[leg] = false;
    }
    force += f;
    const int jh = 2 * leg, jk = 2 * leg + 1;
    trunk_torque += Cross(k.hip - s.position, f) - tau[jh];
    qdd[jh] = tau[jh] + Cross(k.foot - k.hip, f) +
              LimitTorque(s.q[jh], s.qd[jh], lower_[jh], upper_[jh]);
    qdd[jk] = tau[jk] + Cross(k.foot - k.knee, f) +
              LimitTorque(s.q[jk], s.qd[jk], lower_[jk], upper_[jk]);
  }
  qdd /= params_.leg_inertia;

  if (info) info->energy += (tau.cwiseProduct(s.qd)).cwiseAbs().sum() * h;

  s.velocity += (h / params_.TotalMass()) * force;
  s.pitch_rate += (h / params_.base_inertia) * trunk_torque;
  s.qd += h * qdd;
  s.position += h * s.velocity;
  s.pitch += h * s.pitch_rate;
  s.q += h * s.qd;
  s.torque = tau;
  s.time += h;
  ++s.substeps;

  if (!Bounded(s)) {
    SimState last = before;
    state_ = before;
    throw SimulationDiverged("simulation diverged at t = " +
                                 std::to_string(last.time),
                             std::move(last));
  }
  return tau;
}

StepResult Simulator::Step(const Vec& targets) {
  if (!reset_done_) throw StateError("Step called before Reset");
  CheckTargets(targets);
  StepResult out;
  const Eigen::Vector2d start = state_.position;
  for (int i = 0; i < substeps_per_control_; ++i) Substep(targets, &out.info);

  out.info.progress = (state_.position - start).dot(reward_.direction);
  if (reward_enabled_) {
    ++reward_evaluations_;
    const double lambda = reward_.energy_weight;
    out.reward = (1.0 - lambda) * out.info.progress / params_.control_period -
                 lambda * out.info.energy;
  } else {
    out.reward = std::numeric_limits<double>::quiet_NaN();
  }

  out.info.fell = std::abs(state_.pitch) > episode_.pitch_limit ||
                  HeightAboveGround() <
                      episode_.min_height_fraction * standing_height_;
  if (terrain_.has_ceiling()) {
    for (const auto& c : TrunkCorners()) {
      if (c.y() >= terrain_.Ceiling(c.x())) out.info.ceiling_hit = true;
    }
  }
  out.info.left_walkway = !terrain_.OnWalkway(state_.position.x());
  out.info.time_limit = state_.time >= episode_.time_limit - 1e-9;
  out.terminated =
      out.info.fell || out.info.ceiling_hit || out.info.left_walkway;
  out.done = out.terminated || out.info.time_limit;
  return out;
}

std::array<Eigen::Vector2d, kLegs> Simulator::FootPositions() const {
  std::array<Eigen::Vector2d, kLegs> feet;
  for (int leg = 0; leg < kLegs; ++leg) {
    feet[leg] = Leg(state_, geometry_, leg).foot;
  }
  return feet;
}

std::array<Eigen::Vector2d, 4> Simulator::TrunkCorners() const {
  const double l = geometry_.trunk_half_length;
  const double hh = geometry_.trunk_half_height;
  const auto& p = state_.position;
  return {p + Rotate(state_.pitch, {l, hh}), p + Rotate(state_.pitch, {l, -hh}),
          p + Rotate(state_.pitch, {-l, hh}),
          p + Rotate(state_.pitch, {-l, -hh})};
}

double Simulator::HeightAboveGround() const {
  return state_.position.y() - terrain_.Height(state_.position.x());
}

TraceRecord MakeTraceRecord(const Simulator& sim, const Vec& target,
                            double reward) {
  const SimState& s = sim.state();
  TraceRecord r;
  r.time = s.time;
  r.position = s.position;
  r.pitch = s.pitch;
  r.target = target;
  r.q = s.q;
  r.qd = s.qd;
  r.torque = s.torque;
  r.contacts = s.contacts;
  r.feet = sim.FootPositions();
  r.reward = reward;
  return r;
}

nlohmann::json ToJson(const TraceRecord& r) {
  nlohmann::json feet = nlohmann::json::array();
  for (const auto& f : r.feet) feet.push_back({f.x(), f.y()});
  return {{"time", r.time},
          {"x", r.position.x()},
          {"z", r.position.y()},
          {"pitch", r.pitch},
          {"target", ToStd(r.target)},
          {"q", ToStd(r.q)},
          {"qd", ToStd(r.qd)},
          {"torque", ToStd(r.torque)},
          {"contacts", std::vector<bool>(r.contacts.begin(), r.contacts.end())},
          {"feet", feet},
          {"reward", std::isfinite(r.reward) ? nlohmann::json(r.reward)
                                             : nlohmann::json(nullptr)}};
}

TraceRecord TraceRecordFromJson(const nlohmann::json& j) {
  TraceRecord r;
  r.time = j.at("time").get<double>();
  r.position = {j.value("x", 0.0), j.value("z", 0.0)};
  r.pitch = j.value("pitch", 0.0);
  r.target = FromStd(j.at("target").get<std::vector<double>>());
  r.q = FromStd(j.at("q").get<std::vector<double>>());
  if (j.contains("qd")) r.qd = FromStd(j["qd"].get<std::vector<double>>());
  if (j.contains("torque")) {
    r.torque = FromStd(j["torque"].get<std::vector<double>>());
  }
  if (j.contains("contacts")) {
    const auto c = j["contacts"].get<std::vector<bool>>();
    for (size_t i = 0; i < c.size() && i < kLegs; ++i) r.contacts[i] = c[i];
  }
  if (j.contains("feet")) {
    const auto& f = j["feet"];
    for (size_t i = 0; i < f.size() && i < kLegs; ++i) {
      r.feet[i] = {f[i][0].get<double>(), f[i][1].get<double>()};
    }
  }
  if (j.contains("reward") && j["reward"].is_number()) {
    r.reward = j["reward"].get<double>();
  }
  if (r.target.size() != kJoints || r.q.size() != kJoints) {
    throw ConfigError("trace record must carry 8 targets and 8 joint angles");
  }
  return r;
}

}  // namespace etgrl::sim
