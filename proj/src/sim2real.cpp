#include "etgrl/sim2real.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "etgrl/rlcore.hpp"

namespace etgrl::s2r {
namespace {

using nlohmann::json;
using Layout = sim::ObservationLayout;

std::vector<double> ToStd(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vec FromJsonVec(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw ArgumentError(std::string("trace record lacks array '") + key + "'");
  }
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double* Field(sim::SimParams& p, const std::string& name) {
  if (name == "latency") return &p.latency;
  if (name == "foot_friction") return &p.foot_friction;
  if (name == "base_mass") return &p.base_mass;
  if (name == "base_inertia") return &p.base_inertia;
  if (name == "leg_mass") return &p.leg_mass;
  if (name == "leg_inertia") return &p.leg_inertia;
  if (name == "kp") return &p.kp;
  if (name == "kd") return &p.kd;
  if (name == "torque_limit") return &p.torque_limit;
  return nullptr;
}

CalibrationBound Scaled(const std::string& name, double value) {
  return {name, 0.5 * value, 1.5 * value};
}

}  // namespace

// ---- joint traces ----

void JointTrace::Validate() const {
  if (samples.empty()) throw ArgumentError("joint trace is empty");
  const auto k = samples.front().target.size();
  for (const auto& s : samples) {
    if (s.target.size() != k || s.q.size() != k) {
      throw ArgumentError("joint trace has ragged samples");
    }
    if (!std::isfinite(s.time) || !AllFinite(s.target) || !AllFinite(s.q)) {
      throw ArgumentError("joint trace has non-finite values");
    }
  }
  if (samples.size() < 2) return;
  const double period = samples[1].time - samples[0].time;
  for (size_t i = 1; i < samples.size(); ++i) {
    const double dt = samples[i].time - samples[i - 1].time;
    if (!(dt > 0.0)) throw ArgumentError("joint trace times must increase");
    if (std::abs(dt - period) > 1e-6 * std::max(1.0, period)) {
      throw ArgumentError("joint trace sampling is not uniform");
    }
  }
}

double JointTrace::Period() const {
  Validate();
  if (samples.size() < 2) return samples.front().time;
  return (samples.back().time - samples.front().time) /
         static_cast<double>(samples.size() - 1);
}

JointTrace ReadJointTrace(std::istream& is) {
  JointTrace trace;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ArgumentError("trace line " + std::to_string(lineno) + ": " +
                          e.what());
    }
    if (!j.contains("time") || !j.at("time").is_number()) {
      throw ArgumentError("trace line " + std::to_string(lineno) +
                          " lacks 'time'");
    }
    trace.samples.push_back({j.at("time").get<double>(),
                             FromJsonVec(j, "target"), FromJsonVec(j, "q")});
  }
  trace.Validate();
  return trace;
}

JointTrace ReadJointTrace(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ArgumentError("cannot open trace " + file.string());
  return ReadJointTrace(in);
}

void WriteJointTrace(std::ostream& os, const JointTrace& trace) {
  for (const auto& s : trace.samples) {
    json j = {{"time", s.time}, {"target", ToStd(s.target)}, {"q", ToStd(s.q)}};
    os << j.dump() << '\n';
  }
}

sim::EpisodeOptions ReplaySetup::NoiseFreeEpisode() {
  sim::EpisodeOptions e;
  e.initial_joint_noise = 0.0;
  return e;
}

namespace {

sim::Simulator ReplaySimulator(const sim::SimParams& params,
                               const ReplaySetup& setup) {
  sim::Simulator sim(setup.terrain, params, {}, setup.episode, setup.geometry,
                     setup.contact);
  sim.set_reward_enabled(false);
  sim.Reset(setup.reset_seed);
  return sim;
}

}  // namespace

JointTrace RecordTrace(const sim::SimParams& params,
                       const std::vector<Vec>& commands,
                       const ReplaySetup& setup) {
  sim::Simulator sim = ReplaySimulator(params, setup);
  JointTrace trace;
  for (const Vec& c : commands) {
    sim.Step(c);
    trace.samples.push_back({sim.state().time, c, sim.state().q});
  }
  return trace;
}

std::vector<Vec> ExcitationCommands(const sim::RobotGeometry& geometry,
                                    int steps, double control_period,
                                    int variant) {
  if (steps < 1) throw ArgumentError("excitation needs >= 1 step");
  if (!(control_period > 0.0)) throw ArgumentError("control period must be > 0");
  // Slow large sweeps mixed with a faster component; the pair shifts per
  // variant so several traces cover different bands.
  const double f1 = 0.7 + 0.35 * (variant % 4);
  const double f2 = 2.3 + 0.9 * (variant % 3);
  const Vec stance = geometry.StancePose();
  const Vec lo = geometry.LowerLimits();
  const Vec hi = geometry.UpperLimits();
  const double leg_phase[sim::kLegs] = {0.0, 0.5, 0.5, 0.0};
  std::vector<Vec> out;
  out.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    const double t = (i + 1) * control_period;
    Vec q = stance;
    for (int leg = 0; leg < sim::kLegs; ++leg) {
      const double a = trajgen::kTwoPi * (f1 * t + leg_phase[leg]);
      const double b = trajgen::kTwoPi * (f2 * t + 0.25 * leg + 0.1 * variant);
      q[2 * leg] += 0.2 * std::sin(a) + 0.06 * std::sin(b);
      q[2 * leg + 1] += 0.25 * std::sin(a + 0.8) + 0.08 * std::cos(b);
    }
    out.push_back(q.cwiseMax(lo).cwiseMin(hi));
  }
  return out;
}

double TraceObjective(const std::vector<JointTrace>& traces,
                      const sim::SimParams& params, const ReplaySetup& setup) {
  if (traces.empty()) throw ArgumentError("no traces to compare against");
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& trace : traces) {
    trace.Validate();
    if (std::abs(trace.Period() - params.control_period) >
        1e-6 * params.control_period) {
      throw ArgumentError("trace period differs from the control period");
    }
    try {
      sim::Simulator sim = ReplaySimulator(params, setup);
      for (const auto& s : trace.samples) {
        if (s.q.size() != sim::kJoints) {
          throw ArgumentError("trace joint count differs from the robot");
        }
        sim.Step(s.target);
        sum += (sim.state().q - s.q).cwiseAbs().sum();
        count += sim::kJoints;
      }
    } catch (const sim::SimulationDiverged&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return sum / static_cast<double>(count);
}

// ---- calibration ----

CalibrationSpace CalibrationSpace::Default(const sim::SimParams& base) {
  CalibrationSpace s;
  s.bounds = {{"latency", 0.0, 3.0 * base.physics_step},
              Scaled("foot_friction", base.foot_friction),
              Scaled("base_mass", base.base_mass), Scaled("kp", base.kp),
              Scaled("kd", base.kd)};
  return s;
}

CalibrationSpace CalibrationSpace::Gains(const sim::SimParams& base) {
  CalibrationSpace s;
  s.bounds = {Scaled("kp", base.kp), Scaled("kd", base.kd),
              Scaled("foot_friction", base.foot_friction)};
  return s;
}

void CalibrationSpace::Validate() const {
  if (bounds.empty()) throw ConfigError("calibration space is empty");
  std::set<std::string> seen;
  sim::SimParams probe;
  for (const auto& b : bounds) {
    if (!Field(probe, b.name)) {
      throw ConfigError("unknown calibration parameter '" + b.name + "'");
    }
    if (!seen.insert(b.name).second) {
      throw ConfigError("duplicate calibration parameter '" + b.name + "'");
    }
    if (!std::isfinite(b.lower) || !std::isfinite(b.upper) ||
        !(b.lower < b.upper)) {
      throw ConfigError("calibration bounds for '" + b.name +
                        "' must be finite with lower < upper");
    }
    if (b.lower < 0.0) {
      throw ConfigError("calibration bounds for '" + b.name + "' must be >= 0");
    }
  }
}

sim::SimParams CalibrationSpace::Apply(const sim::SimParams& base,
                                       const Vec& u) const {
  if (u.size() != dim()) throw ArgumentError("normalized vector size mismatch");
  sim::SimParams p = base;
  for (int i = 0; i < dim(); ++i) {
    const auto& b = bounds[i];
    double v = b.lower + std::clamp(u[i], 0.0, 1.0) * (b.upper - b.lower);
    if (b.name == "latency") {
      v = std::round(v / p.physics_step) * p.physics_step;
    }
    *Field(p, b.name) = v;
  }
  return p;
}

Vec CalibrationSpace::Normalize(const sim::SimParams& params) const {
  Vec u(dim());
  sim::SimParams p = params;
  for (int i = 0; i < dim(); ++i) {
    const auto& b = bounds[i];
    u[i] = (*Field(p, b.name) - b.lower) / (b.upper - b.lower);
  }
  return u;
}

json ToJson(const CalibrationSpace& space) {
  json arr = json::array();
  for (const auto& b : space.bounds) {
    arr.push_back({{"name", b.name}, {"lower", b.lower}, {"upper", b.upper}});
  }
  return arr;
}

CalibrationSpace CalibrationSpaceFromJson(const json& j) {
  if (!j.is_array()) throw ConfigError("calibration space must be an array");
  CalibrationSpace s;
  for (const auto& e : j) {
    for (const auto& [key, value] : e.items()) {
      if (key != "name" && key != "lower" && key != "upper") {
        throw ConfigError("unknown key '" + key + "' in calibration bound");
      }
    }
    try {
      s.bounds.push_back({e.at("name").get<std::string>(),
                          e.at("lower").get<double>(),
                          e.at("upper").get<double>()});
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("calibration bound: ") + ex.what());
    }
  }
  s.Validate();
  return s;
}

es::EsConfig CalibrationOptions::DefaultSearch() {
  es::EsConfig c;
  c.population = 16;
  c.noise_std = 0.08;
  c.learning_rate = 1.0;
  c.noise_decay = 0.98;
  c.normalization = es::FitnessNormalization::kRank;
  return c;
}

CalibrationResult Calibrate(const std::vector<JointTrace>& traces,
                            const CalibrationSpace& space,
                            const sim::SimParams& base,
                            const ReplaySetup& setup,
                            const CalibrationOptions& options) {
  if (traces.empty()) throw ArgumentError("calibration needs >= 1 trace");
  for (const auto& t : traces) t.Validate();
  space.Validate();
  base.Validate();

  std::atomic<int> diverged{0};
  auto objective = [&](const Vec& u) {
    const double v = TraceObjective(traces, space.Apply(base, u), setup);
    if (!std::isfinite(v)) ++diverged;
    return v;
  };
  const Vec mid = Vec::Constant(space.dim(), 0.5);
  CalibrationResult r;
  if (options.budget == 0) {
    r.normalized = mid;
    r.params = space.Apply(base, mid);
    r.objective = objective(mid);
    r.evaluations = 1;
  } else {
    const auto box =
        es::MinimizeInBox(mid, options.es, objective, options.budget,
                          options.seed);
    r.normalized = box.best_x;
    r.params = space.Apply(base, box.best_x);
    r.objective = box.best_value;
    r.evaluations = box.evaluations;
    r.history = box.history;
  }
  if (!std::isfinite(r.objective)) {
    std::ostringstream msg;
    msg << "calibration failed: all " << r.evaluations
        << " candidate replays diverged or ended early (" << diverged.load()
        << " non-finite objectives over " << traces.size() << " traces)";
    throw CalibrationFailed(msg.str());
  }
  return r;
}

// ---- observation noise ----

NoiseProfile NoiseProfile::Zero(const Layout& layout) {
  return {Vec::Zero(layout.size())};
}

NoiseProfile NoiseProfile::Default(const Layout& layout) {
  NoiseProfile n = Zero(layout);
  n.std[Layout::kPitch] = 0.005;
  n.std[Layout::kPitchRate] = 0.05;
  n.std.segment(Layout::kJointAngles, sim::kJoints).setConstant(0.01);
  n.std.segment(Layout::kJointRates, sim::kJoints).setConstant(0.05);
  n.std.segment(Layout::kContacts, sim::kLegs).setConstant(0.02);
  if (layout.include_velocity) {
    n.std.segment(Layout::kVelocity, 2).setConstant(0.05);
  }
  return n;
}

void NoiseProfile::Validate() const {
  for (Eigen::Index i = 0; i < std.size(); ++i) {
    if (!std::isfinite(std[i]) || std[i] < 0.0) {
      throw ConfigError("noise std must be finite and >= 0");
    }
  }
}

json ToJson(const NoiseProfile& noise) { return ToStd(noise.std); }

NoiseProfile NoiseProfileFromJson(const json& j) {
  if (!j.is_array()) throw ConfigError("noise profile must be an array");
  NoiseProfile n;
  const auto v = j.get<std::vector<double>>();
  n.std = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  n.Validate();
  return n;
}

Vec PerturbObservation(const Vec& obs, const NoiseProfile& noise,
                       const Layout& layout, NormalSampler& rng) {
  if (obs.size() != layout.size() || noise.std.size() != layout.size()) {
    throw ArgumentError("observation, noise and layout sizes differ");
  }
  Vec out = obs;
  for (int i = 0; i < layout.size(); ++i) {
    const double s = noise.std[i];
    if (i >= Layout::kContacts && i < Layout::kContacts + sim::kLegs) {
      if (s > 0.0 && rng.Uniform() < std::min(s, 0.1)) {
        out[i] = obs[i] > 0.5 ? 0.0 : 1.0;
      }
    } else if (s > 0.0) {
      out[i] += s * rng();
    }
  }
  return out;
}

Vec StripVelocity(const Vec& obs) {
  const Layout full{true};
  if (obs.size() != full.size()) {
    throw ArgumentError("expected an observation with velocity channels");
  }
  Vec out(Layout{false}.size());
  out.head(Layout::kVelocity) = obs.head(Layout::kVelocity);
  out.tail(sim::kJoints) = obs.tail(sim::kJoints);
  return out;
}

// ---- distillation ----

void DistillConfig::Validate() const {
  if (rounds < 1) throw ConfigError("distillation needs >= 1 round");
  if (episodes_per_round < 1) throw ConfigError("episodes_per_round must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must be in (0, 1)");
  }
  for (int h : student_hidden) {
    if (h < 1) throw ConfigError("student hidden sizes must be >= 1");
  }
}

namespace {

struct Sample {
  Vec obs;    // student layout, noise-free
  Vec label;  // teacher residual, rad
};

Vec StudentInput(const Vec& full_obs, bool uses_velocity) {
  return uses_velocity ? full_obs : StripVelocity(full_obs);
}

// Mean over samples and joints of the squared residual error.
double HoldoutMse(const nn::Mlp& student, const Vec& scale, double bound,
                  const std::vector<Sample>& set) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& s : set) {
    const Vec y = bound * student.Forward(scale.cwiseProduct(s.obs));
    sum += (y - s.label).squaredNorm();
  }
  return sum / (static_cast<double>(set.size()) * sim::kJoints);
}

}  // namespace

DistillResult Distill(const Teacher& teacher, const train::TaskConfig& task,
                      const train::GeneratorSpec& gen,
                      const trajgen::TrajectoryParams& params,
                      const NoiseProfile& noise, const DistillConfig& config) {
  config.Validate();
  noise.Validate();
  if (!teacher.net) throw ArgumentError("distillation needs a teacher network");
  const Layout full{true};
  if (!task.include_velocity || teacher.net->input_size() != full.size() ||
      teacher.input_scale.size() != full.size()) {
    throw ArgumentError("teacher must take the observation with velocity (" +
                        std::to_string(full.size()) + " channels)");
  }
  if (teacher.net->output_size() != sim::kJoints) {
    throw ArgumentError("teacher must output one residual per joint");
  }
  const Layout student_layout{config.student_velocity};
  if (noise.std.size() != student_layout.size()) {
    throw ArgumentError("noise profile has " +
                        std::to_string(noise.std.size()) +
                        " channels, the student layout " +
                        std::to_string(student_layout.size()));
  }

  DistillResult r;
  r.uses_velocity = config.student_velocity;
  r.residual_bound = teacher.residual_bound;
  r.input_scale = config.student_velocity
                      ? teacher.input_scale
                      : sim::DefaultInputScale(student_layout);
  std::vector<int> sizes{student_layout.size()};
  sizes.insert(sizes.end(), config.student_hidden.begin(),
               config.student_hidden.end());
  sizes.push_back(sim::kJoints);
  nn::Mlp student =
      nn::Mlp::Random(sizes, nn::Activation::kTanh, nn::Activation::kTanh,
                      SplitSeed(config.seed, 1));
  nn::OptimState opt = nn::OptimState::For(student, config.learning_rate);

  std::vector<Sample> train_set, holdout;
  NormalSampler split_rng(SplitSeed(config.seed, 2));
  NormalSampler noise_rng(SplitSeed(config.seed, 3));
  NormalSampler batch_rng(SplitSeed(config.seed, 4));
  const double bound = teacher.residual_bound;
  const Vec& scale = r.input_scale;
  nn::Mlp best = student;
  r.best_holdout_mse = std::numeric_limits<double>::infinity();

  for (int round = 0; round < config.rounds; ++round) {
    // Collect: the teacher drives round 0, the (noisy-input) student after.
    for (int ep = 0; ep < config.episodes_per_round; ++ep) {
      sim::Simulator sim = task.MakeSimulator();
      sim.set_reward_enabled(false);
      train::ControlLoop loop(sim, gen, params, true, bound);
      loop.Begin(SplitSeed(config.seed, 5 + round, ep));
      for (;;) {
        const Vec& obs = loop.observation();
        const Vec label = rl::PolicyResidual(*teacher.net, obs,
                                             teacher.input_scale, bound);
        Sample s{StudentInput(obs, r.uses_velocity), label};
        Vec act = label;
        if (round > 0) {
          const Vec noisy =
              PerturbObservation(s.obs, noise, student_layout, noise_rng);
          act = bound * student.Forward(scale.cwiseProduct(noisy));
        }
        if (split_rng.Uniform() < config.holdout_fraction) {
          holdout.push_back(std::move(s));
        } else {
          train_set.push_back(std::move(s));
        }
        const auto out = loop.Advance(act);
        if (out.episode_over) break;
      }
      r.reward_evaluations += sim.reward_evaluations();
    }
    if (train_set.empty()) throw StateError("distillation collected no data");

    // Regress on the aggregate.
    const int n = static_cast<int>(train_set.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (int i = n - 1; i > 0; --i) {
        std::swap(order[i], order[batch_rng.UniformIndex(i + 1)]);
      }
      for (int start = 0; start < n; start += config.batch_size) {
        const int b = std::min(config.batch_size, n - start);
        Mat x(student_layout.size(), b), y(sim::kJoints, b);
        for (int c = 0; c < b; ++c) {
          const Sample& s = train_set[order[start + c]];
          x.col(c) = scale.cwiseProduct(
              PerturbObservation(s.obs, noise, student_layout, noise_rng));
          y.col(c) = s.label;
        }
        nn::ForwardCache cache;
        const Mat pred = bound * student.ForwardBatch(x, &cache);
        const Mat dy = (2.0 * bound / (b * sim::kJoints)) * (pred - y);
        nn::OptimStep(opt, student, student.Backward(cache, dy).layers);
      }
    }

    const double mse = HoldoutMse(student, scale, bound,
                                  holdout.empty() ? train_set : holdout);
    r.round_holdout_mse.push_back(mse);
    if (mse < r.best_holdout_mse) {
      r.best_holdout_mse = mse;
      r.best_round = round;
      best = student;
    }
  }
  r.student = best;
  r.train_samples = static_cast<int>(train_set.size());
  r.holdout_samples = static_cast<int>(holdout.size());
  return r;
}

Vec StudentResidual(const DistillResult& r, const Vec& full_obs) {
  return rl::PolicyResidual(r.student, StudentInput(full_obs, r.uses_velocity),
                            r.input_scale, r.residual_bound);
}

train::EvalResult EvaluateStudent(const DistillResult& student,
                                  const train::TaskConfig& task,
                                  const train::GeneratorSpec& gen,
                                  const trajgen::TrajectoryParams& params,
                                  int episodes, std::uint64_t seed,
                                  const NoiseProfile* noise) {
  if (episodes < 1) throw ArgumentError("evaluation needs >= 1 episode");
  if (!task.include_velocity) {
    throw ArgumentError("student evaluation needs the full observation");
  }
  const Layout layout{student.uses_velocity};
  train::EvalResult r;
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t ep_seed = SplitSeed(seed, 0x6576616c, i);
    sim::Simulator sim = task.MakeSimulator();
    train::ControlLoop loop(sim, gen, params, true, student.residual_bound);
    NormalSampler rng(SplitSeed(ep_seed, 0x6e6f697365));
    loop.Begin(ep_seed);
    double ret = 0.0;
    for (;;) {
      Vec in = StudentInput(loop.observation(), student.uses_velocity);
      if (noise) in = PerturbObservation(in, *noise, layout, rng);
      const Vec act = rl::PolicyResidual(student.student, in,
                                         student.input_scale,
                                         student.residual_bound);
      const auto out = loop.Advance(act);
      if (out.diverged) break;
      ret += out.reward;
      if (out.episode_over) break;
    }
    r.returns.push_back(ret);
  }
  double sum = 0.0;
  for (double v : r.returns) sum += v;
  r.mean = sum / episodes;
  double var = 0.0;
  for (double v : r.returns) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / episodes);
  return r;
}

json StudentToJson(const DistillResult& r) {
  json j = nn::ToJson(r.student);
  j["residual_bound"] = r.residual_bound;
  j["input_scale"] = ToStd(r.input_scale);
  j["uses_velocity"] = r.uses_velocity;
  j["best_round"] = r.best_round;
  j["best_holdout_mse"] = r.best_holdout_mse;
  return j;
}

}  // namespace etgrl::s2r
