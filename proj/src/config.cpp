#include "etgrl/config.hpp"

#include <fstream>
#include <set>
#include <thread>

namespace etgrl::cli {
namespace {

using nlohmann::json;

// ---- scalar codecs ----

void Decode(const json& j, double& v, const std::string& key) {
  if (!j.is_number()) throw ConfigError("'" + key + "' must be a number");
  v = j.get<double>();
}
void Decode(const json& j, int& v, const std::string& key) {
  if (!j.is_number_integer()) {
    throw ConfigError("'" + key + "' must be an integer");
  }
  v = j.get<int>();
}
void Decode(const json& j, std::uint64_t& v, const std::string& key) {
  if (!j.is_number_unsigned()) {
    throw ConfigError("'" + key + "' must be a non-negative integer");
  }
  v = j.get<std::uint64_t>();
}
void Decode(const json& j, bool& v, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError("'" + key + "' must be a boolean");
  v = j.get<bool>();
}
void Decode(const json& j, std::string& v, const std::string& key) {
  if (!j.is_string()) throw ConfigError("'" + key + "' must be a string");
  v = j.get<std::string>();
}
template <class T>
void Decode(const json& j, std::vector<T>& v, const std::string& key) {
  if (!j.is_array()) throw ConfigError("'" + key + "' must be an array");
  v.clear();
  for (size_t i = 0; i < j.size(); ++i) {
    T item{};
    Decode(j[i], item, key + "[" + std::to_string(i) + "]");
    v.push_back(item);
  }
}
void Decode(const json& j, Eigen::Vector2d& v, const std::string& key) {
  std::vector<double> xs;
  Decode(j, xs, key);
  if (xs.size() != 2) throw ConfigError("'" + key + "' must have 2 entries");
  v = {xs[0], xs[1]};
}
void Decode(const json& j, es::FitnessNormalization& v, const std::string& key) {
  std::string s;
  Decode(j, s, key);
  v = es::ParseNormalization(s);
}
void Decode(const json& j, es::SearchSpace& v, const std::string& key) {
  std::string s;
  Decode(j, s, key);
  v = es::ParseSearchSpace(s);
}

template <class T>
json Encode(const T& v) {
  return v;
}
json Encode(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }
json Encode(es::FitnessNormalization v) { return es::ToString(v); }
json Encode(es::SearchSpace v) { return es::ToString(v); }

class Writer {
 public:
  template <class T>
  void operator()(const char* key, const T& v) {
    out[key] = Encode(v);
  }
  json out = json::object();
};

class Reader {
 public:
  Reader(const json& j, std::string section)
      : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) {
      throw ConfigError("'" + section_ + "' must be an object");
    }
  }

  template <class T>
  void operator()(const char* key, T& v) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    Decode(j_.at(key), v, section_.empty() ? key : section_ + "." + key);
  }

  // Sections parsed by other code still count as known.
  void Known(const char* key) { used_.insert(key); }

  void Finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) {
        throw ConfigError("unknown key '" +
                          (section_.empty() ? key : section_ + "." + key) +
                          "'");
      }
    }
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> used_;
};

// ---- field lists ----

template <class V>
void Fields(trajgen::CpgConfig& c, V& v) {
  v("amplitude", c.amplitude);
  v("angular_frequency", c.angular_frequency);
  v("phase_offset", c.phase_offset);
}

template <class V>
void Fields(trajgen::RbfConfig& c, V& v) {
  v("neuron_count", c.neuron_count);
  v("bandwidth", c.bandwidth);
  v("output_dim", c.output_dim);
}

template <class V>
void Fields(train::MotionPrior& c, V& v) {
  v("hip_amplitude", c.hip_amplitude);
  v("knee_amplitude", c.knee_amplitude);
  v("fit_samples", c.fit_samples);
}

template <class V>
void Fields(es::EsConfig& c, V& v) {
  v("population", c.population);
  v("noise_std", c.noise_std);
  v("learning_rate", c.learning_rate);
  v("control_points", c.control_points);
  v("normalization", c.normalization);
  v("max_iters", c.max_iters);
  v("antithetic", c.antithetic);
  v("convergence_window", c.convergence_window);
  v("convergence_tol", c.convergence_tol);
  v("noise_decay", c.noise_decay);
  v("space", c.space);
  v("common_eval_seed", c.common_eval_seed);
}

template <class V>
void Fields(rl::RlConfig& c, V& v) {
  v("gamma", c.gamma);
  v("exploration_std", c.exploration_std);
  v("batch_size", c.batch_size);
  v("soft_update", c.soft_update);
  v("critic_lr", c.critic_lr);
  v("actor_lr", c.actor_lr);
  v("train_steps_per_env_step", c.train_steps_per_env_step);
  v("residual_bound", c.residual_bound);
  v("buffer_capacity", c.buffer_capacity);
  v("policy_hidden", c.policy_hidden);
  v("critic_hidden", c.critic_hidden);
  v("max_grad_norm", c.max_grad_norm);
}

template <class V>
void Fields(train::DualConfig& c, V& v) {
  v("outer_iterations", c.outer_iterations);
  v("rl_steps", c.rl_steps);
  v("etg_iterations", c.etg_iterations);
  v("warmup_steps", c.warmup_steps);
  v("eval_episodes", c.eval_episodes);
  v("metrics_every", c.metrics_every);
}

template <class V>
void Fields(sim::SimParams& c, V& v) {
  v("latency", c.latency);
  v("foot_friction", c.foot_friction);
  v("base_mass", c.base_mass);
  v("base_inertia", c.base_inertia);
  v("leg_mass", c.leg_mass);
  v("leg_inertia", c.leg_inertia);
  v("kp", c.kp);
  v("kd", c.kd);
  v("torque_limit", c.torque_limit);
  v("physics_step", c.physics_step);
  v("control_period", c.control_period);
}

template <class V>
void Fields(sim::ContactParams& c, V& v) {
  v("stiffness", c.stiffness);
  v("damping", c.damping);
  v("tangential_stiffness", c.tangential_stiffness);
  v("tangential_damping", c.tangential_damping);
}

template <class V>
void Fields(sim::RewardConfig& c, V& v) {
  v("energy_weight", c.energy_weight);
  v("direction", c.direction);
}

template <class V>
void Fields(sim::EpisodeOptions& c, V& v) {
  v("time_limit", c.time_limit);
  v("settle_time", c.settle_time);
  v("initial_joint_noise", c.initial_joint_noise);
  v("pitch_limit", c.pitch_limit);
  v("min_height_fraction", c.min_height_fraction);
}

template <class V>
void Fields(sim::RobotGeometry& c, V& v) {
  v("hip_offset", c.hip_offset);
  v("thigh", c.thigh);
  v("shank", c.shank);
  v("trunk_half_length", c.trunk_half_length);
  v("trunk_half_height", c.trunk_half_height);
  v("stance_hip", c.stance_hip);
  v("stance_knee", c.stance_knee);
  v("hip_lower", c.hip_lower);
  v("hip_upper", c.hip_upper);
  v("knee_lower", c.knee_lower);
  v("knee_upper", c.knee_upper);
}

template <class V>
void Fields(EvalSection& c, V& v) {
  v("episodes", c.episodes);
  v("checkpoint", c.checkpoint);
}

template <class V>
void Fields(DistillSection& c, V& v) {
  v("rounds", c.config.rounds);
  v("episodes_per_round", c.config.episodes_per_round);
  v("epochs", c.config.epochs);
  v("batch_size", c.config.batch_size);
  v("learning_rate", c.config.learning_rate);
  v("holdout_fraction", c.config.holdout_fraction);
  v("student_hidden", c.config.student_hidden);
  v("student_velocity", c.config.student_velocity);
  v("teacher", c.teacher);
  v("noise", c.noise);
  v("eval_episodes", c.eval_episodes);
}

template <class V>
void Fields(CalibrateSection& c, V& v) {
  v("traces", c.traces);
  v("excitation_traces", c.excitation_traces);
  v("excitation_steps", c.excitation_steps);
  v("budget", c.budget);
}

template <class T>
json WriteSection(T c) {
  Writer w;
  Fields(c, w);
  return w.out;
}

template <class T>
void ReadSection(const json& root, const char* name, T& c, Reader& top) {
  top.Known(name);
  if (!root.contains(name)) return;
  Reader r(root.at(name), name);
  Fields(c, r);
  r.Finish();
}

sim::TerrainProfile ResolveTerrain(const std::string& task, std::uint64_t seed,
                                   const json* overrides) {
  json base = sim::ToJson(sim::TerrainProfile::ForTask(task, seed));
  if (overrides) {
    if (!overrides->is_object()) {
      throw ConfigError("'terrain' must be an object");
    }
    for (const auto& [key, value] : overrides->items()) {
      if (!base.contains(key)) {
        throw ConfigError("unknown key 'terrain." + key + "'");
      }
      if (key == "kind" && value != base.at("kind")) {
        throw ConfigError("'terrain.kind' must match the task '" + task + "'");
      }
      base[key] = value;
    }
  }
  return sim::TerrainFromJson(base);
}

}  // namespace

void RunConfig::Validate() const {
  sim::ParseTerrainKind(task);
  if (parallelism < 0) throw ConfigError("parallelism must be >= 0");
  if (rbf.output_dim != sim::kJoints) {
    throw ConfigError("rbf.output_dim must be " + std::to_string(sim::kJoints));
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  terrain.Validate();
  sim.Validate();
  reward.Validate();
  episode.Validate();
  if (contact.stiffness <= 0.0 || contact.damping < 0.0 ||
      contact.tangential_stiffness <= 0.0 || contact.tangential_damping < 0.0) {
    throw ConfigError("contact stiffness must be > 0 and damping >= 0");
  }
  Setup().Validate();
  if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  distill.config.Validate();
  if (distill.eval_episodes < 1) {
    throw ConfigError("distill.eval_episodes must be >= 1");
  }
  DistillNoise().Validate();
  if (calibrate.budget < 0) throw ConfigError("calibrate.budget must be >= 0");
  if (calibrate.excitation_traces < 1 || calibrate.excitation_steps < 1) {
    throw ConfigError("calibrate excitation counts must be >= 1");
  }
  CalibrationSpace().Validate();
  calibrate.es.Validate();
}

int RunConfig::ResolvedParallelism() const {
  if (parallelism > 0) return parallelism;
  return std::max(1u, std::thread::hardware_concurrency());
}

train::TaskConfig RunConfig::Task() const {
  train::TaskConfig t;
  t.terrain = terrain;
  t.params = sim;
  t.reward = reward;
  t.episode = episode;
  t.contact = contact;
  t.geometry = geometry;
  t.include_velocity = include_velocity;
  return t;
}

train::GeneratorSpec RunConfig::Generator() const {
  train::GeneratorSpec g;
  g.cpg = cpg;
  g.rbf = trajgen::Resolve(cpg, rbf);
  return g;
}

train::TrainSetup RunConfig::Setup() const {
  cpg.Validate();
  rbf.Validate();
  train::TrainSetup s;
  s.task = Task();
  s.generator = Generator();
  s.prior = prior;
  s.es = es;
  s.es.parallelism = ResolvedParallelism();
  s.rl = rl;
  s.dual = dual;
  s.dual.seed = seed;
  return train::ApplyVariant(s, variant);
}

s2r::NoiseProfile RunConfig::DistillNoise() const {
  const sim::ObservationLayout layout{distill.config.student_velocity};
  if (distill.noise.empty()) return s2r::NoiseProfile::Default(layout);
  if (static_cast<int>(distill.noise.size()) != layout.size()) {
    throw ConfigError("distill.noise needs " + std::to_string(layout.size()) +
                      " entries for the student layout");
  }
  s2r::NoiseProfile n;
  n.std = Eigen::Map<const Vec>(distill.noise.data(),
                                static_cast<Eigen::Index>(distill.noise.size()));
  return n;
}

s2r::CalibrationSpace RunConfig::CalibrationSpace() const {
  if (calibrate.space.empty()) return s2r::CalibrationSpace::Default(sim);
  return {calibrate.space};
}

RunConfig RunConfigFromJson(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (!j.contains("schema") || j.at("schema") != kRunConfigSchema) {
      throw ConfigError(std::string("config 'schema' must be \"") +
                        kRunConfigSchema + "\"");
    }
    RunConfig c;
    Reader top(j, "");
    top.Known("schema");
    top("task", c.task);
    sim::ParseTerrainKind(c.task);
    if (j.contains("variant")) {
      std::string v;
      Decode(j.at("variant"), v, "variant");
      try {
        c.variant = train::ParseVariant(v);
      } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
      }
    }
    top.Known("variant");
    top("seed", c.seed);
    top("out_dir", c.out_dir);
    top("parallelism", c.parallelism);
    top("include_velocity", c.include_velocity);

    top.Known("terrain");
    c.terrain = ResolveTerrain(c.task, c.seed,
                               j.contains("terrain") ? &j.at("terrain") : nullptr);
    ReadSection(j, "cpg", c.cpg, top);
    ReadSection(j, "rbf", c.rbf, top);
    ReadSection(j, "prior", c.prior, top);
    ReadSection(j, "es", c.es, top);
    ReadSection(j, "rl", c.rl, top);
    ReadSection(j, "dual", c.dual, top);
    ReadSection(j, "sim", c.sim, top);
    ReadSection(j, "contact", c.contact, top);
    ReadSection(j, "reward", c.reward, top);
    ReadSection(j, "episode", c.episode, top);
    ReadSection(j, "geometry", c.geometry, top);
    ReadSection(j, "eval", c.eval, top);
    ReadSection(j, "distill", c.distill, top);

    top.Known("calibrate");
    if (j.contains("calibrate")) {
      const json& cj = j.at("calibrate");
      Reader r(cj, "calibrate");
      Fields(c.calibrate, r);
      r.Known("space");
      r.Known("es");
      r.Finish();
      if (cj.contains("space") && !cj.at("space").empty()) {
        c.calibrate.space = s2r::CalibrationSpaceFromJson(cj.at("space")).bounds;
      }
      if (cj.contains("es")) {
        Reader er(cj.at("es"), "calibrate.es");
        Fields(c.calibrate.es, er);
        er.Finish();
      }
    }
    top.Finish();
    c.Validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

json ToJson(const RunConfig& c) {
  json j;
  j["schema"] = kRunConfigSchema;
  j["task"] = c.task;
  j["variant"] = train::ToString(c.variant);
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["parallelism"] = c.parallelism;
  j["include_velocity"] = c.include_velocity;
  j["terrain"] = sim::ToJson(c.terrain);
  j["cpg"] = WriteSection(c.cpg);
  j["rbf"] = WriteSection(c.rbf);
  j["prior"] = WriteSection(c.prior);
  j["es"] = WriteSection(c.es);
  j["rl"] = WriteSection(c.rl);
  j["dual"] = WriteSection(c.dual);
  j["sim"] = WriteSection(c.sim);
  j["contact"] = WriteSection(c.contact);
  j["reward"] = WriteSection(c.reward);
  j["episode"] = WriteSection(c.episode);
  j["geometry"] = WriteSection(c.geometry);
  j["eval"] = WriteSection(c.eval);
  j["distill"] = WriteSection(c.distill);
  json cal = WriteSection(c.calibrate);
  cal["space"] = s2r::ToJson(s2r::CalibrationSpace{c.calibrate.space});
  cal["es"] = WriteSection(c.calibrate.es);
  j["calibrate"] = cal;
  return j;
}

RunConfig LoadRunConfig(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file '" + file.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + file.string() + "': " + e.what());
  }
  try {
    return RunConfigFromJson(j);
  } catch (const ConfigError& e) {
    throw ConfigError("config file '" + file.string() + "': " + e.what());
  }
}

}  // namespace etgrl::cli
