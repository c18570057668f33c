#pragma once

// Residual actor-critic learner.
//
// The policy outputs a bounded residual that is added to the trajectory
// generator's joint targets. The generator signal is part of the policy
// observation, so the composed action can be rebuilt from a stored state
// and a residual; replayed transitions store the composed action.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "etgrl/common.hpp"
#include "etgrl/neural.hpp"
#include "etgrl/transition.hpp"

namespace etgrl::rl {

struct RlConfig {
  double gamma = 0.99;
  double exploration_std = 0.1;  // rad
  int batch_size = 256;
  double soft_update = 0.005;    // rho
  double critic_lr = 1e-3;
  double actor_lr = 1e-4;
  // Gradient updates per environment step; fractional values update every
  // 1/x steps.
  double train_steps_per_env_step = 1.0;
  double residual_bound = 0.3;   // rad
  int buffer_capacity = 200000;
  std::vector<int> policy_hidden = {64, 64};
  std::vector<int> critic_hidden = {128, 128};
  double max_grad_norm = 10.0;   // 0 disables clipping

  void Validate() const;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);

  void Push(Transition tr);
  // Uniform draws with replacement.
  std::vector<const Transition*> Sample(int batch_size,
                                        NormalSampler& rng) const;

  int size() const { return static_cast<int>(items_.size()); }
  int capacity() const { return capacity_; }
  // i = 0 is the oldest stored transition.
  const Transition& at(int i) const;
  std::int64_t total_pushed() const { return total_pushed_; }

 private:
  int capacity_;
  std::vector<Transition> items_;
  int cursor_ = 0;  // next slot to overwrite once full
  std::int64_t total_pushed_ = 0;
};

// Turns generator targets plus residuals into clamped joint commands.
struct ActionComposer {
  Vec lower;  // joint limits, rad
  Vec upper;
  double residual_bound = 0.3;
  // Offset of the generator signal inside an observation; -1 means the
  // controller has no generator and residuals are composed with zero.
  int generator_offset = -1;

  int action_dim() const { return static_cast<int>(lower.size()); }
  Vec Compose(const Vec& generator, const Vec& residual) const;
  Vec GeneratorFromObservation(const Vec& obs) const;
  void Validate() const;
};

struct Batch {
  Mat states;       // obs x B
  Mat actions;      // act x B
  Vec rewards;      // B
  Mat next_states;  // obs x B
  Vec dones;        // B, 1 for terminal

  static Batch From(const std::vector<const Transition*>& items);
  int size() const { return static_cast<int>(rewards.size()); }
};

// Action-value model as seen by the actor update.
class QFunction {
 public:
  virtual ~QFunction() = default;
  // Q for each column and dQ/da (act x B).
  virtual Vec ValueAndActionGradient(const Mat& scaled_states,
                                     const Mat& actions,
                                     Mat* action_grad) const = 0;
};

class MlpQFunction : public QFunction {
 public:
  explicit MlpQFunction(const nn::Mlp& net) : net_(net) {}
  Vec ValueAndActionGradient(const Mat& scaled_states, const Mat& actions,
                             Mat* action_grad) const override;

 private:
  const nn::Mlp& net_;
};

// Everything the updates need besides the networks.
struct UpdateContext {
  const RlConfig& cfg;
  const ActionComposer& composer;
  const Vec& input_scale;  // elementwise observation scaling
};

struct UpdateResult {
  double loss = 0.0;
  bool applied = false;  // false when the step was skipped
};

// y = r + gamma (1 - done) Q'(s', compose(e(s'), pi'(s'))), one Adam step on
// the mean squared TD error.
UpdateResult CriticUpdate(nn::Mlp& critic, nn::OptimState& critic_opt,
                          const nn::Mlp& critic_target,
                          const nn::Mlp& policy_target, const Batch& batch,
                          const UpdateContext& ctx);

// TD targets alone, for inspection.
Vec TdTargets(const nn::Mlp& critic_target, const nn::Mlp& policy_target,
              const Batch& batch, const UpdateContext& ctx);

// loss = -mean Q(s, compose(e(s), pi(s))); one Adam step on the policy.
UpdateResult ActorUpdate(nn::Mlp& policy, nn::OptimState& policy_opt,
                         const QFunction& critic, const Batch& batch,
                         const UpdateContext& ctx);

Mat ScaleStates(const Mat& states, const Vec& input_scale);

// Policy mean residual, bound * tanh-net(scaled obs).
Vec PolicyResidual(const nn::Mlp& policy, const Vec& obs,
                   const Vec& input_scale, double residual_bound);

// a_RL = clamp(pi(s) + eps, +-bound), eps ~ N(0, std^2) per coordinate.
Vec Act(const nn::Mlp& policy, const Vec& obs, const Vec& input_scale,
        double residual_bound, double exploration_std, NormalSampler& rng);

Vec ComposeAction(const Vec& generator, const Vec& residual, const Vec& lower,
                  const Vec& upper);

// Online and target networks with their optimizers.
class ResidualAgent {
 public:
  ResidualAgent(int obs_dim, const RlConfig& cfg, ActionComposer composer,
                Vec input_scale, std::uint64_t seed);

  Vec Act(const Vec& obs, double exploration_std, NormalSampler& rng) const;
  // Composed joint command for an observation.
  Vec Command(const Vec& obs, double exploration_std,
              NormalSampler& rng) const;

  struct Losses {
    double critic = 0.0;
    double actor = 0.0;
  };
  Losses Update(const Batch& batch);

  const nn::Mlp& policy() const { return policy_; }
  const nn::Mlp& critic() const { return critic_; }
  nn::Mlp& mutable_policy() { return policy_; }
  nn::Mlp& mutable_critic() { return critic_; }
  const ActionComposer& composer() const { return composer_; }
  const Vec& input_scale() const { return input_scale_; }
  const RlConfig& config() const { return cfg_; }
  std::int64_t skipped_updates() const { return skipped_; }
  // Copies online weights into the targets.
  void SyncTargets();

  nlohmann::json PolicyCheckpoint() const;
  nlohmann::json CriticCheckpoint() const;
  nlohmann::json TargetsCheckpoint() const;
  void LoadPolicy(const nlohmann::json& j);
  void LoadCritic(const nlohmann::json& j);
  void LoadTargets(const nlohmann::json& j);

 private:
  RlConfig cfg_;
  ActionComposer composer_;
  Vec input_scale_;
  nn::Mlp policy_, critic_, policy_target_, critic_target_;
  nn::OptimState policy_opt_, critic_opt_;
  std::int64_t skipped_ = 0;
};

// One line of the training metrics CSV. `record` is "step" for periodic
// training rows and "outer" for the end-of-iteration evaluation rows.
struct MetricsRow {
  std::string record = "step";
  std::int64_t outer_iteration = 0;
  std::int64_t step = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_episode_return = 0.0;
  int buffer_size = 0;
  double eval_return = 0.0;
};

void WriteMetricsCsvHeader(std::ostream& os);
void WriteMetricsRow(std::ostream& os, const MetricsRow& row);

}  // namespace etgrl::rl
