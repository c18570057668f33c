#include "etgrl/rlcore.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace etgrl::rl {
namespace {

std::vector<int> Sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Mat GeneratorBlock(const Mat& states, const ActionComposer& composer) {
  const int k = composer.action_dim();
  if (composer.generator_offset < 0) return Mat::Zero(k, states.cols());
  return states.middleRows(composer.generator_offset, k);
}

// Composes a batch and reports which coordinates passed through the clamp.
Mat ComposeBatch(const Mat& generator, const Mat& residual,
                 const ActionComposer& composer, Mat* pass_mask) {
  Mat raw = generator + residual;
  Mat out = raw;
  if (pass_mask) pass_mask->resize(raw.rows(), raw.cols());
  for (int c = 0; c < raw.cols(); ++c) {
    for (int r = 0; r < raw.rows(); ++r) {
      const double v = std::clamp(raw(r, c), composer.lower[r],
                                  composer.upper[r]);
      out(r, c) = v;
      if (pass_mask) (*pass_mask)(r, c) = (v == raw(r, c)) ? 1.0 : 0.0;
    }
  }
  return out;
}

Mat CriticInput(const Mat& scaled_states, const Mat& actions) {
  Mat in(scaled_states.rows() + actions.rows(), scaled_states.cols());
  in.topRows(scaled_states.rows()) = scaled_states;
  in.bottomRows(actions.rows()) = actions;
  return in;
}

}  // namespace

void RlConfig::Validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
  if (!(exploration_std >= 0.0)) {
    throw ConfigError("exploration_std must be >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(soft_update >= 0.0 && soft_update <= 1.0)) {
    throw ConfigError("soft_update must lie in [0,1]");
  }
  if (!(critic_lr > 0.0) || !(actor_lr > 0.0)) {
    throw ConfigError("learning rates must be > 0");
  }
  if (!(train_steps_per_env_step >= 0.0)) {
    throw ConfigError("train_steps_per_env_step must be >= 0");
  }
  if (!(residual_bound > 0.0)) throw ConfigError("residual_bound must be > 0");
  if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ArgumentError("replay capacity must be >= 1");
}

void ReplayBuffer::Push(Transition tr) {
  ++total_pushed_;
  if (size() < capacity_) {
    items_.push_back(std::move(tr));
    return;
  }
  items_[cursor_] = std::move(tr);
  cursor_ = (cursor_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(int i) const {
  if (i < 0 || i >= size()) throw ArgumentError("replay index out of range");
  return items_[(cursor_ + i) % size()];
}

std::vector<const Transition*> ReplayBuffer::Sample(int batch_size,
                                                    NormalSampler& rng) const {
  if (batch_size < 1 || size() < batch_size) {
    throw StateError("replay buffer holds " + std::to_string(size()) +
                     " transitions, cannot sample " +
                     std::to_string(batch_size));
  }
  std::vector<const Transition*> out(batch_size);
  for (auto& p : out) p = &items_[rng.UniformIndex(items_.size())];
  return out;
}

Vec ActionComposer::Compose(const Vec& generator, const Vec& residual) const {
  return ComposeAction(generator, residual, lower, upper);
}

Vec ActionComposer::GeneratorFromObservation(const Vec& obs) const {
  if (generator_offset < 0) return Vec::Zero(action_dim());
  return obs.segment(generator_offset, action_dim());
}

void ActionComposer::Validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw ConfigError("joint limit vectors must be non-empty and equal length");
  }
  if ((lower.array() > upper.array()).any()) {
    throw ConfigError("joint lower limit above upper limit");
  }
  if (!(residual_bound > 0.0)) throw ConfigError("residual bound must be > 0");
}

Batch Batch::From(const std::vector<const Transition*>& items) {
  if (items.empty()) throw ArgumentError("empty batch");
  const int b = static_cast<int>(items.size());
  const int s = items[0]->state.size();
  const int a = items[0]->action.size();
  Batch out{Mat(s, b), Mat(a, b), Vec(b), Mat(s, b), Vec(b)};
  for (int i = 0; i < b; ++i) {
    out.states.col(i) = items[i]->state;
    out.actions.col(i) = items[i]->action;
    out.rewards[i] = items[i]->reward;
    out.next_states.col(i) = items[i]->next_state;
    out.dones[i] = items[i]->done ? 1.0 : 0.0;
  }
  return out;
}

Vec MlpQFunction::ValueAndActionGradient(const Mat& scaled_states,
                                         const Mat& actions,
                                         Mat* action_grad) const {
  nn::ForwardCache cache;
  const Mat q = net_.ForwardBatch(CriticInput(scaled_states, actions), &cache);
  if (action_grad) {
    const auto g = net_.Backward(cache, Mat::Ones(1, q.cols()));
    *action_grad = g.input.bottomRows(actions.rows());
  }
  return q.row(0).transpose();
}

Mat ScaleStates(const Mat& states, const Vec& input_scale) {
  if (input_scale.size() != states.rows()) {
    throw ArgumentError("input scale length differs from observation size");
  }
  return input_scale.asDiagonal() * states;
}

Vec TdTargets(const nn::Mlp& critic_target, const nn::Mlp& policy_target,
              const Batch& batch, const UpdateContext& ctx) {
  const Mat next_scaled = ScaleStates(batch.next_states, ctx.input_scale);
  const Mat next_residual =
      ctx.composer.residual_bound * policy_target.ForwardBatch(next_scaled);
  const Mat next_actions =
      ComposeBatch(GeneratorBlock(batch.next_states, ctx.composer),
                   next_residual, ctx.composer, nullptr);
  const Vec next_q =
      critic_target.ForwardBatch(CriticInput(next_scaled, next_actions))
          .row(0)
          .transpose();
  Vec y(batch.size());
  for (int i = 0; i < batch.size(); ++i) {
    // A terminal transition bootstraps nothing, whatever next_q holds.
    y[i] = batch.dones[i] > 0.5 ? batch.rewards[i]
                                : batch.rewards[i] + ctx.cfg.gamma * next_q[i];
  }
  return y;
}

UpdateResult CriticUpdate(nn::Mlp& critic, nn::OptimState& critic_opt,
                          const nn::Mlp& critic_target,
                          const nn::Mlp& policy_target, const Batch& batch,
                          const UpdateContext& ctx) {
  const Vec y = TdTargets(critic_target, policy_target, batch, ctx);
  nn::ForwardCache cache;
  const Mat q = critic.ForwardBatch(
      CriticInput(ScaleStates(batch.states, ctx.input_scale), batch.actions),
      &cache);
  const Vec err = q.row(0).transpose() - y;
  UpdateResult result;
  result.loss = err.squaredNorm() / batch.size();
  if (!std::isfinite(result.loss)) {
    ++critic_opt.skipped_steps;
    return result;
  }
  const Mat dy = (2.0 / batch.size()) * err.transpose();
  const auto grads = critic.Backward(cache, dy);
  result.applied = nn::OptimStep(critic_opt, critic, grads.layers);
  return result;
}

UpdateResult ActorUpdate(nn::Mlp& policy, nn::OptimState& policy_opt,
                         const QFunction& critic, const Batch& batch,
                         const UpdateContext& ctx) {
  const Mat scaled = ScaleStates(batch.states, ctx.input_scale);
  nn::ForwardCache cache;
  const Mat raw = policy.ForwardBatch(scaled, &cache);
  const double bound = ctx.composer.residual_bound;
  Mat pass;
  const Mat actions = ComposeBatch(GeneratorBlock(batch.states, ctx.composer),
                                   bound * raw, ctx.composer, &pass);
  Mat dq_da;
  const Vec q = critic.ValueAndActionGradient(scaled, actions, &dq_da);
  UpdateResult result;
  result.loss = -q.mean();
  if (!std::isfinite(result.loss)) {
    ++policy_opt.skipped_steps;
    return result;
  }
  // d(-mean Q)/d(raw policy output), through the clamp and the bound.
  const Mat draw = (-bound / batch.size()) * dq_da.cwiseProduct(pass);
  const auto grads = policy.Backward(cache, draw);
  result.applied = nn::OptimStep(policy_opt, policy, grads.layers);
  return result;
}

Vec PolicyResidual(const nn::Mlp& policy, const Vec& obs,
                   const Vec& input_scale, double residual_bound) {
  return residual_bound * policy.Forward(obs.cwiseProduct(input_scale));
}

Vec Act(const nn::Mlp& policy, const Vec& obs, const Vec& input_scale,
        double residual_bound, double exploration_std, NormalSampler& rng) {
  Vec a = PolicyResidual(policy, obs, input_scale, residual_bound);
  if (exploration_std > 0.0) {
    for (int i = 0; i < a.size(); ++i) a[i] += exploration_std * rng();
  }
  return a.cwiseMax(-residual_bound).cwiseMin(residual_bound);
}

Vec ComposeAction(const Vec& generator, const Vec& residual, const Vec& lower,
                  const Vec& upper) {
  if (generator.size() != residual.size() || generator.size() != lower.size() ||
      lower.size() != upper.size()) {
    throw ArgumentError("action vectors have mismatched lengths");
  }
  return (generator + residual).cwiseMax(lower).cwiseMin(upper);
}

ResidualAgent::ResidualAgent(int obs_dim, const RlConfig& cfg,
                             ActionComposer composer, Vec input_scale,
                             std::uint64_t seed)
    : cfg_(cfg), composer_(std::move(composer)),
      input_scale_(std::move(input_scale)) {
  cfg_.Validate();
  composer_.Validate();
  if (input_scale_.size() != obs_dim) {
    throw ConfigError("input scale length differs from observation size");
  }
  const int act_dim = composer_.action_dim();
  policy_ = nn::Mlp::Random(Sizes(obs_dim, cfg_.policy_hidden, act_dim),
                            nn::Activation::kTanh, nn::Activation::kTanh,
                            SplitSeed(seed, 1), 0.01);
  critic_ = nn::Mlp::Random(Sizes(obs_dim + act_dim, cfg_.critic_hidden, 1),
                            nn::Activation::kTanh, nn::Activation::kIdentity,
                            SplitSeed(seed, 2));
  policy_target_ = policy_;
  critic_target_ = critic_;
  policy_opt_ = nn::OptimState::For(policy_, cfg_.actor_lr);
  critic_opt_ = nn::OptimState::For(critic_, cfg_.critic_lr);
  policy_opt_.max_grad_norm = cfg_.max_grad_norm;
  critic_opt_.max_grad_norm = cfg_.max_grad_norm;
}

Vec ResidualAgent::Act(const Vec& obs, double exploration_std,
                       NormalSampler& rng) const {
  return rl::Act(policy_, obs, input_scale_, composer_.residual_bound,
                 exploration_std, rng);
}

Vec ResidualAgent::Command(const Vec& obs, double exploration_std,
                           NormalSampler& rng) const {
  return composer_.Compose(composer_.GeneratorFromObservation(obs),
                           Act(obs, exploration_std, rng));
}

ResidualAgent::Losses ResidualAgent::Update(const Batch& batch) {
  const UpdateContext ctx{cfg_, composer_, input_scale_};
  Losses out;
  const auto c = CriticUpdate(critic_, critic_opt_, critic_target_,
                              policy_target_, batch, ctx);
  const auto a = ActorUpdate(policy_, policy_opt_, MlpQFunction(critic_),
                             batch, ctx);
  if (!c.applied) ++skipped_;
  if (!a.applied) ++skipped_;
  nn::SoftUpdate(critic_target_, critic_, cfg_.soft_update);
  nn::SoftUpdate(policy_target_, policy_, cfg_.soft_update);
  out.critic = c.loss;
  out.actor = a.loss;
  return out;
}

void ResidualAgent::SyncTargets() {
  policy_target_ = policy_;
  critic_target_ = critic_;
}

nlohmann::json ResidualAgent::PolicyCheckpoint() const {
  auto j = nn::ToJson(policy_);
  j["residual_bound"] = composer_.residual_bound;
  j["input_scale"] = std::vector<double>(
      input_scale_.data(), input_scale_.data() + input_scale_.size());
  return j;
}

nlohmann::json ResidualAgent::CriticCheckpoint() const {
  return nn::ToJson(critic_);
}

nlohmann::json ResidualAgent::TargetsCheckpoint() const {
  return {{"policy", nn::ToJson(policy_target_)},
          {"critic", nn::ToJson(critic_target_)}};
}

void ResidualAgent::LoadPolicy(const nlohmann::json& j) {
  auto net = nn::MlpFromJson(j);
  if (!net.SameArchitecture(policy_)) {
    throw ConfigError("policy checkpoint architecture mismatch");
  }
  policy_ = std::move(net);
}

void ResidualAgent::LoadCritic(const nlohmann::json& j) {
  auto net = nn::MlpFromJson(j);
  if (!net.SameArchitecture(critic_)) {
    throw ConfigError("critic checkpoint architecture mismatch");
  }
  critic_ = std::move(net);
}

void ResidualAgent::LoadTargets(const nlohmann::json& j) {
  auto p = nn::MlpFromJson(j.at("policy"));
  auto c = nn::MlpFromJson(j.at("critic"));
  if (!p.SameArchitecture(policy_) || !c.SameArchitecture(critic_)) {
    throw ConfigError("target checkpoint architecture mismatch");
  }
  policy_target_ = std::move(p);
  critic_target_ = std::move(c);
}

void WriteMetricsCsvHeader(std::ostream& os) {
  os << "record,outer_iteration,step,critic_loss,actor_loss,"
        "mean_episode_return,buffer_size,eval_return\n";
}

void WriteMetricsRow(std::ostream& os, const MetricsRow& row) {
  const auto old = os.precision(10);
  os << row.record << ',' << row.outer_iteration << ',' << row.step << ','
     << row.critic_loss << ',' << row.actor_loss << ','
     << row.mean_episode_return << ',' << row.buffer_size << ','
     << row.eval_return << '\n';
  os.precision(old);
}

}  // namespace etgrl::rl
