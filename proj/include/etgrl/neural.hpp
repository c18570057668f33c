#pragma once

// Small fully connected networks with hand-written reverse mode, enough for
// the actor and critic. Batches are column-major: one sample per column.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "etgrl/common.hpp"

namespace etgrl::nn {

enum class Activation { kIdentity, kTanh };

std::string ToString(Activation a);
Activation ParseActivation(const std::string& s);

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
};

// Same shape as the network's layers; used for gradients and moments.
using LayerSet = std::vector<Layer>;

LayerSet ZerosLike(const LayerSet& layers);
bool AllFinite(const LayerSet& layers);
double SquaredNorm(const LayerSet& layers);

struct ForwardCache {
  std::uint64_t version = 0;
  std::vector<Mat> inputs;   // input to each layer
  std::vector<Mat> outputs;  // post-activation output of each layer
};

struct Gradients {
  LayerSet layers;
  Mat input;  // d(loss)/d(x), same shape as the forward input
};

class Mlp {
 public:
  Mlp() = default;
  // Zero-initialized network.
  Mlp(std::vector<int> sizes, Activation hidden, Activation output);

  // Uniform fan-in initialization, U(-1/sqrt(in), 1/sqrt(in)); the last
  // layer is additionally multiplied by `final_layer_scale`.
  static Mlp Random(std::vector<int> sizes, Activation hidden,
                    Activation output, std::uint64_t seed,
                    double final_layer_scale = 1.0);

  Vec Forward(const Vec& x, ForwardCache* cache = nullptr) const;
  Mat ForwardBatch(const Mat& x, ForwardCache* cache = nullptr) const;

  // Exact gradients of sum(Y .* dy) for the forward pass held in `cache`.
  // Throws ContractError if the network changed since that forward pass.
  Gradients Backward(const ForwardCache& cache, const Mat& dy) const;

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  int parameter_count() const;

  const LayerSet& layers() const { return layers_; }
  // Mutable access invalidates outstanding forward caches.
  LayerSet& mutable_layers();
  std::uint64_t version() const { return version_; }

  bool SameArchitecture(const Mlp& other) const;

 private:
  std::vector<int> sizes_;
  Activation hidden_ = Activation::kTanh;
  Activation output_ = Activation::kIdentity;
  LayerSet layers_;
  std::uint64_t version_ = 0;
};

// Adam with bias correction.
struct OptimState {
  LayerSet first_moment;
  LayerSet second_moment;
  std::int64_t step = 0;
  std::int64_t skipped_steps = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;

  static OptimState For(const Mlp& net, double learning_rate);
};

// Returns false (and counts a skipped step) when any gradient is
// non-finite. Throws StateError if an update produced a non-finite
// parameter.
bool OptimStep(OptimState& state, Mlp& net, const LayerSet& grads);

// target <- rho * online + (1 - rho) * target
void SoftUpdate(Mlp& target, const Mlp& online, double rho);

nlohmann::json ToJson(const Mlp& net);
Mlp MlpFromJson(const nlohmann::json& j);

}  // namespace etgrl::nn
