#include "etgrl/neural.hpp"

#include <atomic>
#include <cmath>

namespace etgrl::nn {
namespace {

constexpr char kSchema[] = "etgrl.mlp/1";

std::atomic<std::uint64_t> g_version{1};

std::uint64_t NextVersion() { return g_version.fetch_add(1); }

void Activate(Activation a, Mat& z) {
  if (a == Activation::kTanh) z = z.array().tanh().matrix();
}

}  // namespace

std::string ToString(Activation a) {
  return a == Activation::kTanh ? "tanh" : "identity";
}

Activation ParseActivation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "'");
}

LayerSet ZerosLike(const LayerSet& layers) {
  LayerSet out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    out.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()),
                   Vec::Zero(l.bias.size())});
  }
  return out;
}

bool AllFinite(const LayerSet& layers) {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

double SquaredNorm(const LayerSet& layers) {
  double s = 0.0;
  for (const auto& l : layers) {
    s += l.weight.squaredNorm() + l.bias.squaredNorm();
  }
  return s;
}

Mlp::Mlp(std::vector<int> sizes, Activation hidden, Activation output)
    : sizes_(std::move(sizes)),
      hidden_(hidden),
      output_(output),
      version_(NextVersion()) {
  if (sizes_.size() < 2) throw ArgumentError("an MLP needs >= 2 layer sizes");
  for (int s : sizes_) {
    if (s < 1) throw ArgumentError("layer sizes must be positive");
  }
  for (size_t i = 0; i + 1 < sizes_.size(); ++i) {
    layers_.push_back({Mat::Zero(sizes_[i + 1], sizes_[i]),
                       Vec::Zero(sizes_[i + 1])});
  }
}

Mlp Mlp::Random(std::vector<int> sizes, Activation hidden, Activation output,
                std::uint64_t seed, double final_layer_scale) {
  Mlp net(std::move(sizes), hidden, output);
  NormalSampler rng(seed);
  for (size_t i = 0; i < net.layers_.size(); ++i) {
    Layer& l = net.layers_[i];
    double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    if (i + 1 == net.layers_.size()) bound *= final_layer_scale;
    for (int r = 0; r < l.weight.rows(); ++r) {
      for (int c = 0; c < l.weight.cols(); ++c) {
        l.weight(r, c) = bound * (2.0 * rng.Uniform() - 1.0);
      }
      l.bias[r] = bound * (2.0 * rng.Uniform() - 1.0);
    }
  }
  return net;
}

Vec Mlp::Forward(const Vec& x, ForwardCache* cache) const {
  return ForwardBatch(x, cache).col(0);
}

Mat Mlp::ForwardBatch(const Mat& x, ForwardCache* cache) const {
  if (x.rows() != input_size()) {
    throw ArgumentError("input has " + std::to_string(x.rows()) +
                        " rows, network expects " +
                        std::to_string(input_size()));
  }
  if (cache) {
    cache->version = version_;
    cache->inputs.resize(layers_.size());
    cache->outputs.resize(layers_.size());
  }
  Mat h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (cache) cache->inputs[i] = h;
    Mat z = l.weight * h;
    z.colwise() += l.bias;
    Activate(i + 1 == layers_.size() ? output_ : hidden_, z);
    if (cache) cache->outputs[i] = z;
    h = std::move(z);
  }
  return h;
}

Gradients Mlp::Backward(const ForwardCache& cache, const Mat& dy) const {
  if (cache.version != version_ || cache.inputs.size() != layers_.size()) {
    throw ContractError("forward cache does not belong to this network state");
  }
  if (dy.rows() != output_size() || dy.cols() != cache.outputs.back().cols()) {
    throw ArgumentError("output gradient shape does not match forward pass");
  }
  Gradients g;
  g.layers.resize(layers_.size());
  Mat delta = dy;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    const Activation act =
        i + 1 == static_cast<int>(layers_.size()) ? output_ : hidden_;
    if (act == Activation::kTanh) {
      delta.array() *= 1.0 - cache.outputs[i].array().square();
    }
    g.layers[i].weight = delta * cache.inputs[i].transpose();
    g.layers[i].bias = delta.rowwise().sum();
    delta = layers_[i].weight.transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

int Mlp::parameter_count() const {
  int n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

LayerSet& Mlp::mutable_layers() {
  version_ = NextVersion();
  return layers_;
}

bool Mlp::SameArchitecture(const Mlp& other) const {
  return sizes_ == other.sizes_ && hidden_ == other.hidden_ &&
         output_ == other.output_;
}

OptimState OptimState::For(const Mlp& net, double learning_rate) {
  OptimState s;
  s.first_moment = ZerosLike(net.layers());
  s.second_moment = ZerosLike(net.layers());
  s.learning_rate = learning_rate;
  return s;
}

bool OptimStep(OptimState& state, Mlp& net, const LayerSet& grads) {
  if (grads.size() != net.layers().size() ||
      state.first_moment.size() != grads.size()) {
    throw ArgumentError("gradient shapes do not match the network");
  }
  if (!AllFinite(grads)) {
    ++state.skipped_steps;
    return false;
  }
  double clip = 1.0;
  if (state.max_grad_norm > 0.0) {
    const double norm = std::sqrt(SquaredNorm(grads));
    if (norm > state.max_grad_norm) clip = state.max_grad_norm / norm;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  const double step_size = state.learning_rate / bc1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  LayerSet& layers = net.mutable_layers();
  for (size_t i = 0; i < layers.size(); ++i) {
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = b1 * m + (1.0 - b1) * clip * g;
      v = b2 * v + (1.0 - b2) * (clip * g).cwiseAbs2();
      param.array() -= step_size * m.array() /
                       ((v.array() / bc2).sqrt() + state.epsilon);
    };
    update(layers[i].weight, state.first_moment[i].weight,
           state.second_moment[i].weight, grads[i].weight);
    update(layers[i].bias, state.first_moment[i].bias,
           state.second_moment[i].bias, grads[i].bias);
  }
  if (!AllFinite(layers)) {
    throw StateError("optimizer step produced a non-finite parameter");
  }
  return true;
}

void SoftUpdate(Mlp& target, const Mlp& online, double rho) {
  if (!target.SameArchitecture(online)) {
    throw ArgumentError("soft update between different architectures");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ArgumentError("soft update fraction must lie in [0, 1]");
  }
  if (rho == 0.0) return;
  LayerSet& t = target.mutable_layers();
  const LayerSet& o = online.layers();
  for (size_t i = 0; i < t.size(); ++i) {
    if (rho == 1.0) {
      t[i] = o[i];
    } else {
      t[i].weight = rho * o[i].weight + (1.0 - rho) * t[i].weight;
      t[i].bias = rho * o[i].bias + (1.0 - rho) * t[i].bias;
    }
  }
}

nlohmann::json ToJson(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& l = net.layers()[i];
    std::vector<double> w;
    w.reserve(l.weight.size());
    for (int r = 0; r < l.weight.rows(); ++r) {
      for (int c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    }
    layers.push_back(
        {{"name", "layer" + std::to_string(i)},
         {"weight", w},
         {"bias", std::vector<double>(l.bias.data(),
                                      l.bias.data() + l.bias.size())}});
  }
  return {{"schema", kSchema},
          {"architecture",
           {{"sizes", net.sizes()},
            {"hidden_activation", ToString(net.hidden_activation())},
            {"output_activation", ToString(net.output_activation())}}},
          {"layers", layers}};
}

Mlp MlpFromJson(const nlohmann::json& j) {
  if (j.value("schema", "") != kSchema) {
    throw ConfigError("checkpoint schema tag is not " + std::string(kSchema));
  }
  const auto& arch = j.at("architecture");
  Mlp net(arch.at("sizes").get<std::vector<int>>(),
          ParseActivation(arch.at("hidden_activation").get<std::string>()),
          ParseActivation(arch.at("output_activation").get<std::string>()));
  const auto& layers = j.at("layers");
  LayerSet& dst = net.mutable_layers();
  if (layers.size() != dst.size()) {
    throw ConfigError("checkpoint layer count does not match architecture");
  }
  for (size_t i = 0; i < dst.size(); ++i) {
    const auto w = layers[i].at("weight").get<std::vector<double>>();
    const auto b = layers[i].at("bias").get<std::vector<double>>();
    Layer& l = dst[i];
    if (static_cast<int>(w.size()) != l.weight.size() ||
        static_cast<int>(b.size()) != l.bias.size()) {
      throw ConfigError("checkpoint layer " + std::to_string(i) +
                        " has the wrong shape");
    }
    for (int r = 0; r < l.weight.rows(); ++r) {
      for (int c = 0; c < l.weight.cols(); ++c) {
        l.weight(r, c) = w[r * l.weight.cols() + c];
      }
    }
    for (int r = 0; r < l.bias.size(); ++r) l.bias[r] = b[r];
  }
  if (!AllFinite(net.layers())) {
    throw ConfigError("checkpoint contains non-finite parameters");
  }
  return net;
}

}  // namespace etgrl::nn
