#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace etgrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Invalid configuration (bad file, inconsistent dimensions, infeasible setup).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument passed to an operation.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation not valid in the object's current state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Broken caller contract, e.g. a stale forward cache.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t SplitSeed(std::uint64_t seed, std::uint64_t a,
                               std::uint64_t b = 0) {
  return MixSeed(MixSeed(MixSeed(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

// Gaussian draws from our own Box-Muller so results do not depend on the
// standard library's normal_distribution implementation.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    double u2 = Uniform();
    while (u1 <= 0.0) u1 = Uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double Uniform() {
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }

  std::uint64_t UniformIndex(std::uint64_t n) { return rng_() % n; }

  Rng& engine() { return rng_; }

 private:
  Rng rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline bool AllFinite(const Eigen::Ref<const Mat>& m) {
  return m.allFinite();
}

}  // namespace etgrl
