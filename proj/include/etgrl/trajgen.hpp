#pragma once

// CPG-driven RBF trajectory generator.
//
// Two phase-shifted sines c0(t) = A sin(wt), c1(t) = A sin(wt + B) feed a
// layer of H Gaussian units whose centers sit on the CPG's own curve at
// evenly spaced phases i*T/H. A linear readout P = W V + b produces K joint
// targets. Because the readout is linear, the parameters can be solved for
// from explicit (phase, target) control points, which is what lets the
// optimizer search in trajectory space.

#include <utility>
#include <vector>

#include "json.hpp"

#include "etgrl/common.hpp"

namespace etgrl::trajgen {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct CpgConfig {
  double amplitude = 1.0;             // A
  double angular_frequency = kTwoPi * 2.0;  // w, rad/s
  double phase_offset = kPi / 2.0;    // B, rad in [0, 2pi)

  double Period() const { return kTwoPi / angular_frequency; }
  void Validate() const;
};

struct RbfConfig {
  int neuron_count = 20;
  double bandwidth = 0.0;  // sigma_RBF; <= 0 means "derive from CPG"
  int output_dim = 8;

  void Validate() const;
};

// Bandwidth at which adjacent centers overlap with activation 0.5.
double DefaultBandwidth(const CpgConfig& cpg, int neuron_count);

// Returns `rbf` with a concrete bandwidth filled in when it was left at 0.
RbfConfig Resolve(const CpgConfig& cpg, RbfConfig rbf);

struct TrajectoryParams {
  Mat weights;  // K x H
  Vec bias;     // K

  static TrajectoryParams Zero(const RbfConfig& rbf);
  int output_dim() const { return static_cast<int>(bias.size()); }
  int neuron_count() const { return static_cast<int>(weights.cols()); }

  // Flat layout: weights row-major, then bias.
  Vec Flatten() const;
  static TrajectoryParams Unflatten(const Vec& flat, int output_dim,
                                    int neuron_count);

  bool operator==(const TrajectoryParams& other) const {
    return weights == other.weights && bias == other.bias;
  }
};

struct ControlPoint {
  double phase;  // seconds in [0, T)
  Vec target;    // rad
};

struct ControlPointSet {
  std::vector<ControlPoint> points;

  int size() const { return static_cast<int>(points.size()); }
  int dim() const { return points.empty() ? 0 : points[0].target.size(); }

  // Targets stacked point-major: [p_0; p_1; ...; p_{n-1}].
  Vec Stacked() const;
  void SetStacked(const Vec& stacked);
};

std::pair<double, double> CpgSignals(const CpgConfig& cfg, double t);

std::vector<std::pair<double, double>> RbfCenters(const CpgConfig& cpg,
                                                  const RbfConfig& rbf);

Vec RbfActivations(const CpgConfig& cpg, const RbfConfig& rbf, double t);

Vec GeneratorOutput(const TrajectoryParams& params, const CpgConfig& cpg,
                    const RbfConfig& rbf, double t);

ControlPointSet SampleControlPoints(const TrajectoryParams& params,
                                    const CpgConfig& cpg, const RbfConfig& rbf,
                                    int n);

// Minimum-norm least-squares readout through the control points, one output
// row at a time, on the design matrix [V(t_0..t_{n-1}) | 1]. Singular values
// below 1e-10 of the largest are discarded.
TrajectoryParams FitParams(const ControlPointSet& points, const CpgConfig& cpg,
                           const RbfConfig& rbf);

// Precomputed pseudoinverse for repeated fits at fixed phases. FitParams is
// this applied once; the optimizer reuses it across a whole population.
class ReadoutSolver {
 public:
  ReadoutSolver(const std::vector<double>& phases, const CpgConfig& cpg,
                const RbfConfig& rbf);

  TrajectoryParams Solve(const ControlPointSet& points) const;
  int rank() const { return rank_; }

 private:
  std::vector<double> phases_;
  int neuron_count_;
  Mat pinv_;  // (H+1) x n
  int rank_ = 0;
};

// Joint-wise phase shifts applied at the CPG input. Joint j of the gait
// signal is row j of the generator evaluated at t + offset_j / w.
struct PhaseLayout {
  std::vector<double> joint_phase_offsets;  // rad, one per output row

  static PhaseLayout Uniform(int output_dim);
  // Diagonal pairs in phase, the two pairs pi apart. Joint order is
  // (hip, knee) for FL, FR, RL, RR.
  static PhaseLayout Trot();
};

Vec GaitSignal(const TrajectoryParams& params, const CpgConfig& cpg,
               const RbfConfig& rbf, const PhaseLayout& layout, double t);

nlohmann::json ToJson(const CpgConfig& cfg);
nlohmann::json ToJson(const RbfConfig& cfg);
nlohmann::json ToJson(const TrajectoryParams& params, const CpgConfig& cpg,
                      const RbfConfig& rbf);
TrajectoryParams ParamsFromJson(const nlohmann::json& j);

}  // namespace etgrl::trajgen
