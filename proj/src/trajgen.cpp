#include "etgrl/trajgen.hpp"

#include <cmath>
#include <string>

namespace etgrl::trajgen {
namespace {

double EffectiveBandwidth(const CpgConfig& cpg, const RbfConfig& rbf) {
  return rbf.bandwidth > 0.0 ? rbf.bandwidth
                             : DefaultBandwidth(cpg, rbf.neuron_count);
}

Mat DesignMatrix(const std::vector<double>& phases, const CpgConfig& cpg,
                 const RbfConfig& rbf) {
  const int n = static_cast<int>(phases.size());
  Mat design(n, rbf.neuron_count + 1);
  for (int j = 0; j < n; ++j) {
    design.row(j).head(rbf.neuron_count) =
        RbfActivations(cpg, rbf, phases[j]).transpose();
    design(j, rbf.neuron_count) = 1.0;
  }
  return design;
}

void CheckPhases(const std::vector<double>& phases, double period) {
  if (phases.empty()) throw ArgumentError("control point set is empty");
  for (size_t j = 0; j < phases.size(); ++j) {
    if (!std::isfinite(phases[j]) || phases[j] < 0.0 || phases[j] >= period) {
      throw ArgumentError("control point phase " + std::to_string(phases[j]) +
                          " outside [0, T)");
    }
    if (j > 0 && phases[j] <= phases[j - 1]) {
      throw ArgumentError(phases[j] == phases[j - 1]
                              ? "duplicate control point phase"
                              : "control point phases not increasing");
    }
  }
}

}  // namespace

void CpgConfig::Validate() const {
  if (!(amplitude > 0.0)) throw ConfigError("cpg amplitude must be > 0");
  if (!(angular_frequency > 0.0)) {
    throw ConfigError("cpg angular_frequency must be > 0");
  }
  if (!(phase_offset >= 0.0 && phase_offset < kTwoPi)) {
    throw ConfigError("cpg phase_offset must lie in [0, 2pi)");
  }
}

void RbfConfig::Validate() const {
  if (neuron_count < 2) throw ConfigError("rbf neuron_count must be >= 2");
  if (bandwidth < 0.0 || !std::isfinite(bandwidth)) {
    throw ConfigError("rbf bandwidth must be > 0 (or 0 for the default)");
  }
  if (output_dim < 1) throw ConfigError("rbf output_dim must be >= 1");
}

double DefaultBandwidth(const CpgConfig& cpg, int neuron_count) {
  // Spacing between consecutive centers on the Lissajous curve, measured at
  // the first pair; for B = pi/2 this is the chord of a circle of radius A.
  const double period = cpg.Period();
  auto [a0, a1] = CpgSignals(cpg, 0.0);
  auto [b0, b1] = CpgSignals(cpg, period / neuron_count);
  double spacing = std::hypot(b0 - a0, b1 - a1);
  if (spacing <= 0.0) spacing = cpg.amplitude * kTwoPi / neuron_count;
  return spacing / std::sqrt(std::log(2.0));
}

RbfConfig Resolve(const CpgConfig& cpg, RbfConfig rbf) {
  rbf.bandwidth = EffectiveBandwidth(cpg, rbf);
  return rbf;
}

TrajectoryParams TrajectoryParams::Zero(const RbfConfig& rbf) {
  return {Mat::Zero(rbf.output_dim, rbf.neuron_count),
          Vec::Zero(rbf.output_dim)};
}

Vec TrajectoryParams::Flatten() const {
  const int k = output_dim();
  const int h = neuron_count();
  Vec flat(k * h + k);
  for (int r = 0; r < k; ++r) flat.segment(r * h, h) = weights.row(r);
  flat.tail(k) = bias;
  return flat;
}

TrajectoryParams TrajectoryParams::Unflatten(const Vec& flat, int output_dim,
                                             int neuron_count) {
  if (flat.size() != output_dim * neuron_count + output_dim) {
    throw ArgumentError("flat parameter vector has wrong length");
  }
  TrajectoryParams p{Mat(output_dim, neuron_count), flat.tail(output_dim)};
  for (int r = 0; r < output_dim; ++r) {
    p.weights.row(r) = flat.segment(r * neuron_count, neuron_count);
  }
  return p;
}

Vec ControlPointSet::Stacked() const {
  const int k = dim();
  Vec out(size() * k);
  for (int j = 0; j < size(); ++j) out.segment(j * k, k) = points[j].target;
  return out;
}

void ControlPointSet::SetStacked(const Vec& stacked) {
  const int k = dim();
  if (stacked.size() != size() * k) {
    throw ArgumentError("stacked control point vector has wrong length");
  }
  for (int j = 0; j < size(); ++j) points[j].target = stacked.segment(j * k, k);
}

std::pair<double, double> CpgSignals(const CpgConfig& cfg, double t) {
  const double arg = cfg.angular_frequency * t;
  return {cfg.amplitude * std::sin(arg),
          cfg.amplitude * std::sin(arg + cfg.phase_offset)};
}

std::vector<std::pair<double, double>> RbfCenters(const CpgConfig& cpg,
                                                  const RbfConfig& rbf) {
  const double period = cpg.Period();
  std::vector<std::pair<double, double>> centers;
  centers.reserve(rbf.neuron_count);
  for (int i = 0; i < rbf.neuron_count; ++i) {
    centers.push_back(CpgSignals(cpg, i * period / rbf.neuron_count));
  }
  return centers;
}

Vec RbfActivations(const CpgConfig& cpg, const RbfConfig& rbf, double t) {
  const double sigma = EffectiveBandwidth(cpg, rbf);
  const double inv_var = 1.0 / (sigma * sigma);
  const double period = cpg.Period();
  auto [c0, c1] = CpgSignals(cpg, t);
  Vec v(rbf.neuron_count);
  for (int i = 0; i < rbf.neuron_count; ++i) {
    auto [m0, m1] = CpgSignals(cpg, i * period / rbf.neuron_count);
    const double d0 = c0 - m0;
    const double d1 = c1 - m1;
    v[i] = std::exp(-(d0 * d0 + d1 * d1) * inv_var);
  }
  return v;
}

Vec GeneratorOutput(const TrajectoryParams& params, const CpgConfig& cpg,
                    const RbfConfig& rbf, double t) {
  if (params.neuron_count() != rbf.neuron_count ||
      params.weights.rows() != params.bias.size()) {
    throw ConfigError("trajectory parameters do not match the RBF layer");
  }
  return params.weights * RbfActivations(cpg, rbf, t) + params.bias;
}

ControlPointSet SampleControlPoints(const TrajectoryParams& params,
                                    const CpgConfig& cpg, const RbfConfig& rbf,
                                    int n) {
  if (n < 1) throw ArgumentError("need at least one control point");
  const double period = cpg.Period();
  ControlPointSet set;
  set.points.reserve(n);
  for (int j = 0; j < n; ++j) {
    const double phase = j * period / n;
    set.points.push_back({phase, GeneratorOutput(params, cpg, rbf, phase)});
  }
  return set;
}

TrajectoryParams FitParams(const ControlPointSet& points, const CpgConfig& cpg,
                           const RbfConfig& rbf) {
  std::vector<double> phases;
  phases.reserve(points.points.size());
  for (const auto& p : points.points) phases.push_back(p.phase);
  return ReadoutSolver(phases, cpg, rbf).Solve(points);
}

ReadoutSolver::ReadoutSolver(const std::vector<double>& phases,
                             const CpgConfig& cpg, const RbfConfig& rbf)
    : phases_(phases), neuron_count_(rbf.neuron_count) {
  CheckPhases(phases, cpg.Period());
  const Mat design = DesignMatrix(phases, cpg, rbf);
  Eigen::JacobiSVD<Mat> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  const double cutoff = 1e-10 * (s.size() > 0 ? s[0] : 0.0);
  Vec inv_s = Vec::Zero(s.size());
  for (int i = 0; i < s.size(); ++i) {
    if (s[i] > cutoff) {
      inv_s[i] = 1.0 / s[i];
      ++rank_;
    }
  }
  pinv_ = svd.matrixV() * inv_s.asDiagonal() * svd.matrixU().transpose();
}

TrajectoryParams ReadoutSolver::Solve(const ControlPointSet& points) const {
  if (points.size() != static_cast<int>(phases_.size())) {
    throw ArgumentError("control point count differs from solver phases");
  }
  const int k = points.dim();
  const int n = points.size();
  Mat targets(n, k);
  for (int j = 0; j < n; ++j) {
    if (points.points[j].phase != phases_[j]) {
      throw ArgumentError("control point phase differs from solver phases");
    }
    if (points.points[j].target.size() != k) {
      throw ArgumentError("control point targets have mixed dimensions");
    }
    targets.row(j) = points.points[j].target.transpose();
  }
  const Mat solution = pinv_ * targets;  // (H+1) x K, one column per row
  TrajectoryParams out;
  out.weights = solution.topRows(neuron_count_).transpose();
  out.bias = solution.row(neuron_count_).transpose();
  return out;
}

PhaseLayout PhaseLayout::Uniform(int output_dim) {
  return {std::vector<double>(output_dim, 0.0)};
}

PhaseLayout PhaseLayout::Trot() {
  // FL, FR, RL, RR; FL/RR and FR/RL are the diagonal pairs.
  return {{0.0, 0.0, kPi, kPi, kPi, kPi, 0.0, 0.0}};
}

Vec GaitSignal(const TrajectoryParams& params, const CpgConfig& cpg,
               const RbfConfig& rbf, const PhaseLayout& layout, double t) {
  const int k = params.output_dim();
  if (static_cast<int>(layout.joint_phase_offsets.size()) != k) {
    throw ConfigError("phase layout size differs from generator outputs");
  }
  Vec out(k);
  // Offsets are few and repeated; cache activations per distinct offset.
  double last_offset = std::nan("");
  Vec v;
  for (int j = 0; j < k; ++j) {
    const double offset = layout.joint_phase_offsets[j];
    if (!(offset == last_offset)) {
      v = RbfActivations(cpg, rbf, t + offset / cpg.angular_frequency);
      last_offset = offset;
    }
    out[j] = params.weights.row(j).dot(v) + params.bias[j];
  }
  return out;
}

nlohmann::json ToJson(const CpgConfig& cfg) {
  return {{"amplitude", cfg.amplitude},
          {"angular_frequency", cfg.angular_frequency},
          {"phase_offset", cfg.phase_offset}};
}

nlohmann::json ToJson(const RbfConfig& cfg) {
  return {{"neuron_count", cfg.neuron_count},
          {"bandwidth", cfg.bandwidth},
          {"output_dim", cfg.output_dim}};
}

nlohmann::json ToJson(const TrajectoryParams& params, const CpgConfig& cpg,
                      const RbfConfig& rbf) {
  std::vector<double> w;
  w.reserve(params.weights.size());
  for (int r = 0; r < params.weights.rows(); ++r) {
    for (int c = 0; c < params.weights.cols(); ++c) {
      w.push_back(params.weights(r, c));
    }
  }
  std::vector<double> b(params.bias.data(),
                        params.bias.data() + params.bias.size());
  return {{"schema", "etgrl.trajectory_params/1"},
          {"rows", params.weights.rows()},
          {"cols", params.weights.cols()},
          {"weights", w},
          {"bias", b},
          {"cpg", ToJson(cpg)},
          {"rbf", ToJson(Resolve(cpg, rbf))}};
}

TrajectoryParams ParamsFromJson(const nlohmann::json& j) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto w = j.at("weights").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (static_cast<int>(w.size()) != rows * cols ||
      static_cast<int>(b.size()) != rows) {
    throw ConfigError("trajectory parameter record has inconsistent sizes");
  }
  TrajectoryParams p{Mat(rows, cols), Vec(rows)};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) p.weights(r, c) = w[r * cols + c];
    p.bias[r] = b[r];
  }
  if (!p.weights.allFinite() || !p.bias.allFinite()) {
    throw ConfigError("trajectory parameter record has non-finite entries");
  }
  return p;
}

}  // namespace etgrl::trajgen
