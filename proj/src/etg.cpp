#include "etgrl/etg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "etgrl/parallel.hpp"

namespace etgrl::es {
namespace {

using trajgen::TrajectoryParams;

double NonFiniteAsLowest(double f) {
  return std::isfinite(f) ? f : -std::numeric_limits<double>::infinity();
}

void Moments(const std::vector<double>& f, double* mean, double* std) {
  double sum = 0.0;
  int count = 0;
  for (double v : f) {
    if (std::isfinite(v)) {
      sum += v;
      ++count;
    }
  }
  *mean = count > 0 ? sum / count : 0.0;
  double var = 0.0;
  for (double v : f) {
    if (std::isfinite(v)) var += (v - *mean) * (v - *mean);
  }
  *std = count > 0 ? std::sqrt(var / count) : 0.0;
}

bool Converged(const EsState& state, const EsConfig& cfg) {
  const int w = cfg.convergence_window;
  if (w <= 0 || static_cast<int>(state.best_history.size()) <= w) return false;
  const double now = state.best_history.back();
  const double then = state.best_history[state.best_history.size() - 1 - w];
  if (!std::isfinite(then) || !std::isfinite(now)) return false;
  return now - then < cfg.convergence_tol * std::max(std::abs(then), 1e-12);
}

}  // namespace

std::string ToString(FitnessNormalization n) {
  return n == FitnessNormalization::kZScore ? "zscore" : "rank";
}

std::string ToString(SearchSpace s) {
  return s == SearchSpace::kControlPoints ? "control_points" : "parameters";
}

FitnessNormalization ParseNormalization(const std::string& s) {
  if (s == "zscore") return FitnessNormalization::kZScore;
  if (s == "rank") return FitnessNormalization::kRank;
  throw ConfigError("unknown fitness normalization '" + s + "'");
}

SearchSpace ParseSearchSpace(const std::string& s) {
  if (s == "control_points") return SearchSpace::kControlPoints;
  if (s == "parameters") return SearchSpace::kParameters;
  throw ConfigError("unknown search space '" + s + "'");
}

void EsConfig::Validate() const {
  if (population < 2) throw ConfigError("es population must be >= 2");
  if (antithetic && population % 2 != 0) {
    throw ConfigError("antithetic sampling needs an even population");
  }
  if (!(noise_std > 0.0)) throw ConfigError("es noise_std must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("es learning_rate must be > 0");
  if (control_points < 2) throw ConfigError("es control_points must be >= 2");
  if (max_iters < 0) throw ConfigError("es max_iters must be >= 0");
  if (!(noise_decay > 0.0 && noise_decay <= 1.0)) {
    throw ConfigError("es noise_decay must lie in (0, 1]");
  }
  if (convergence_window < 0) {
    throw ConfigError("es convergence_window must be >= 0");
  }
}

double EsConfig::NoiseAt(std::int64_t iteration) const {
  return noise_std * std::pow(noise_decay, static_cast<double>(iteration));
}

EsState EsState::Start(const TrajectoryParams& init, std::uint64_t seed) {
  EsState s;
  s.params = init;
  s.best_params = init;
  s.seed = seed;
  return s;
}

int SearchDim(const EsConfig& cfg, const trajgen::RbfConfig& rbf) {
  return cfg.space == SearchSpace::kControlPoints
             ? cfg.control_points * rbf.output_dim
             : rbf.output_dim * rbf.neuron_count + rbf.output_dim;
}

std::vector<Vec> SampleNoise(int dim, int population, double std,
                             bool antithetic, std::uint64_t seed) {
  std::vector<Vec> noise(population);
  if (antithetic) {
    for (int p = 0; p < population / 2; ++p) {
      NormalSampler normal(SplitSeed(seed, p));
      Vec eps(dim);
      for (int i = 0; i < dim; ++i) eps[i] = std * normal();
      noise[2 * p] = eps;
      noise[2 * p + 1] = -eps;
    }
  } else {
    for (int k = 0; k < population; ++k) {
      NormalSampler normal(SplitSeed(seed, k));
      noise[k].resize(dim);
      for (int i = 0; i < dim; ++i) noise[k][i] = std * normal();
    }
  }
  return noise;
}

std::vector<Candidate> PerturbCandidates(const EsState& state,
                                         const EsConfig& cfg,
                                         const trajgen::CpgConfig& cpg,
                                         const trajgen::RbfConfig& rbf) {
  const int dim = SearchDim(cfg, rbf);
  const auto noise =
      SampleNoise(dim, cfg.population, cfg.NoiseAt(state.iteration),
                  cfg.antithetic, SplitSeed(state.seed, 0x6e6f697365ULL,
                                            state.iteration));
  std::vector<Candidate> out;
  out.reserve(cfg.population);
  if (cfg.space == SearchSpace::kParameters) {
    const Vec flat = state.params.Flatten();
    for (const Vec& eps : noise) {
      out.push_back({TrajectoryParams::Unflatten(flat + eps,
                                                 rbf.output_dim,
                                                 rbf.neuron_count),
                     eps});
    }
    return out;
  }
  const auto base = trajgen::SampleControlPoints(state.params, cpg, rbf,
                                                 cfg.control_points);
  std::vector<double> phases;
  for (const auto& p : base.points) phases.push_back(p.phase);
  const trajgen::ReadoutSolver solver(phases, cpg, rbf);
  const Vec stacked = base.Stacked();
  for (const Vec& eps : noise) {
    auto perturbed = base;
    perturbed.SetStacked(stacked + eps);
    out.push_back({solver.Solve(perturbed), eps});
  }
  return out;
}

Vec NormalizeFitness(const std::vector<double>& fitness,
                     FitnessNormalization mode, int* nonfinite) {
  const int k = static_cast<int>(fitness.size());
  Vec w = Vec::Zero(k);
  int bad = 0;
  for (double f : fitness) bad += std::isfinite(f) ? 0 : 1;
  if (nonfinite) *nonfinite = bad;
  if (mode == FitnessNormalization::kZScore) {
    double mean, std;
    Moments(fitness, &mean, &std);
    if (std < 1e-12) return w;
    for (int i = 0; i < k; ++i) {
      if (std::isfinite(fitness[i])) w[i] = (fitness[i] - mean) / std;
    }
    return w;
  }
  // Centered ranks in [-0.5, 0.5] over the finite entries, ties averaged.
  std::vector<int> idx;
  for (int i = 0; i < k; ++i) {
    if (std::isfinite(fitness[i])) idx.push_back(i);
  }
  const int m = static_cast<int>(idx.size());
  if (m < 2) return w;
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return fitness[a] < fitness[b]; });
  bool all_equal = fitness[idx.front()] == fitness[idx.back()];
  if (all_equal) return w;
  for (int lo = 0; lo < m;) {
    int hi = lo;
    while (hi + 1 < m && fitness[idx[hi + 1]] == fitness[idx[lo]]) ++hi;
    const double rank = 0.5 * (lo + hi);
    for (int r = lo; r <= hi; ++r) w[idx[r]] = rank / (m - 1) - 0.5;
    lo = hi + 1;
  }
  return w;
}

EsState AggregateUpdate(const EsState& state, const EsConfig& cfg,
                        const std::vector<Candidate>& candidates,
                        const std::vector<double>& fitnesses,
                        UpdateStats* stats) {
  const int k = static_cast<int>(candidates.size());
  if (k != cfg.population || static_cast<int>(fitnesses.size()) != k) {
    throw ArgumentError("candidate and fitness counts must equal population");
  }
  int nonfinite = 0;
  const Vec weights = NormalizeFitness(fitnesses, cfg.normalization, &nonfinite);

  EsState next = state;
  next.nonfinite_fitness_count += nonfinite;
  Mat dw = Mat::Zero(state.params.weights.rows(), state.params.weights.cols());
  Vec db = Vec::Zero(state.params.bias.size());
  for (int i = 0; i < k; ++i) {
    if (weights[i] == 0.0) continue;
    dw += weights[i] * (candidates[i].params.weights - state.params.weights);
    db += weights[i] * (candidates[i].params.bias - state.params.bias);
  }
  const double scale = cfg.learning_rate / k;
  next.params.weights += scale * dw;
  next.params.bias += scale * db;

  for (int i = 0; i < k; ++i) {
    const double f = NonFiniteAsLowest(fitnesses[i]);
    if (f > next.best_fitness) {
      next.best_fitness = f;
      next.best_params = candidates[i].params;
    }
  }
  if (stats) {
    Moments(fitnesses, &stats->mean_fitness, &stats->std_fitness);
    stats->update_norm =
        scale * std::sqrt(dw.squaredNorm() + db.squaredNorm());
    stats->nonfinite = nonfinite;
  }
  return next;
}

EvolveResult Evolve(EsState& state, const EsConfig& cfg,
                    const trajgen::CpgConfig& cpg,
                    const trajgen::RbfConfig& rbf, const FitnessFn& evaluate) {
  cfg.Validate();
  EvolveResult result;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const auto candidates = PerturbCandidates(state, cfg, cpg, rbf);
    // Slot 0 is the current trajectory itself, slots 1..K the candidates.
    std::vector<FitnessReport> reports(candidates.size() + 1);
    ParallelFor(static_cast<int>(reports.size()), cfg.parallelism,
                [&](int i) {
                  const auto& params =
                      i == 0 ? state.params : candidates[i - 1].params;
                  const int slot = cfg.common_eval_seed ? 0 : i;
                  reports[i] = evaluate(
                      params, SplitSeed(state.seed, state.iteration, slot));
                });

    std::vector<double> fitness;
    fitness.reserve(candidates.size());
    for (size_t i = 1; i < reports.size(); ++i) {
      fitness.push_back(reports[i].total_return);
    }
    UpdateStats stats;
    EsState next = AggregateUpdate(state, cfg, candidates, fitness, &stats);
    const double center = NonFiniteAsLowest(reports[0].total_return);
    if (!std::isfinite(reports[0].total_return)) {
      ++next.nonfinite_fitness_count;
    }
    if (center > next.best_fitness) {
      next.best_fitness = center;
      next.best_params = state.params;
    }
    ++next.iteration;
    next.best_history.push_back(next.best_fitness);

    for (auto& r : reports) {
      for (auto& tr : r.transitions) result.transitions.push_back(std::move(tr));
    }
    result.evaluations += static_cast<int>(reports.size());
    result.history.push_back({next.iteration, next.best_fitness,
                              stats.mean_fitness, stats.std_fitness,
                              stats.update_norm});
    state = std::move(next);
    if (Converged(state, cfg)) {
      result.converged = true;
      break;
    }
  }
  return result;
}

void WriteHistoryCsvHeader(std::ostream& os) {
  os << "iteration,best_fitness,mean_fitness,std_fitness,update_norm\n";
}

void WriteHistoryCsv(std::ostream& os,
                     const std::vector<IterationRecord>& history) {
  const auto old_precision = os.precision(17);
  for (const auto& r : history) {
    os << r.iteration << ',' << r.best_fitness << ',' << r.mean_fitness << ','
       << r.std_fitness << ',' << r.update_norm << '\n';
  }
  os.precision(old_precision);
}

BoxSearchResult MinimizeInBox(
    const Vec& x0, const EsConfig& cfg,
    const std::function<double(const Vec&)>& objective, int budget,
    std::uint64_t seed) {
  cfg.Validate();
  if (budget < 1) throw ArgumentError("evaluation budget must be >= 1");
  auto project = [](Vec x) { return x.cwiseMax(0.0).cwiseMin(1.0); };
  auto lowest_is_worst = [](double v) {
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  BoxSearchResult result;
  Vec x = project(x0);
  result.best_x = x;
  result.best_value = lowest_is_worst(objective(x));
  result.evaluations = 1;
  const int dim = static_cast<int>(x.size());
  const int k = cfg.population;

  for (std::int64_t it = 0; result.evaluations + k <= budget; ++it) {
    const auto noise = SampleNoise(dim, k, cfg.NoiseAt(it), cfg.antithetic,
                                   SplitSeed(seed, it));
    std::vector<Vec> points(k);
    std::vector<double> values(k);
    for (int i = 0; i < k; ++i) points[i] = project(x + noise[i]);
    ParallelFor(k, cfg.parallelism,
                [&](int i) { values[i] = objective(points[i]); });
    result.evaluations += k;

    std::vector<double> fitness(k);
    for (int i = 0; i < k; ++i) {
      fitness[i] = std::isfinite(values[i]) ? -values[i] : values[i];
      if (lowest_is_worst(values[i]) < result.best_value) {
        result.best_value = values[i];
        result.best_x = points[i];
      }
    }
    int nonfinite = 0;
    const Vec w = NormalizeFitness(fitness, cfg.normalization, &nonfinite);
    Vec step = Vec::Zero(dim);
    for (int i = 0; i < k; ++i) step += w[i] * (points[i] - x);
    step *= cfg.learning_rate / k;
    x = project(x + step);

    double mean, std;
    Moments(fitness, &mean, &std);
    result.history.push_back({it + 1, -result.best_value, mean, std,
                              step.norm()});
  }
  result.final_x = x;
  return result;
}

}  // namespace etgrl::es
