#pragma once

// Evolution-strategy search over trajectory generators.
//
// Each iteration samples the current trajectory at n control points, adds
// Gaussian noise to the control points (antithetic pairs), refits one
// readout per perturbation and moves the parameters toward the
// fitness-weighted perturbations. The same normalization and aggregation
// rules are exposed for plain box-constrained vectors (used for simulator
// calibration).

#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "etgrl/common.hpp"
#include "etgrl/trajgen.hpp"
#include "etgrl/transition.hpp"

namespace etgrl::es {

enum class FitnessNormalization { kZScore, kRank };
enum class SearchSpace { kControlPoints, kParameters };

std::string ToString(FitnessNormalization n);
std::string ToString(SearchSpace s);
FitnessNormalization ParseNormalization(const std::string& s);
SearchSpace ParseSearchSpace(const std::string& s);

struct EsConfig {
  int population = 16;
  double noise_std = 0.02;
  double learning_rate = 0.5;
  int control_points = 12;
  FitnessNormalization normalization = FitnessNormalization::kZScore;
  int max_iters = 100;
  bool antithetic = true;
  // Stop once the best fitness improved by less than convergence_tol
  // (relative) over this many iterations. 0 disables the test.
  int convergence_window = 20;
  double convergence_tol = 0.01;
  // noise_std is multiplied by this after every iteration.
  double noise_decay = 1.0;
  SearchSpace space = SearchSpace::kControlPoints;
  int parallelism = 1;
  // All evaluations of one iteration share an episode seed, so candidates
  // are compared under the same initial state (common random numbers).
  bool common_eval_seed = false;

  void Validate() const;
  double NoiseAt(std::int64_t iteration) const;
};

struct EsState {
  trajgen::TrajectoryParams params;
  std::int64_t iteration = 0;
  double best_fitness = -std::numeric_limits<double>::infinity();
  trajgen::TrajectoryParams best_params;
  std::uint64_t seed = 0;
  std::int64_t nonfinite_fitness_count = 0;
  std::vector<double> best_history;  // best_fitness after each iteration

  static EsState Start(const trajgen::TrajectoryParams& init,
                       std::uint64_t seed);
};

struct Candidate {
  trajgen::TrajectoryParams params;
  Vec noise;  // in search coordinates (control points or flat parameters)
};

struct FitnessReport {
  double total_return = 0.0;
  TransitionList transitions;
  int episode_length = 0;
};

// Evaluates one trajectory. `eval_seed` is derived from the master seed,
// the iteration and the candidate index, never from scheduling.
using FitnessFn = std::function<FitnessReport(
    const trajgen::TrajectoryParams& params, std::uint64_t eval_seed)>;

// Number of coordinates the noise acts on.
int SearchDim(const EsConfig& cfg, const trajgen::RbfConfig& rbf);

std::vector<Candidate> PerturbCandidates(const EsState& state,
                                         const EsConfig& cfg,
                                         const trajgen::CpgConfig& cpg,
                                         const trajgen::RbfConfig& rbf);

struct UpdateStats {
  double mean_fitness = 0.0;
  double std_fitness = 0.0;
  double update_norm = 0.0;
  int nonfinite = 0;
};

EsState AggregateUpdate(const EsState& state, const EsConfig& cfg,
                        const std::vector<Candidate>& candidates,
                        const std::vector<double>& fitnesses,
                        UpdateStats* stats = nullptr);

struct IterationRecord {
  std::int64_t iteration = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  double std_fitness = 0.0;
  double update_norm = 0.0;
};

struct EvolveResult {
  TransitionList transitions;
  std::vector<IterationRecord> history;
  bool converged = false;
  int evaluations = 0;
};

// Runs up to cfg.max_iters iterations on `state`. The state is only
// modified at the end of a complete iteration, so an exception from the
// fitness callback leaves it at the last finished iteration.
EvolveResult Evolve(EsState& state, const EsConfig& cfg,
                    const trajgen::CpgConfig& cpg,
                    const trajgen::RbfConfig& rbf, const FitnessFn& evaluate);

void WriteHistoryCsvHeader(std::ostream& os);
void WriteHistoryCsv(std::ostream& os,
                     const std::vector<IterationRecord>& history);

// ---- vector primitives ----

// z-score or centered-rank weights. Non-finite entries get weight 0 and are
// counted in *nonfinite.
Vec NormalizeFitness(const std::vector<double>& fitness,
                     FitnessNormalization mode, int* nonfinite = nullptr);

// Population of noise vectors with per-candidate (per-pair when antithetic)
// generators split from `seed`.
std::vector<Vec> SampleNoise(int dim, int population, double std,
                             bool antithetic, std::uint64_t seed);

struct BoxSearchResult {
  Vec best_x;
  double best_value = std::numeric_limits<double>::infinity();
  Vec final_x;
  int evaluations = 0;
  std::vector<IterationRecord> history;
};

// Minimizes `objective` over [0,1]^d starting at x0 with at most `budget`
// evaluations (the start point counts as one). Candidates are projected
// onto the box before evaluation.
BoxSearchResult MinimizeInBox(const Vec& x0, const EsConfig& cfg,
                              const std::function<double(const Vec&)>& objective,
                              int budget, std::uint64_t seed);

}  // namespace etgrl::es
