#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memdiff/diffusion.hpp"
#include "memdiff/patterns.hpp"

namespace memdiff {

enum class RecallModel { classical, modern, diffusion };
std::string model_name(RecallModel m);

// One flat configuration drives every experiment; CLI flags and config file
// keys mirror these field names 1:1.
struct ExperimentConfig {
  uint64_t master_seed = 0;
  int trials = 100;
  double theta = 0.68;          // corruption blend weight
  double beta = 5.0;            // modern Hopfield inverse temperature
  int hopfield_iters = 150;
  std::vector<int> dims = {10, 12, 14, 16};
  std::vector<int> pattern_counts = {10, 20, 30};
  double error_threshold = 0.03;
  int ode_steps = 300;
  int sde_steps = 2000;
  double gamma = 0.8;           // VP schedule rate
  double mask_p = 0.5;          // completion-task zeroing probability
  int error_samples = 140;      // trials per (d, n) error cell
  int classical_max_sweeps = 50;
  double convergence_tol = 1e-6;
  int bootstrap_resamples = 1000;
  double smoothing_sigma = 1.5;
  int capacity_scan_step = 1;
  int capacity_n_cap = 512;     // scan guard
  int workers = 1;
  // learned-model protocol
  int train_epochs = 4000;
  double learning_rate = 1e-3;
  int width_factor = 80;
  int learned_reps = 8;
  int eval_batches = 30;
  // trajectory comparison
  int trajectory_updates = 4;
  int trace_starts = 8;
  double one_iteration_tol = 0.1;
  // output
  std::string out_dir = "out";
  std::string tag;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  // Hash of the canonical config (output location excluded).
  std::string hash() const;
};

struct Table1Cell {
  std::string task;  // denoising | completion
  int n = 0;
  int dim = 0;
  // Mean over trials of the per-trial vector correlation against the modern
  // Hopfield output.
  double r_diffusion = 0.0, r_classical = 0.0, r_truth = 0.0;
  // Alternative statistic: single correlation over all trials' components.
  double r_diffusion_pooled = 0.0, r_classical_pooled = 0.0, r_truth_pooled = 0.0;
  // Trials contributing to each mean (degenerate constant vectors are
  // excluded rather than silently correlated).
  int valid_diffusion = 0, valid_classical = 0, valid_truth = 0;
};

struct CorrelationTable {
  std::vector<Table1Cell> cells;
  int trials = 0;
  std::string config_hash;
  void validate() const;
};

CorrelationTable run_table1(const ExperimentConfig& cfg);

struct ErrorCell {
  int d = 0, n = 0;
  double mean_error = 0.0, median_error = 0.0;
  std::vector<double> per_trial;
};

struct ErrorCurve {
  RecallModel model = RecallModel::modern;
  std::vector<ErrorCell> cells;
  std::string config_hash;
};

// Mean/median Hamming error over cfg.error_samples seeded trials for every
// (d, n) in the configured grids.
ErrorCurve estimate_error_curve(const ExperimentConfig& cfg, RecallModel model);

struct CapacityPoint {
  int d = 0;
  int capacity = 0;           // integer estimate, pre-smoothing
  double capacity_mean = 0.0; // equals capacity except for the learned protocol
  double lo95 = 0.0, hi95 = 0.0;
  std::vector<ErrorCell> evaluated;  // every cell touched by the search
  std::vector<int> per_rep;          // learned protocol only (-1 = failed rep)
};

struct CapacityCurve {
  std::string model;
  std::vector<CapacityPoint> points;  // one per d, in cfg.dims order
  std::vector<double> smoothed, smoothed_lo, smoothed_hi;
  double smoothing_sigma = 1.5;
  std::string config_hash;
  void validate() const;
};

// Largest n with mean error <= threshold per d: upward scan with early exit
// after 3 consecutive cells above threshold, bisection refinement when the
// scan step exceeds 1, percentile-bootstrap bands, Gaussian-smoothed curve.
CapacityCurve estimate_capacity(const ExperimentConfig& cfg, RecallModel model);

// Learned-score protocol: start at the exact capacity plus 4, train, measure
// the error on eval_batches batches of unseen corruptions of the training
// patterns, and decrement (retraining from scratch) until the error falls
// below threshold. Repeated learned_reps times per dimension.
CapacityCurve estimate_learned_capacity(const ExperimentConfig& cfg,
                                        const std::vector<int>& exact_capacities);

struct MethodTrace {
  std::string method;  // sde | ode_exact | ode_learned | modern_hopfield
  int start = 0;
  int target = 0;
  std::vector<double> progress;  // normalized 0..1 axis shared by all methods
  std::vector<double> paper_times;
  std::vector<Eigen::VectorXd> states;
};

struct TrajectoryStartResult {
  int start = 0;
  int target = 0;
  bool ode_matches_hopfield = false;
  bool sde_matches_hopfield = false;
  bool learned_matches_hopfield = false;
  double hopfield_iter1_vs_final = 0.0;  // L-inf gap between iterate 1 and the last iterate
  double learned_vs_exact_linf = 0.0;    // endpoint gap of the two ODE routes
};

struct TrajectoryComparison {
  PatternSet patterns;
  std::vector<MethodTrace> traces;  // the first trace_starts starts
  std::vector<TrajectoryStartResult> summary;
  double agreement_ode = 0.0, agreement_sde = 0.0, agreement_learned = 0.0;
  double agreement_all = 0.0;
  double frac_one_iteration = 0.0;
  std::string config_hash;
};

// Denoising-path comparison on one figure-style instance: SDE and exact /
// learned probability-flow trajectories next to the modern Hopfield iterate
// sequence, from a shared set of corrupted starts. The instance is drawn
// with pairwise Hamming distance >= 2 so distinct attractors stay distinct.
TrajectoryComparison run_trajectory_comparison(const ExperimentConfig& cfg);

// Percentile bootstrap interval for the mean, deterministic given seed.
std::pair<double, double> bootstrap_ci(std::span<const double> samples, double level,
                                       int resamples, uint64_t seed);

// Discrete Gaussian convolution with edge renormalization; sigma in index
// units, sigma = 0 is the identity.
std::vector<double> gaussian_smooth(std::span<const double> series, double sigma);

// Deterministic fan-out: results must not depend on the worker count; the
// first failure (by lowest index) is rethrown after all workers join.
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

void write_table1_csv(const CorrelationTable& table, const std::string& path);
void write_error_curve_csv(const ErrorCurve& curve, const std::string& path);
void write_capacity_csv(const CapacityCurve& curve, const std::string& path);
void write_capacity_cells_csv(const CapacityCurve& curve, const std::string& path);
void write_learned_reps_csv(const CapacityCurve& curve, const std::string& path);
void write_trajectories_csv(const TrajectoryComparison& cmp, const std::string& path);
void write_trajectory_summary_csv(const TrajectoryComparison& cmp, const std::string& path);

}  // namespace memdiff
