#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "memdiff/patterns.hpp"

namespace memdiff {

// Time parameterization of the two noise processes.
//
// Conventions follow the processes themselves: the variance-exploding
// process places the data at t = T and gains variance (T - t) sigma^2 as t
// decreases; the variance-preserving process places the data at t = 0 with
// signal coefficient theta(t) = exp(-gamma t / 2) and variance 1 - theta^2.
// Generative integration therefore runs toward increasing t for VE and
// toward t = 0 for VP; data_time() names the target.
struct NoiseSchedule {
  enum class Kind { variance_exploding, variance_preserving };
  Kind kind = Kind::variance_preserving;
  double sigma = 1.0;    // VE noise scale
  double horizon = 1.0;  // VE data time T
  double gamma = 0.8;    // VP rate

  static NoiseSchedule variance_exploding(double sigma, double T);
  static NoiseSchedule variance_preserving(double gamma);

  double theta_of(double t) const;  // signal coefficient, in (0, 1]
  double var_of(double t) const;
  double std_of(double t) const;
  double data_time() const;
  bool inside_horizon(double t) const;    // var >= 0 representable
  bool strictly_inside(double t) const;   // var > 0

  // Inverse temperature analogue 1 / ((T - t) sigma^2); VE only. Strictly
  // increasing in t and divergent at the data time.
  double beta_of(double t) const;
};

using ScoreFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

struct ForwardSampleResult {
  Eigen::VectorXd x;      // theta_t y + std_t delta
  Eigen::VectorXd delta;  // the standard-normal draw, kept for loss targets
};

ForwardSampleResult forward_sample(const Eigen::VectorXd& y, double t,
                                   const NoiseSchedule& schedule, uint64_t seed);

// Log density of the uniform Gaussian mixture centered at theta_t y_n with
// variance var(t) I, max-shifted.
double log_marginal(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                    const NoiseSchedule& schedule);

// Gradient of log_marginal: -(x - theta_t Y h) / var(t) with h the softmax
// of -|x - theta_t y_n|^2 / (2 var(t)).
Eigen::VectorXd exact_score(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                            const NoiseSchedule& schedule);

ScoreFunction make_exact_score(PatternSet patterns, NoiseSchedule schedule);

// Start time with signal coefficient theta under a VP schedule:
// -2 ln(theta) / gamma.
double t_start_for_noise(double theta, double gamma);

enum class SamplerKind { ode, sde };

struct Trajectory {
  std::vector<double> times;  // elapsed integration time, increasing, 0 at x0
  std::vector<Eigen::VectorXd> states;
  SamplerKind sampler = SamplerKind::ode;
  uint64_t seed = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  NoiseSchedule schedule;

  // Schedule-convention time of step i (increasing toward T for VE,
  // decreasing toward 0 for VP).
  double paper_time(size_t i) const;
  const Eigen::VectorXd& final_state() const { return states.back(); }
  void validate() const;
};

// Euler integration of the probability-flow field from t0 toward the data
// time (or t_end when given). Aborts with NumericError carrying the step
// index if the state goes non-finite.
Trajectory ode_denoise(const ScoreFunction& score, const Eigen::VectorXd& x0, double t0,
                       const NoiseSchedule& schedule, int steps,
                       std::optional<double> t_end = std::nullopt);

// Euler-Maruyama integration of the reverse SDE, deterministic given seed.
// noise_scale multiplies the diffusion term; 0 recovers the drift-only path.
Trajectory sde_sample(const ScoreFunction& score, const Eigen::VectorXd& x0, double t0,
                      const NoiseSchedule& schedule, int steps, uint64_t seed,
                      std::optional<double> t_end = std::nullopt, double noise_scale = 1.0);

// Batched score over state columns at a shared time.
using BatchScoreFunction = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

// Probability-flow Euler integration of many starts at once (columns of
// x0s). Returns only the final states; the columns evolve independently, so
// this is the batched counterpart of ode_denoise.
Eigen::MatrixXd ode_denoise_batch(const BatchScoreFunction& score, Eigen::MatrixXd x0s,
                                  double t0, const NoiseSchedule& schedule, int steps,
                                  std::optional<double> t_end = std::nullopt);

// CSV: t,x_0..x_{D-1} per row; metadata JSON with schedule, seed and sampler.
void save_trajectory_csv(const Trajectory& traj, const std::string& csv_path,
                         const std::string& json_path);

}  // namespace memdiff
