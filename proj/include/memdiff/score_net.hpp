#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memdiff/diffusion.hpp"
#include "memdiff/patterns.hpp"

namespace memdiff {

// Fully connected noise predictor, three hidden layers of width H with the
// signal coefficient theta_t concatenated to the input of every layer:
//   [x; th] -> H -> [.; th] -> H -> [.; th] -> H -> [.; th] -> D
// Rectifier on hidden layers, linear output.
struct MlpParams {
  Eigen::MatrixXd w1, w2, w3, w4;  // H x (D+1), H x (H+1), H x (H+1), D x (H+1)
  Eigen::VectorXd b1, b2, b3, b4;

  int dim() const { return static_cast<int>(w4.rows()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  long param_count() const;
  bool all_finite() const;

  static MlpParams zeros(int dim, int hidden);
  // Uniform fan-in init; hidden layers carry the rectifier gain so that
  // pre-activation variance stays near 1 for unit-Gaussian input.
  static MlpParams init(int dim, int hidden, uint64_t seed);

  // Flat view in block order w1,b1,w2,b2,w3,b3,w4,b4 (column-major blocks).
  Eigen::VectorXd flatten() const;
  static MlpParams unflatten(const Eigen::VectorXd& v, int dim, int hidden);
};

Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::VectorXd& x, double theta_t);

// Columns of xs are inputs, thetas holds the matching signal coefficients.
Eigen::MatrixXd mlp_forward_batch(const MlpParams& p, const Eigen::MatrixXd& xs,
                                  const Eigen::RowVectorXd& thetas);

// One training example: noisy state, the injected unit noise, and the signal
// coefficient the state was drawn at.
struct DenoiseSample {
  Eigen::VectorXd x;
  Eigen::VectorXd delta;
  double theta_t = 1.0;
};

// (pattern, time, seed) triple to be materialized through forward_sample.
struct BatchSpec {
  Eigen::VectorXd y;
  double t = 0.0;
  uint64_t seed = 0;
};

std::vector<DenoiseSample> make_samples(std::span<const BatchSpec> batch,
                                        const NoiseSchedule& schedule);

// 1/2 mean over samples of |delta - prediction|^2.
double prediction_loss(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& deltas);
double denoising_loss(const MlpParams& p, std::span<const DenoiseSample> samples);
double denoising_loss(const MlpParams& p, std::span<const BatchSpec> batch,
                      const NoiseSchedule& schedule);

// Exact reverse-mode gradient of denoising_loss in every parameter block.
MlpParams loss_gradient(const MlpParams& p, std::span<const DenoiseSample> samples);
double loss_and_gradient(const MlpParams& p, std::span<const DenoiseSample> samples,
                         MlpParams& grad);

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 4000;
  uint64_t seed = 0;
  NoiseSchedule schedule = NoiseSchedule::variance_preserving(0.8);
  int width_factor = 80;
  int hidden_units = 0;  // 0 = width_factor * dim
  // Sampling window for t; negative values resolve to the widest window with
  // var >= min_var at the low-noise end and theta >= 0.5 at the high end.
  double t_lo = -1.0;
  double t_hi = -1.0;
  double min_var = 1e-4;
  // Early stop on a fixed deterministic probe batch: training stops once the
  // best probe loss has not improved by plateau_tol (relative) within the
  // last plateau_window steps. The per-step loss resamples noise and is too
  // noisy to detect a plateau directly.
  double plateau_tol = 1e-5;
  int plateau_window = 200;
  int probe_size = 128;
  int probe_every = 50;
  int checkpoint_every = 0;
  std::function<void(int step, const MlpParams&, double loss)> checkpoint;

  void resolve_time_window(double& lo, double& hi) const;
};

struct TrainResult {
  MlpParams params;
  std::vector<double> loss_history;  // pre-update loss per step
  int steps_run = 0;
};

// Full-batch Adam on the denoising loss; every step resamples (t, noise) for
// each pattern. Deterministic given cfg.seed. Throws NumericError with the
// epoch index if the loss goes non-finite.
TrainResult train(const PatternSet& patterns, const TrainConfig& cfg);

// Adapts the noise predictor into a score: score(x, t) = -f(x, theta_t) / std(t).
ScoreFunction make_learned_score(MlpParams params, NoiseSchedule schedule);

// Batched variant over state columns, for integrating many starts at once.
BatchScoreFunction make_learned_score_batch(MlpParams params, NoiseSchedule schedule);

// Flat binary container (column-major float64 blocks) plus a JSON manifest.
void save_mlp(const MlpParams& p, const std::string& bin_path, const std::string& manifest_path,
              const nlohmann::json& extra = {});
MlpParams load_mlp(const std::string& bin_path, const std::string& manifest_path);

}  // namespace memdiff
