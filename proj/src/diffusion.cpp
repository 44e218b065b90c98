#include "memdiff/diffusion.hpp"

#include <cmath>

#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"

namespace memdiff {

NoiseSchedule NoiseSchedule::variance_exploding(double sigma, double T) {
  if (!(sigma > 0.0)) throw ParameterError("NoiseSchedule: sigma must be positive");
  if (!(T > 0.0)) throw ParameterError("NoiseSchedule: horizon must be positive");
  NoiseSchedule s;
  s.kind = Kind::variance_exploding;
  s.sigma = sigma;
  s.horizon = T;
  return s;
}

NoiseSchedule NoiseSchedule::variance_preserving(double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("NoiseSchedule: gamma must be positive");
  NoiseSchedule s;
  s.kind = Kind::variance_preserving;
  s.gamma = gamma;
  return s;
}

double NoiseSchedule::theta_of(double t) const {
  if (kind == Kind::variance_exploding) return 1.0;
  return std::exp(-0.5 * gamma * t);
}

double NoiseSchedule::var_of(double t) const {
  if (kind == Kind::variance_exploding) return (horizon - t) * sigma * sigma;
  double th = theta_of(t);
  return 1.0 - th * th;
}

double NoiseSchedule::std_of(double t) const { return std::sqrt(var_of(t)); }

double NoiseSchedule::data_time() const {
  return kind == Kind::variance_exploding ? horizon : 0.0;
}

bool NoiseSchedule::inside_horizon(double t) const {
  if (kind == Kind::variance_exploding) return t >= 0.0 && t <= horizon;
  return t >= 0.0;
}

bool NoiseSchedule::strictly_inside(double t) const {
  return inside_horizon(t) && var_of(t) > 0.0;
}

double NoiseSchedule::beta_of(double t) const {
  if (kind != Kind::variance_exploding) throw ParameterError("beta_of: defined for the variance-exploding schedule");
  double v = var_of(t);
  if (!(v > 0.0)) throw ParameterError("beta_of: zero variance at the data time");
  return 1.0 / v;
}

ForwardSampleResult forward_sample(const Eigen::VectorXd& y, double t,
                                   const NoiseSchedule& schedule, uint64_t seed) {
  if (!schedule.inside_horizon(t)) throw ParameterError("forward_sample: t outside horizon");
  RngStream rng(seed);
  ForwardSampleResult r;
  r.delta = rng.normal_vector(static_cast<int>(y.size()));
  r.x = schedule.theta_of(t) * y + schedule.std_of(t) * r.delta;
  return r;
}

namespace {

// Squared distances |x - theta y_n|^2 scaled to mixture exponents, plus the
// shared Gaussian normalizer pieces.
Eigen::VectorXd mixture_exponents(const PatternSet& patterns, const Eigen::VectorXd& x,
                                  double theta, double var) {
  Eigen::VectorXd e(patterns.count);
  for (int n = 0; n < patterns.count; ++n) {
    e[n] = -(x - theta * patterns.data.col(n)).squaredNorm() / (2.0 * var);
  }
  return e;
}

void check_score_inputs(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                        const NoiseSchedule& schedule, const char* who) {
  patterns.validate();
  if (x.size() != patterns.dim) throw ParameterError(std::string(who) + ": dimension mismatch");
  if (!schedule.strictly_inside(t)) throw ParameterError(std::string(who) + ": zero variance at t");
}

}  // namespace

double log_marginal(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                    const NoiseSchedule& schedule) {
  check_score_inputs(patterns, x, t, schedule, "log_marginal");
  double var = schedule.var_of(t);
  Eigen::VectorXd e = mixture_exponents(patterns, x, schedule.theta_of(t), var);
  double m = e.maxCoeff();
  double lse = m + std::log((e.array() - m).exp().sum());
  double d = static_cast<double>(patterns.dim);
  return lse - std::log(static_cast<double>(patterns.count)) - 0.5 * d * std::log(2.0 * M_PI * var);
}

Eigen::VectorXd exact_score(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                            const NoiseSchedule& schedule) {
  check_score_inputs(patterns, x, t, schedule, "exact_score");
  double var = schedule.var_of(t);
  double theta = schedule.theta_of(t);
  Eigen::VectorXd e = mixture_exponents(patterns, x, theta, var);
  double m = e.maxCoeff();
  Eigen::VectorXd h = (e.array() - m).exp();
  h /= h.sum();
  return -(x - theta * (patterns.data * h)) / var;
}

ScoreFunction make_exact_score(PatternSet patterns, NoiseSchedule schedule) {
  patterns.validate();
  return [patterns = std::move(patterns), schedule](const Eigen::VectorXd& x, double t) {
    return exact_score(patterns, x, t, schedule);
  };
}

double t_start_for_noise(double theta, double gamma) {
  if (!(theta > 0.0 && theta <= 1.0)) throw ParameterError("t_start_for_noise: theta must be in (0,1]");
  if (!(gamma > 0.0)) throw ParameterError("t_start_for_noise: gamma must be positive");
  return -2.0 * std::log(theta) / gamma;
}

double Trajectory::paper_time(size_t i) const {
  size_t steps = times.empty() ? 0 : times.size() - 1;
  if (steps == 0) return t_start;
  return t_start + (t_end - t_start) * static_cast<double>(i) / static_cast<double>(steps);
}

void Trajectory::validate() const {
  if (times.size() != states.size()) throw ParameterError("Trajectory: times/states length mismatch");
  for (size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ParameterError("Trajectory: times must increase");
}

namespace {

struct StepField {
  // Generative drift as d x / d(paper t); paired with the signed step this
  // marches toward the data time for both conventions.
  Eigen::VectorXd drift;
  double noise_amp = 0.0;  // diffusion amplitude per sqrt(|dt|)
};

StepField generative_field(const NoiseSchedule& s, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& score_val, SamplerKind sampler) {
  StepField f;
  if (s.kind == NoiseSchedule::Kind::variance_exploding) {
    double s2 = s.sigma * s.sigma;
    f.drift = (sampler == SamplerKind::ode) ? (0.5 * s2 * score_val).eval() : (s2 * score_val).eval();
    f.noise_amp = s.sigma;
  } else {
    // VP probability-flow field -gamma/2 (x + score) in paper time (data at
    // t = 0, so steps are negative); the reverse SDE drift carries the full
    // gamma on the score term.
    if (sampler == SamplerKind::ode) {
      f.drift = -0.5 * s.gamma * (x + score_val);
    } else {
      f.drift = -(0.5 * s.gamma * x + s.gamma * score_val);
    }
    f.noise_amp = std::sqrt(s.gamma);
  }
  return f;
}

Trajectory integrate(const ScoreFunction& score, const Eigen::VectorXd& x0, double t0,
                     const NoiseSchedule& schedule, int steps, std::optional<double> t_end_opt,
                     SamplerKind sampler, uint64_t seed, double noise_scale) {
  if (steps < 1) throw ParameterError("integrate: steps must be >= 1");
  if (!schedule.strictly_inside(t0)) throw ParameterError("integrate: t0 must be strictly inside the horizon");
  double t_end = t_end_opt.value_or(schedule.data_time());
  if (!schedule.inside_horizon(t_end)) throw ParameterError("integrate: t_end outside horizon");
  double dt = (t_end - t0) / steps;
  double adt = std::abs(dt);

  RngStream rng(seed);
  Trajectory traj;
  traj.sampler = sampler;
  traj.seed = seed;
  traj.t_start = t0;
  traj.t_end = t_end;
  traj.schedule = schedule;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);

  Eigen::VectorXd x = x0;
  for (int k = 0; k < steps; ++k) {
    double t = t0 + dt * k;  // score evaluated at the left endpoint, stays off the singular data time
    StepField f = generative_field(schedule, x, score(x, t), sampler);
    x += f.drift * dt;
    if (sampler == SamplerKind::sde && noise_scale != 0.0) {
      x += noise_scale * f.noise_amp * std::sqrt(adt) * rng.normal_vector(static_cast<int>(x.size()));
    }
    if (!x.allFinite()) throw NumericError("integrate: non-finite state", k);
    traj.times.push_back(adt * (k + 1));
    traj.states.push_back(x);
  }
  return traj;
}

}  // namespace

Trajectory ode_denoise(const ScoreFunction& score, const Eigen::VectorXd& x0, double t0,
                       const NoiseSchedule& schedule, int steps, std::optional<double> t_end) {
  return integrate(score, x0, t0, schedule, steps, t_end, SamplerKind::ode, 0, 0.0);
}

Trajectory sde_sample(const ScoreFunction& score, const Eigen::VectorXd& x0, double t0,
                      const NoiseSchedule& schedule, int steps, uint64_t seed,
                      std::optional<double> t_end, double noise_scale) {
  return integrate(score, x0, t0, schedule, steps, t_end, SamplerKind::sde, seed, noise_scale);
}

Eigen::MatrixXd ode_denoise_batch(const BatchScoreFunction& score, Eigen::MatrixXd x0s,
                                  double t0, const NoiseSchedule& schedule, int steps,
                                  std::optional<double> t_end_opt) {
  if (steps < 1) throw ParameterError("ode_denoise_batch: steps must be >= 1");
  if (!schedule.strictly_inside(t0))
    throw ParameterError("ode_denoise_batch: t0 must be strictly inside the horizon");
  double t_end = t_end_opt.value_or(schedule.data_time());
  if (!schedule.inside_horizon(t_end)) throw ParameterError("ode_denoise_batch: t_end outside horizon");
  double dt = (t_end - t0) / steps;
  for (int k = 0; k < steps; ++k) {
    double t = t0 + dt * k;
    Eigen::MatrixXd s = score(x0s, t);
    if (schedule.kind == NoiseSchedule::Kind::variance_exploding) {
      x0s += (0.5 * schedule.sigma * schedule.sigma * dt) * s;
    } else {
      x0s += (-0.5 * schedule.gamma * dt) * (x0s + s);
    }
    if (!x0s.allFinite()) throw NumericError("ode_denoise_batch: non-finite state", k);
  }
  return x0s;
}

void save_trajectory_csv(const Trajectory& traj, const std::string& csv_path,
                         const std::string& json_path) {
  traj.validate();
  int dim = static_cast<int>(traj.states.front().size());
  std::vector<std::string> header{"t"};
  for (int i = 0; i < dim; ++i) header.push_back("x_" + std::to_string(i));
  std::string out = io::join_csv(header);
  for (size_t k = 0; k < traj.states.size(); ++k) {
    std::vector<std::string> row{io::fmt(traj.paper_time(k))};
    for (int i = 0; i < dim; ++i) row.push_back(io::fmt(traj.states[k][i]));
    out += io::join_csv(row);
  }
  io::write_text(csv_path, out);

  nlohmann::json j;
  j["sampler"] = traj.sampler == SamplerKind::ode ? "ode" : "sde";
  j["seed"] = traj.seed;
  j["t_start"] = traj.t_start;
  j["t_end"] = traj.t_end;
  if (traj.schedule.kind == NoiseSchedule::Kind::variance_exploding) {
    j["schedule"] = {{"kind", "variance_exploding"}, {"sigma", traj.schedule.sigma}, {"horizon", traj.schedule.horizon}};
  } else {
    j["schedule"] = {{"kind", "variance_preserving"}, {"gamma", traj.schedule.gamma}};
  }
  io::write_json(json_path, j);
}

}  // namespace memdiff
