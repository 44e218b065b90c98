#include "memdiff/score_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"

namespace memdiff {

namespace {

Eigen::MatrixXd append_theta_row(const Eigen::MatrixXd& a, const Eigen::RowVectorXd& thetas) {
  Eigen::MatrixXd out(a.rows() + 1, a.cols());
  out.topRows(a.rows()) = a;
  out.row(a.rows()) = thetas;
  return out;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

// Forward pass that keeps the intermediates needed by the backward pass.
struct ForwardTrace {
  Eigen::MatrixXd a0, z1, a1, z2, a2, z3, a3, out;
};

ForwardTrace forward_trace(const MlpParams& p, const Eigen::MatrixXd& xs,
                           const Eigen::RowVectorXd& thetas) {
  ForwardTrace t;
  t.a0 = append_theta_row(xs, thetas);
  t.z1 = (p.w1 * t.a0).colwise() + p.b1;
  t.a1 = append_theta_row(relu(t.z1), thetas);
  t.z2 = (p.w2 * t.a1).colwise() + p.b2;
  t.a2 = append_theta_row(relu(t.z2), thetas);
  t.z3 = (p.w3 * t.a2).colwise() + p.b3;
  t.a3 = append_theta_row(relu(t.z3), thetas);
  t.out = (p.w4 * t.a3).colwise() + p.b4;
  return t;
}

void check_inputs(const MlpParams& p, const Eigen::MatrixXd& xs, const Eigen::RowVectorXd& thetas) {
  if (xs.rows() != p.dim()) throw ParameterError("mlp_forward: input dimension mismatch");
  if (thetas.size() != xs.cols()) throw ParameterError("mlp_forward: theta count mismatch");
  if (!xs.allFinite()) throw NumericError("mlp_forward: non-finite input");
  for (int i = 0; i < thetas.size(); ++i) {
    if (!(thetas[i] > 0.0 && thetas[i] <= 1.0)) throw ParameterError("mlp_forward: theta_t must be in (0,1]");
  }
}

struct SampleMatrices {
  Eigen::MatrixXd xs, deltas;
  Eigen::RowVectorXd thetas;
};

SampleMatrices pack(std::span<const DenoiseSample> samples) {
  if (samples.empty()) throw ParameterError("denoising_loss: empty batch");
  int d = static_cast<int>(samples[0].x.size());
  int b = static_cast<int>(samples.size());
  SampleMatrices m;
  m.xs.resize(d, b);
  m.deltas.resize(d, b);
  m.thetas.resize(b);
  for (int i = 0; i < b; ++i) {
    if (samples[i].x.size() != d || samples[i].delta.size() != d)
      throw ParameterError("denoising_loss: inconsistent sample dimensions");
    m.xs.col(i) = samples[i].x;
    m.deltas.col(i) = samples[i].delta;
    m.thetas[i] = samples[i].theta_t;
  }
  return m;
}

}  // namespace

long MlpParams::param_count() const {
  return w1.size() + w2.size() + w3.size() + w4.size() + b1.size() + b2.size() + b3.size() + b4.size();
}

bool MlpParams::all_finite() const {
  return w1.allFinite() && w2.allFinite() && w3.allFinite() && w4.allFinite() &&
         b1.allFinite() && b2.allFinite() && b3.allFinite() && b4.allFinite();
}

MlpParams MlpParams::zeros(int dim, int hidden) {
  if (dim < 1 || hidden < 1) throw ParameterError("MlpParams: dim and hidden must be >= 1");
  MlpParams p;
  p.w1 = Eigen::MatrixXd::Zero(hidden, dim + 1);
  p.w2 = Eigen::MatrixXd::Zero(hidden, hidden + 1);
  p.w3 = Eigen::MatrixXd::Zero(hidden, hidden + 1);
  p.w4 = Eigen::MatrixXd::Zero(dim, hidden + 1);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.b2 = Eigen::VectorXd::Zero(hidden);
  p.b3 = Eigen::VectorXd::Zero(hidden);
  p.b4 = Eigen::VectorXd::Zero(dim);
  return p;
}

MlpParams MlpParams::init(int dim, int hidden, uint64_t seed) {
  MlpParams p = zeros(dim, hidden);
  RngStream rng(seed);
  auto fill = [&rng](Eigen::MatrixXd& w, double gain) {
    double a = std::sqrt(3.0 * gain / static_cast<double>(w.cols()));
    for (int c = 0; c < w.cols(); ++c)
      for (int r = 0; r < w.rows(); ++r) w(r, c) = a * (2.0 * rng.uniform() - 1.0);
  };
  fill(p.w1, 1.0);  // linear input
  fill(p.w2, 2.0);  // post-rectifier layers need the doubled gain
  fill(p.w3, 2.0);
  fill(p.w4, 2.0);
  return p;
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd v(param_count());
  long off = 0;
  auto put = [&](const Eigen::MatrixXd& m) {
    v.segment(off, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    off += m.size();
  };
  put(w1);
  put(b1);
  put(w2);
  put(b2);
  put(w3);
  put(b3);
  put(w4);
  put(b4);
  return v;
}

MlpParams MlpParams::unflatten(const Eigen::VectorXd& v, int dim, int hidden) {
  MlpParams p = zeros(dim, hidden);
  if (v.size() != p.param_count()) throw ParameterError("MlpParams::unflatten: size mismatch");
  long off = 0;
  auto get = [&](Eigen::MatrixXd& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v.segment(off, m.size());
    off += m.size();
  };
  auto getv = [&](Eigen::VectorXd& b) {
    b = v.segment(off, b.size());
    off += b.size();
  };
  get(p.w1);
  getv(p.b1);
  get(p.w2);
  getv(p.b2);
  get(p.w3);
  getv(p.b3);
  get(p.w4);
  getv(p.b4);
  return p;
}

Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::VectorXd& x, double theta_t) {
  Eigen::RowVectorXd th(1);
  th[0] = theta_t;
  return mlp_forward_batch(p, x, th).col(0);
}

Eigen::MatrixXd mlp_forward_batch(const MlpParams& p, const Eigen::MatrixXd& xs,
                                  const Eigen::RowVectorXd& thetas) {
  check_inputs(p, xs, thetas);
  return forward_trace(p, xs, thetas).out;
}

std::vector<DenoiseSample> make_samples(std::span<const BatchSpec> batch,
                                        const NoiseSchedule& schedule) {
  std::vector<DenoiseSample> out;
  out.reserve(batch.size());
  for (const BatchSpec& spec : batch) {
    ForwardSampleResult fs = forward_sample(spec.y, spec.t, schedule, spec.seed);
    out.push_back(DenoiseSample{std::move(fs.x), std::move(fs.delta), schedule.theta_of(spec.t)});
  }
  return out;
}

double prediction_loss(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& deltas) {
  if (predictions.rows() != deltas.rows() || predictions.cols() != deltas.cols())
    throw ParameterError("prediction_loss: shape mismatch");
  if (predictions.cols() == 0) throw ParameterError("prediction_loss: empty batch");
  return 0.5 * (deltas - predictions).squaredNorm() / static_cast<double>(predictions.cols());
}

double denoising_loss(const MlpParams& p, std::span<const DenoiseSample> samples) {
  SampleMatrices m = pack(samples);
  return prediction_loss(mlp_forward_batch(p, m.xs, m.thetas), m.deltas);
}

double denoising_loss(const MlpParams& p, std::span<const BatchSpec> batch,
                      const NoiseSchedule& schedule) {
  auto samples = make_samples(batch, schedule);
  return denoising_loss(p, samples);
}

double loss_and_gradient(const MlpParams& p, std::span<const DenoiseSample> samples,
                         MlpParams& grad) {
  SampleMatrices m = pack(samples);
  check_inputs(p, m.xs, m.thetas);
  ForwardTrace t = forward_trace(p, m.xs, m.thetas);
  double inv_b = 1.0 / static_cast<double>(m.xs.cols());
  Eigen::MatrixXd resid = t.out - m.deltas;
  double loss = 0.5 * resid.squaredNorm() * inv_b;

  int h = p.hidden();
  Eigen::MatrixXd g = resid * inv_b;  // dL/d out
  grad.w4 = g * t.a3.transpose();
  grad.b4 = g.rowwise().sum();

  // The appended theta row is an input, not a parameter, so its gradient row
  // is dropped at each layer boundary.
  Eigen::MatrixXd gh = (p.w4.transpose() * g).topRows(h);
  gh = gh.array() * (t.z3.array() > 0.0).cast<double>();
  grad.w3 = gh * t.a2.transpose();
  grad.b3 = gh.rowwise().sum();

  gh = (p.w3.transpose() * gh).topRows(h).eval();
  gh = gh.array() * (t.z2.array() > 0.0).cast<double>();
  grad.w2 = gh * t.a1.transpose();
  grad.b2 = gh.rowwise().sum();

  gh = (p.w2.transpose() * gh).topRows(h).eval();
  gh = gh.array() * (t.z1.array() > 0.0).cast<double>();
  grad.w1 = gh * t.a0.transpose();
  grad.b1 = gh.rowwise().sum();

  return loss;
}

MlpParams loss_gradient(const MlpParams& p, std::span<const DenoiseSample> samples) {
  MlpParams grad = MlpParams::zeros(p.dim(), p.hidden());
  loss_and_gradient(p, samples, grad);
  return grad;
}

void TrainConfig::resolve_time_window(double& lo, double& hi) const {
  if (schedule.kind == NoiseSchedule::Kind::variance_preserving) {
    lo = t_lo >= 0.0 ? t_lo : -std::log1p(-min_var) / schedule.gamma;
    hi = t_hi >= 0.0 ? t_hi : t_start_for_noise(0.5, schedule.gamma);
  } else {
    lo = t_lo >= 0.0 ? t_lo : 0.0;
    hi = t_hi >= 0.0 ? t_hi : schedule.horizon - min_var / (schedule.sigma * schedule.sigma);
  }
  if (!(hi > lo)) throw ParameterError("train: empty time window");
}

TrainResult train(const PatternSet& patterns, const TrainConfig& cfg) {
  patterns.validate();
  if (!(cfg.learning_rate > 0.0)) throw ParameterError("train: learning_rate must be positive");
  if (cfg.epochs < 0) throw ParameterError("train: epochs must be >= 0");
  int d = patterns.dim;
  int h = cfg.hidden_units > 0 ? cfg.hidden_units : cfg.width_factor * d;
  double t_lo = 0.0, t_hi = 0.0;
  cfg.resolve_time_window(t_lo, t_hi);

  RngStream root(cfg.seed);
  TrainResult res;
  res.params = MlpParams::init(d, h, root.derive(0).key());
  MlpParams grad = MlpParams::zeros(d, h);
  MlpParams m1 = MlpParams::zeros(d, h);
  MlpParams m2 = MlpParams::zeros(d, h);

  int n = patterns.count;
  std::vector<DenoiseSample> samples(n);

  // Fixed probe batch for plateau detection. Step streams use ids 1..epochs,
  // so the probe id is kept far away.
  std::vector<DenoiseSample> probe;
  if (cfg.plateau_window > 0 && cfg.probe_size > 0) {
    RngStream ps = root.derive(uint64_t(1) << 62);
    probe.reserve(cfg.probe_size);
    for (int j = 0; j < cfg.probe_size; ++j) {
      double t = t_lo + (t_hi - t_lo) * ps.uniform();
      double theta = cfg.schedule.theta_of(t);
      Eigen::VectorXd delta = ps.normal_vector(d);
      Eigen::VectorXd x =
          theta * patterns.data.col(j % n) + cfg.schedule.std_of(t) * delta;
      probe.push_back(DenoiseSample{std::move(x), std::move(delta), theta});
    }
  }
  double best_probe = std::numeric_limits<double>::infinity();
  int last_improve = 0;

  double b1t = 1.0, b2t = 1.0;
  for (int step = 0; step < cfg.epochs; ++step) {
    RngStream stream = root.derive(1 + static_cast<uint64_t>(step));
    for (int j = 0; j < n; ++j) {
      double t = t_lo + (t_hi - t_lo) * stream.uniform();
      double theta = cfg.schedule.theta_of(t);
      Eigen::VectorXd delta = stream.normal_vector(d);
      samples[j].x = theta * patterns.data.col(j) + cfg.schedule.std_of(t) * delta;
      samples[j].delta = std::move(delta);
      samples[j].theta_t = theta;
    }
    double loss = loss_and_gradient(res.params, samples, grad);
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss", step);
    res.loss_history.push_back(loss);
    if (cfg.checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      cfg.checkpoint(step, res.params, loss);
    }

    b1t *= cfg.adam_beta1;
    b2t *= cfg.adam_beta2;
    double corr = cfg.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    auto adam = [&](Eigen::MatrixXd& p, const Eigen::MatrixXd& g, Eigen::MatrixXd& m, Eigen::MatrixXd& v) {
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      v = cfg.adam_beta2 * v.array().matrix() + (1.0 - cfg.adam_beta2) * g.array().square().matrix();
      p.array() -= corr * m.array() / (v.array().sqrt() + cfg.adam_epsilon);
    };
    auto adamv = [&](Eigen::VectorXd& p, const Eigen::VectorXd& g, Eigen::VectorXd& m, Eigen::VectorXd& v) {
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      v = cfg.adam_beta2 * v.array().matrix() + (1.0 - cfg.adam_beta2) * g.array().square().matrix();
      p.array() -= corr * m.array() / (v.array().sqrt() + cfg.adam_epsilon);
    };
    adam(res.params.w1, grad.w1, m1.w1, m2.w1);
    adam(res.params.w2, grad.w2, m1.w2, m2.w2);
    adam(res.params.w3, grad.w3, m1.w3, m2.w3);
    adam(res.params.w4, grad.w4, m1.w4, m2.w4);
    adamv(res.params.b1, grad.b1, m1.b1, m2.b1);
    adamv(res.params.b2, grad.b2, m1.b2, m2.b2);
    adamv(res.params.b3, grad.b3, m1.b3, m2.b3);
    adamv(res.params.b4, grad.b4, m1.b4, m2.b4);
    res.steps_run = step + 1;

    if (!probe.empty() && (step + 1) % cfg.probe_every == 0) {
      double pl = denoising_loss(res.params, probe);
      if (pl < best_probe * (1.0 - cfg.plateau_tol)) {
        best_probe = pl;
        last_improve = step + 1;
      } else if (step + 1 - last_improve >= cfg.plateau_window) {
        break;
      }
    }
  }
  return res;
}

ScoreFunction make_learned_score(MlpParams params, NoiseSchedule schedule) {
  return [params = std::move(params), schedule](const Eigen::VectorXd& x, double t) {
    double sd = schedule.std_of(t);
    if (!(sd > 0.0)) throw ParameterError("learned_score: zero std at t");
    return (-mlp_forward(params, x, schedule.theta_of(t)) / sd).eval();
  };
}

BatchScoreFunction make_learned_score_batch(MlpParams params, NoiseSchedule schedule) {
  return [params = std::move(params), schedule](const Eigen::MatrixXd& xs, double t) {
    double sd = schedule.std_of(t);
    if (!(sd > 0.0)) throw ParameterError("learned_score: zero std at t");
    Eigen::RowVectorXd thetas = Eigen::RowVectorXd::Constant(xs.cols(), schedule.theta_of(t));
    return ((-1.0 / sd) * mlp_forward_batch(params, xs, thetas)).eval();
  };
}

void save_mlp(const MlpParams& p, const std::string& bin_path, const std::string& manifest_path,
              const nlohmann::json& extra) {
  Eigen::VectorXd flat = p.flatten();
  std::ofstream f(bin_path, std::ios::binary);
  if (!f) throw ParameterError("save_mlp: cannot open " + bin_path);
  f.write(reinterpret_cast<const char*>(flat.data()), flat.size() * sizeof(double));

  nlohmann::json j = extra;
  j["dim"] = p.dim();
  j["hidden"] = p.hidden();
  j["param_count"] = p.param_count();
  j["dtype"] = "float64-le";
  j["layout"] = {"w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"};
  io::write_json(manifest_path, j);
}

MlpParams load_mlp(const std::string& bin_path, const std::string& manifest_path) {
  nlohmann::json j = io::read_json(manifest_path);
  int dim = j.at("dim").get<int>();
  int hidden = j.at("hidden").get<int>();
  MlpParams probe = MlpParams::zeros(dim, hidden);
  Eigen::VectorXd flat(probe.param_count());
  std::ifstream f(bin_path, std::ios::binary);
  if (!f) throw ParameterError("load_mlp: cannot open " + bin_path);
  f.read(reinterpret_cast<char*>(flat.data()), flat.size() * sizeof(double));
  if (f.gcount() != static_cast<std::streamsize>(flat.size() * sizeof(double)))
    throw ParameterError("load_mlp: short read");
  return MlpParams::unflatten(flat, dim, hidden);
}

}  // namespace memdiff
