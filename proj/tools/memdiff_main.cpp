// memdiff: associative-memory and diffusion-denoiser experiment runner.
//
// Subcommands map 1:1 onto the experiment harness; every run writes
// results.csv plus meta.json (full config, version, seed) so it can be
// replayed exactly. All randomness flows from --seed.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "memdiff/energy_landscape.hpp"
#include "memdiff/harness.hpp"
#include "memdiff/hopfield.hpp"
#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"
#include "memdiff/score_net.hpp"

namespace md = memdiff;

namespace {

struct RunContext {
  std::string dir;
  std::chrono::steady_clock::time_point started;
};

RunContext open_run_dir(const md::ExperimentConfig& cfg, const std::string& sub) {
  RunContext ctx;
  std::string tag = cfg.tag.empty() ? md::io::timestamp_tag() : cfg.tag;
  ctx.dir = cfg.out_dir + "/" + sub + "/" + tag;
  md::io::ensure_dir(ctx.dir);
  ctx.started = std::chrono::steady_clock::now();
  return ctx;
}

void write_meta(const RunContext& ctx, const md::ExperimentConfig& cfg, const std::string& sub,
                nlohmann::json extra = {}) {
  nlohmann::json j = extra;
  j["subcommand"] = sub;
  j["version"] = md::io::version_string();
  j["seed"] = cfg.master_seed;
  j["config"] = cfg.to_json();
  j["config_hash"] = cfg.hash();
  j["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.started).count();
  md::io::write_json(ctx.dir + "/meta.json", j);
  std::cout << "[memdiff] " << sub << ": wrote " << ctx.dir << "\n";
}

void add_common_options(CLI::App* sub, md::ExperimentConfig& cfg) {
  sub->option_defaults()->always_capture_default();
  sub->add_option("--seed,--master_seed", cfg.master_seed, "master seed; every stream derives from it");
  sub->add_option("--trials", cfg.trials, "trials per experiment cell");
  sub->add_option("--theta", cfg.theta, "corruption blend weight, canonical 0.68");
  sub->add_option("--beta", cfg.beta, "softmax inverse temperature, canonical 5");
  sub->add_option("--hopfield_iters", cfg.hopfield_iters, "softmax recall iterations, canonical 150");
  sub->add_option("--dims", cfg.dims, "dimension grid")->delimiter(',');
  sub->add_option("--pattern_counts", cfg.pattern_counts, "stored-pattern grid")->delimiter(',');
  sub->add_option("--error_threshold", cfg.error_threshold, "recovery threshold on mean Hamming error, canonical 0.03");
  sub->add_option("--ode_steps", cfg.ode_steps, "Euler steps for the deterministic denoiser, canonical 300");
  sub->add_option("--sde_steps", cfg.sde_steps, "Euler-Maruyama steps, canonical 2000");
  sub->add_option("--gamma", cfg.gamma, "noise-injection rate of the preserving schedule, canonical 0.8");
  sub->add_option("--mask_p", cfg.mask_p, "completion-task zeroing probability, canonical 0.5");
  sub->add_option("--error_samples", cfg.error_samples, "samples per error cell, canonical 140");
  sub->add_option("--classical_max_sweeps", cfg.classical_max_sweeps, "sweep cap for sign-dynamics recall");
  sub->add_option("--convergence_tol", cfg.convergence_tol, "L-inf convergence tolerance");
  sub->add_option("--bootstrap_resamples", cfg.bootstrap_resamples, "bootstrap resamples for 95% bands");
  sub->add_option("--smoothing_sigma", cfg.smoothing_sigma, "Gaussian smoothing width in grid units, canonical 1.5");
  sub->add_option("--capacity_scan_step", cfg.capacity_scan_step, "upward scan step of the capacity search");
  sub->add_option("--capacity_n_cap", cfg.capacity_n_cap, "upper guard for the capacity scan");
  sub->add_option("--train_epochs", cfg.train_epochs, "full-batch training steps");
  sub->add_option("--learning_rate", cfg.learning_rate, "optimizer base rate, canonical 0.001");
  sub->add_option("--width_factor", cfg.width_factor, "hidden units per input dimension, canonical 80");
  sub->add_option("--learned_reps", cfg.learned_reps, "repetitions of the learned-capacity search");
  sub->add_option("--eval_batches", cfg.eval_batches, "evaluation batches for the learned search, canonical 30");
  sub->add_option("--trajectory_updates", cfg.trajectory_updates, "softmax updates in trajectory bundles, canonical 4");
  sub->add_option("--trace_starts", cfg.trace_starts, "starts whose full trajectories are emitted");
  sub->add_option("--one_iteration_tol", cfg.one_iteration_tol, "L-inf margin for one-update convergence");
  sub->add_option("--workers", cfg.workers, "worker threads; results are worker-count independent");
  sub->add_option("--out", cfg.out_dir, "output root directory");
  sub->add_option("--tag", cfg.tag, "run tag (directory name); default is a UTC timestamp");
}

int cmd_gen_patterns(const md::ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "gen-patterns");
  md::PatternSet ps = md::gen_binary_patterns(cfg.dims.front(), cfg.pattern_counts.front(), cfg.master_seed);
  md::save_pattern_set(ps, ctx.dir + "/results.csv", ctx.dir + "/patterns.json");
  write_meta(ctx, cfg, "gen-patterns");
  return 0;
}

int cmd_recall(const md::ExperimentConfig& cfg, const std::string& model) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "recall");
  int d = cfg.dims.front();
  int n = cfg.pattern_counts.front();
  std::string out = md::io::join_csv({"trial", "target", "hamming_error", "pearson_truth"});
  md::RngStream base = md::RngStream(cfg.master_seed).derive(11).derive(model == "classical" ? 0 : 1);
  double mean_err = 0.0;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    md::RngStream rng = base.derive(trial);
    md::PatternSet ps = md::gen_binary_patterns(d, n, rng.derive(0).key());
    md::RngStream pick = rng.derive(3);
    int target = pick.uniform_int(n);
    Eigen::VectorXd y = ps.data.col(target);
    Eigen::VectorXd x0 = md::corrupt_gaussian(y, cfg.theta, rng.derive(1).key());
    Eigen::VectorXd recalled;
    if (model == "classical") {
      recalled = md::classical_recall(md::hebbian_weights(ps), x0, cfg.classical_max_sweeps, rng.derive(2).key()).state;
    } else {
      recalled = md::binarize(md::modern_recall(ps, x0, {cfg.beta, cfg.hopfield_iters, cfg.convergence_tol}));
    }
    double err = md::hamming_error(recalled, y);
    mean_err += err;
    double r = std::numeric_limits<double>::quiet_NaN();
    try {
      r = md::pearson(recalled, y);
    } catch (const md::DegenerateInputError&) {
    }
    out += md::io::join_csv({md::io::fmt(trial), md::io::fmt(target), md::io::fmt(err), md::io::fmt(r)});
  }
  md::io::write_text(ctx.dir + "/results.csv", out);
  write_meta(ctx, cfg, "recall", {{"model", model}, {"mean_hamming_error", mean_err / cfg.trials}});
  return 0;
}

int cmd_denoise(const md::ExperimentConfig& cfg, const std::string& sampler) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "denoise");
  int d = cfg.dims.front();
  int n = cfg.pattern_counts.front();
  md::NoiseSchedule vp = md::NoiseSchedule::variance_preserving(cfg.gamma);
  double t0 = md::t_start_for_noise(cfg.theta, cfg.gamma);
  std::string out = md::io::join_csv({"trial", "target", "hamming_error"});
  md::RngStream base = md::RngStream(cfg.master_seed).derive(12).derive(sampler == "sde" ? 1 : 0);
  for (int trial = 0; trial < cfg.trials; ++trial) {
    md::RngStream rng = base.derive(trial);
    md::PatternSet ps = md::gen_binary_patterns(d, n, rng.derive(0).key());
    md::RngStream pick = rng.derive(3);
    int target = pick.uniform_int(n);
    Eigen::VectorXd y = ps.data.col(target);
    Eigen::VectorXd x0 = md::corrupt_gaussian(y, cfg.theta, rng.derive(1).key());
    md::ScoreFunction score = md::make_exact_score(ps, vp);
    md::Trajectory traj = sampler == "sde"
                              ? md::sde_sample(score, x0, t0, vp, cfg.sde_steps, rng.derive(2).key())
                              : md::ode_denoise(score, x0, t0, vp, cfg.ode_steps);
    double err = md::hamming_error(md::binarize(traj.final_state()), y);
    out += md::io::join_csv({md::io::fmt(trial), md::io::fmt(target), md::io::fmt(err)});
    if (trial < cfg.trace_starts) {
      std::string stem = ctx.dir + "/trajectory_" + std::to_string(trial);
      md::save_trajectory_csv(traj, stem + ".csv", stem + ".json");
    }
  }
  md::io::write_text(ctx.dir + "/results.csv", out);
  write_meta(ctx, cfg, "denoise", {{"sampler", sampler}});
  return 0;
}

md::MemorySpec default_landscape_spec(const std::string& kind, uint64_t seed) {
  if (kind == "points") {
    Eigen::MatrixXd pts(2, 3);
    pts.col(0) << 1.0, 0.5;
    pts.col(1) << -1.0, 0.8;
    pts.col(2) << 0.2, -1.1;
    return md::MemorySpec::make_points(md::PatternSet::continuous(pts));
  }
  if (kind == "extended") {
    md::Subspace seg;
    seg.kind = md::Subspace::Kind::segment;
    seg.a = Eigen::Vector2d(-1.0, -0.6);
    seg.b = Eigen::Vector2d(1.0, 0.7);
    seg.nodes = 256;
    return md::MemorySpec::make_extended(2, {seg});
  }
  if (kind == "semantic") {
    int atoms = 256;
    md::SemanticCloud cloud;
    cloud.points.resize(2, atoms);
    cloud.weights = Eigen::VectorXd::Constant(atoms, 1.0 / atoms);
    for (int i = 0; i < atoms; ++i) {
      double ang = 2.0 * M_PI * i / atoms;
      cloud.points.col(i) << 1.2 * std::cos(ang), 1.2 * std::sin(ang);
    }
    return md::MemorySpec::make_semantic(std::move(cloud));
  }
  if (kind == "mixture") {
    md::MixtureCore core;
    core.projection = Eigen::MatrixXd::Zero(1, 2);
    core.projection(0, 0) = 1.0;
    core.core = Eigen::VectorXd::Constant(1, 0.8);
    int atoms = 256;
    md::SemanticCloud cloud;
    cloud.points.resize(2, atoms);
    cloud.weights = Eigen::VectorXd::Constant(atoms, 1.0 / atoms);
    for (int i = 0; i < atoms; ++i) {
      double ang = 2.0 * M_PI * i / atoms;
      cloud.points.col(i) << 1.2 * std::cos(ang), 1.2 * std::sin(ang);
    }
    return md::MemorySpec::make_mixture({core}, std::move(cloud));
  }
  (void)seed;
  throw md::ParameterError("landscape: unknown kind " + kind);
}

int cmd_landscape(const md::ExperimentConfig& cfg, const std::string& kind, int nx, int ny,
                  double extent) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "landscape");
  md::MemorySpec spec = default_landscape_spec(kind, cfg.master_seed);
  md::GridBounds bounds{-extent, extent, -extent, extent};
  md::EnergyGrid grid = md::emit_memory_grid(spec, bounds, nx, ny, cfg.beta, cfg.workers);
  md::save_grid_csv(grid, ctx.dir + "/results.csv", ctx.dir + "/header.json");
  write_meta(ctx, cfg, "landscape", {{"kind", kind}, {"nx", nx}, {"ny", ny}, {"extent", extent}});
  return 0;
}

int cmd_table1(const md::ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "table1");
  md::CorrelationTable table = md::run_table1(cfg);
  md::write_table1_csv(table, ctx.dir + "/results.csv");
  write_meta(ctx, cfg, "table1");
  return 0;
}

int cmd_capacity(const md::ExperimentConfig& cfg, const std::string& model) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "capacity");
  md::RecallModel m = md::RecallModel::modern;
  if (model == "classical") m = md::RecallModel::classical;
  else if (model == "diffusion") m = md::RecallModel::diffusion;
  else if (model != "modern") throw md::ParameterError("capacity: unknown model " + model);
  md::CapacityCurve curve = md::estimate_capacity(cfg, m);
  md::write_capacity_csv(curve, ctx.dir + "/results.csv");
  md::write_capacity_cells_csv(curve, ctx.dir + "/cells.csv");
  write_meta(ctx, cfg, "capacity", {{"model", model}});
  return 0;
}

int cmd_capacity_learned(const md::ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "capacity-learned");
  md::CapacityCurve exact = md::estimate_capacity(cfg, md::RecallModel::diffusion);
  md::write_capacity_csv(exact, ctx.dir + "/exact_capacity.csv");
  std::vector<int> caps;
  for (const md::CapacityPoint& p : exact.points) caps.push_back(p.capacity);
  md::CapacityCurve learned = md::estimate_learned_capacity(cfg, caps);
  md::write_capacity_csv(learned, ctx.dir + "/results.csv");
  md::write_learned_reps_csv(learned, ctx.dir + "/reps.csv");
  write_meta(ctx, cfg, "capacity-learned");
  return 0;
}

int cmd_trajectories(const md::ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "trajectories");
  md::TrajectoryComparison cmp = md::run_trajectory_comparison(cfg);
  md::write_trajectories_csv(cmp, ctx.dir + "/results.csv");
  md::write_trajectory_summary_csv(cmp, ctx.dir + "/summary.csv");
  md::save_pattern_set(cmp.patterns, ctx.dir + "/patterns.csv", ctx.dir + "/patterns.json");
  write_meta(ctx, cfg, "trajectories",
             {{"agreement_ode", cmp.agreement_ode},
              {"agreement_sde", cmp.agreement_sde},
              {"agreement_learned", cmp.agreement_learned},
              {"agreement_all", cmp.agreement_all},
              {"frac_one_iteration", cmp.frac_one_iteration}});
  return 0;
}

int cmd_train(const md::ExperimentConfig& cfg) {
  cfg.validate();
  RunContext ctx = open_run_dir(cfg, "train");
  int d = cfg.dims.front();
  int n = cfg.pattern_counts.front();
  md::RngStream base = md::RngStream(cfg.master_seed).derive(13);
  md::PatternSet ps = md::gen_binary_patterns(d, n, base.derive(0).key());
  md::TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.epochs = cfg.train_epochs;
  tc.seed = base.derive(1).key();
  tc.schedule = md::NoiseSchedule::variance_preserving(cfg.gamma);
  tc.width_factor = cfg.width_factor;
  md::TrainResult tr = md::train(ps, tc);
  md::save_mlp(tr.params, ctx.dir + "/model.bin", ctx.dir + "/model.json",
               {{"width_factor", cfg.width_factor}, {"gamma", cfg.gamma}});
  md::save_pattern_set(ps, ctx.dir + "/patterns.csv", ctx.dir + "/patterns.json");
  std::string out = md::io::join_csv({"step", "loss"});
  for (size_t i = 0; i < tr.loss_history.size(); ++i)
    out += md::io::join_csv({md::io::fmt(static_cast<int>(i)), md::io::fmt(tr.loss_history[i])});
  md::io::write_text(ctx.dir + "/results.csv", out);
  write_meta(ctx, cfg, "train",
             {{"steps_run", tr.steps_run},
              {"final_loss", tr.loss_history.empty() ? 0.0 : tr.loss_history.back()}});
  return 0;
}

// Quick oracle suites: the energy identity, the score vs finite differences
// of the log marginal, and the loss gradient vs finite differences.
int cmd_selftest(const md::ExperimentConfig& cfg) {
  int failures = 0;
  auto report = [&failures](const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %s (%s)\n", ok ? "ok" : "FAIL", name.c_str(), detail.c_str());
    if (!ok) ++failures;
  };
  md::RngStream rng(cfg.master_seed);

  {  // energy identity: residual spread over probe points
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      md::RngStream r = rng.derive(1).derive(rep);
      int d = 2 + r.uniform_int(7);
      int n = 1 + r.uniform_int(10);
      md::PatternSet ps = md::normalize_columns(md::gen_gaussian_patterns(d, n, r.derive(0).key()));
      double beta = std::vector<double>{0.5, 5.0, 50.0}[rep % 3];
      md::NoiseSchedule ve = md::NoiseSchedule::variance_exploding(1.0, 4.0);
      double t = ve.horizon - 1.0 / beta;
      std::vector<Eigen::VectorXd> xs;
      md::RngStream xr = r.derive(1);
      for (int k = 0; k < 25; ++k) xs.push_back(xr.normal_vector(d));
      worst = std::max(worst, md::equivalence_residual(ps, xs, t, ve).spread);
    }
    report("energy-identity residual", worst < 1e-8, "max spread " + md::io::fmt(worst));
  }

  {  // score oracle: central finite differences of the log marginal
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      md::RngStream r = rng.derive(2).derive(rep);
      int d = 2 + r.uniform_int(5);
      int n = 1 + r.uniform_int(6);
      bool ve = rep % 2 == 0;
      md::NoiseSchedule sch = ve ? md::NoiseSchedule::variance_exploding(1.0, 1.0)
                                 : md::NoiseSchedule::variance_preserving(cfg.gamma);
      double t = ve ? 0.2 + 0.6 * r.uniform() : 0.2 + 1.5 * r.uniform();
      md::PatternSet ps = md::gen_binary_patterns(d, n, r.derive(0).key());
      Eigen::VectorXd x = r.normal_vector(d);
      Eigen::VectorXd s = md::exact_score(ps, x, t, sch);
      Eigen::VectorXd fd(d);
      double h = 1e-5;
      for (int i = 0; i < d; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        fd[i] = (md::log_marginal(ps, xp, t, sch) - md::log_marginal(ps, xm, t, sch)) / (2 * h);
      }
      worst = std::max(worst, (s - fd).norm() / std::max(fd.norm(), 1e-12));
    }
    report("score finite-difference oracle", worst < 1e-4, "max rel err " + md::io::fmt(worst));
  }

  {  // gradient check along random directions
    double worst = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
      md::RngStream r = rng.derive(3).derive(rep);
      int d = 4, hdim = 16, n = 3;
      md::PatternSet ps = md::gen_binary_patterns(d, n, r.derive(0).key());
      md::NoiseSchedule vp = md::NoiseSchedule::variance_preserving(cfg.gamma);
      std::vector<md::BatchSpec> batch;
      for (int j = 0; j < n; ++j) batch.push_back({ps.data.col(j), 0.5 + 0.1 * j, r.derive(10 + j).key()});
      auto samples = md::make_samples(batch, vp);
      md::MlpParams p = md::MlpParams::init(d, hdim, r.derive(1).key());
      Eigen::VectorXd g = md::loss_gradient(p, samples).flatten();
      Eigen::VectorXd theta0 = p.flatten();
      for (int dir = 0; dir < 5; ++dir) {
        Eigen::VectorXd v = r.normal_vector(static_cast<int>(theta0.size()));
        v.normalize();
        double eps = 1e-5;
        double lp = md::denoising_loss(md::MlpParams::unflatten(theta0 + eps * v, d, hdim), samples);
        double lm = md::denoising_loss(md::MlpParams::unflatten(theta0 - eps * v, d, hdim), samples);
        double fd = (lp - lm) / (2 * eps);
        double an = g.dot(v);
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-10}));
      }
    }
    report("loss gradient finite-difference oracle", worst < 1e-4, "max rel err " + md::io::fmt(worst));
  }

  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memdiff: Hopfield-network and diffusion-denoiser experiments over a shared pattern store"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file; keys match the flag names, sections match subcommands");

  md::ExperimentConfig cfg;
  std::string model = "modern";
  std::string sampler = "ode";
  std::string kind = "points";
  int nx = 200, ny = 200;
  double extent = 2.0;

  CLI::App* gen = app.add_subcommand("gen-patterns", "generate a binary pattern set and write it as CSV");
  add_common_options(gen, cfg);

  CLI::App* recall = app.add_subcommand("recall", "corrupt stored patterns and recall them with a Hopfield model");
  add_common_options(recall, cfg);
  recall->add_option("--model", model, "classical | modern")->capture_default_str();

  CLI::App* denoise = app.add_subcommand("denoise", "denoise corrupted patterns with the exact-score sampler");
  add_common_options(denoise, cfg);
  denoise->add_option("--sampler", sampler, "ode | sde")->capture_default_str();

  CLI::App* landscape = app.add_subcommand("landscape", "emit a 2-D energy grid with its gradient field");
  add_common_options(landscape, cfg);
  landscape->add_option("--kind", kind, "points | extended | semantic | mixture")->capture_default_str();
  landscape->add_option("--nx", nx, "grid resolution in x")->capture_default_str();
  landscape->add_option("--ny", ny, "grid resolution in y")->capture_default_str();
  landscape->add_option("--extent", extent, "half-width of the square grid")->capture_default_str();

  CLI::App* table1 = app.add_subcommand("table1", "correlation table across denoising and completion tasks");
  add_common_options(table1, cfg);

  CLI::App* capacity = app.add_subcommand("capacity", "storage-capacity curve for one recall model");
  add_common_options(capacity, cfg);
  capacity->add_option("--model", model, "classical | modern | diffusion")->capture_default_str();

  CLI::App* capl = app.add_subcommand("capacity-learned", "capacity of the trained denoiser via the decrement search");
  add_common_options(capl, cfg);

  CLI::App* traj = app.add_subcommand("trajectories", "denoising-trajectory bundle on one small instance");
  add_common_options(traj, cfg);

  CLI::App* train = app.add_subcommand("train", "train the denoising network on a generated pattern set");
  add_common_options(train, cfg);

  CLI::App* selftest = app.add_subcommand("selftest", "run the built-in oracle suites");
  add_common_options(selftest, cfg);

  // Small-instance defaults for the figure-style subcommands.
  traj->preparse_callback([&cfg](size_t) {
    cfg.dims = {5};
    cfg.pattern_counts = {4};
    cfg.trials = 200;
  });

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_patterns(cfg);
    if (recall->parsed()) return cmd_recall(cfg, model);
    if (denoise->parsed()) return cmd_denoise(cfg, sampler);
    if (landscape->parsed()) return cmd_landscape(cfg, kind, nx, ny, extent);
    if (table1->parsed()) return cmd_table1(cfg);
    if (capacity->parsed()) return cmd_capacity(cfg, model);
    if (capl->parsed()) return cmd_capacity_learned(cfg);
    if (traj->parsed()) return cmd_trajectories(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (selftest->parsed()) return cmd_selftest(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
