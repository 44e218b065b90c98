#include "memdiff/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "memdiff/energy_landscape.hpp"
#include "memdiff/hopfield.hpp"
#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"
#include "memdiff/score_net.hpp"

namespace memdiff {

namespace {

// Stream family ids; every trial derives its RNG from
// (master_seed, experiment, sub ids..., trial) so results are independent of
// evaluation order and worker count.
constexpr uint64_t kExpTable1 = 1;
constexpr uint64_t kExpErrorCell = 2;
constexpr uint64_t kExpLearned = 4;
constexpr uint64_t kExpTrajectory = 5;
constexpr uint64_t kExpBootstrap = 6;

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::optional<double> safe_pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  try {
    return pearson(a, b);
  } catch (const DegenerateInputError&) {
    return std::nullopt;
  }
}

struct TrialOutput {
  Eigen::VectorXd truth, modern_out, diffusion_out, classical_out;
};

// One full recall trial shared by the table and error experiments.
TrialOutput run_trial(const ExperimentConfig& cfg, int d, int n, bool completion,
                      const RngStream& trial_rng) {
  TrialOutput out;
  PatternSet ps = gen_binary_patterns(d, n, trial_rng.derive(0).key());
  RngStream pick = trial_rng.derive(3);
  out.truth = ps.data.col(pick.uniform_int(n));

  Eigen::VectorXd x0;
  if (completion) {
    x0 = mask_bernoulli(out.truth, cfg.mask_p, trial_rng.derive(1).key()).x;
  } else {
    x0 = corrupt_gaussian(out.truth, cfg.theta, trial_rng.derive(1).key());
  }

  ModernHopfieldConfig mh{cfg.beta, cfg.hopfield_iters, cfg.convergence_tol};
  out.modern_out = binarize(modern_recall(ps, x0, mh));

  NoiseSchedule vp = NoiseSchedule::variance_preserving(cfg.gamma);
  double t0 = t_start_for_noise(cfg.theta, cfg.gamma);
  ScoreFunction score = make_exact_score(ps, vp);
  out.diffusion_out = binarize(ode_denoise(score, x0, t0, vp, cfg.ode_steps).final_state());

  CouplingMatrix w = hebbian_weights(ps);
  out.classical_out = classical_recall(w, x0, cfg.classical_max_sweeps, trial_rng.derive(2).key()).state;
  return out;
}

// Hamming error of one model on a fresh (patterns, corruption) draw.
double model_trial_error(const ExperimentConfig& cfg, RecallModel model, int d, int n,
                         const RngStream& trial_rng) {
  PatternSet ps = gen_binary_patterns(d, n, trial_rng.derive(0).key());
  RngStream pick = trial_rng.derive(3);
  Eigen::VectorXd y = ps.data.col(pick.uniform_int(n));
  Eigen::VectorXd x0 = corrupt_gaussian(y, cfg.theta, trial_rng.derive(1).key());

  Eigen::VectorXd recalled;
  switch (model) {
    case RecallModel::classical: {
      CouplingMatrix w = hebbian_weights(ps);
      recalled = classical_recall(w, x0, cfg.classical_max_sweeps, trial_rng.derive(2).key()).state;
      break;
    }
    case RecallModel::modern: {
      ModernHopfieldConfig mh{cfg.beta, cfg.hopfield_iters, cfg.convergence_tol};
      recalled = binarize(modern_recall(ps, x0, mh));
      break;
    }
    case RecallModel::diffusion: {
      NoiseSchedule vp = NoiseSchedule::variance_preserving(cfg.gamma);
      double t0 = t_start_for_noise(cfg.theta, cfg.gamma);
      recalled = binarize(ode_denoise(make_exact_score(ps, vp), x0, t0, vp, cfg.ode_steps).final_state());
      break;
    }
  }
  return hamming_error(recalled, y);
}

ErrorCell evaluate_error_cell(const ExperimentConfig& cfg, RecallModel model, int d, int n) {
  ErrorCell cell;
  cell.d = d;
  cell.n = n;
  cell.per_trial.assign(cfg.error_samples, 0.0);
  RngStream base = RngStream(cfg.master_seed)
                       .derive(kExpErrorCell)
                       .derive(static_cast<uint64_t>(model))
                       .derive(static_cast<uint64_t>(d))
                       .derive(static_cast<uint64_t>(n));
  parallel_for(cfg.error_samples, cfg.workers, [&](int trial) {
    cell.per_trial[trial] = model_trial_error(cfg, model, d, n, base.derive(trial));
  });
  cell.mean_error = mean_of(cell.per_trial);
  cell.median_error = median_of(cell.per_trial);
  return cell;
}

}  // namespace

std::string model_name(RecallModel m) {
  switch (m) {
    case RecallModel::classical: return "classical";
    case RecallModel::modern: return "modern";
    case RecallModel::diffusion: return "diffusion";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  if (trials < 1) throw ParameterError("config: trials must be >= 1");
  if (!(error_threshold > 0.0 && error_threshold < 1.0)) throw ParameterError("config: error_threshold must be in (0,1)");
  if (dims.empty() || pattern_counts.empty()) throw ParameterError("config: dims and pattern_counts must be nonempty");
  if (!(theta >= 0.0 && theta <= 1.0)) throw ParameterError("config: theta must be in [0,1]");
  if (!(gamma > 0.0)) throw ParameterError("config: gamma must be positive");
  if (workers < 1) throw ParameterError("config: workers must be >= 1");
  if (error_samples < 1) throw ParameterError("config: error_samples must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["master_seed"] = master_seed;
  j["trials"] = trials;
  j["theta"] = theta;
  j["beta"] = beta;
  j["hopfield_iters"] = hopfield_iters;
  j["dims"] = dims;
  j["pattern_counts"] = pattern_counts;
  j["error_threshold"] = error_threshold;
  j["ode_steps"] = ode_steps;
  j["sde_steps"] = sde_steps;
  j["gamma"] = gamma;
  j["mask_p"] = mask_p;
  j["error_samples"] = error_samples;
  j["classical_max_sweeps"] = classical_max_sweeps;
  j["convergence_tol"] = convergence_tol;
  j["bootstrap_resamples"] = bootstrap_resamples;
  j["smoothing_sigma"] = smoothing_sigma;
  j["capacity_scan_step"] = capacity_scan_step;
  j["capacity_n_cap"] = capacity_n_cap;
  j["workers"] = workers;
  j["train_epochs"] = train_epochs;
  j["learning_rate"] = learning_rate;
  j["width_factor"] = width_factor;
  j["learned_reps"] = learned_reps;
  j["eval_batches"] = eval_batches;
  j["trajectory_updates"] = trajectory_updates;
  j["trace_starts"] = trace_starts;
  j["one_iteration_tol"] = one_iteration_tol;
  j["out_dir"] = out_dir;
  j["tag"] = tag;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("master_seed", c.master_seed);
  get("trials", c.trials);
  get("theta", c.theta);
  get("beta", c.beta);
  get("hopfield_iters", c.hopfield_iters);
  get("dims", c.dims);
  get("pattern_counts", c.pattern_counts);
  get("error_threshold", c.error_threshold);
  get("ode_steps", c.ode_steps);
  get("sde_steps", c.sde_steps);
  get("gamma", c.gamma);
  get("mask_p", c.mask_p);
  get("error_samples", c.error_samples);
  get("classical_max_sweeps", c.classical_max_sweeps);
  get("convergence_tol", c.convergence_tol);
  get("bootstrap_resamples", c.bootstrap_resamples);
  get("smoothing_sigma", c.smoothing_sigma);
  get("capacity_scan_step", c.capacity_scan_step);
  get("capacity_n_cap", c.capacity_n_cap);
  get("workers", c.workers);
  get("train_epochs", c.train_epochs);
  get("learning_rate", c.learning_rate);
  get("width_factor", c.width_factor);
  get("learned_reps", c.learned_reps);
  get("eval_batches", c.eval_batches);
  get("trajectory_updates", c.trajectory_updates);
  get("trace_starts", c.trace_starts);
  get("one_iteration_tol", c.one_iteration_tol);
  get("out_dir", c.out_dir);
  get("tag", c.tag);
  return c;
}

std::string ExperimentConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("out_dir");
  j.erase("tag");
  j.erase("workers");  // worker count must not change any result
  return io::hex64(io::fnv1a(j.dump()));
}

void CorrelationTable::validate() const {
  for (const Table1Cell& c : cells) {
    for (double r : {c.r_diffusion, c.r_classical, c.r_truth}) {
      if (!(r >= -1.0 - 1e-12 && r <= 1.0 + 1e-12)) throw NumericError("CorrelationTable: r outside [-1,1]");
    }
  }
}

void CapacityCurve::validate() const {
  for (const CapacityPoint& p : points) {
    if (p.capacity < 0) throw NumericError("CapacityCurve: negative capacity");
    if (!(p.lo95 <= p.capacity_mean + 1e-12 && p.capacity_mean <= p.hi95 + 1e-12))
      throw NumericError("CapacityCurve: bounds do not bracket the estimate");
  }
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  int err_index = count;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (i < err_index) {
            err_index = i;
            err = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

CorrelationTable run_table1(const ExperimentConfig& cfg) {
  cfg.validate();
  int d = cfg.dims.front();
  CorrelationTable table;
  table.trials = cfg.trials;
  table.config_hash = cfg.hash();

  for (int task = 0; task < 2; ++task) {
    bool completion = task == 1;
    for (int n : cfg.pattern_counts) {
      std::vector<TrialOutput> outputs(cfg.trials);
      RngStream base = RngStream(cfg.master_seed)
                           .derive(kExpTable1)
                           .derive(static_cast<uint64_t>(task))
                           .derive(static_cast<uint64_t>(n));
      parallel_for(cfg.trials, cfg.workers, [&](int trial) {
        try {
          outputs[trial] = run_trial(cfg, d, n, completion, base.derive(trial));
        } catch (const std::exception& e) {
          throw NumericError("table1 trial " + std::to_string(trial) + ": " + e.what());
        }
      });

      Table1Cell cell;
      cell.task = completion ? "completion" : "denoising";
      cell.n = n;
      cell.dim = d;
      double sum_d = 0, sum_c = 0, sum_t = 0;
      std::vector<double> pool_mh_d, pool_d, pool_mh_c, pool_c, pool_mh_t, pool_t;
      for (const TrialOutput& o : outputs) {
        if (auto r = safe_pearson(o.diffusion_out, o.modern_out)) {
          sum_d += *r;
          ++cell.valid_diffusion;
        }
        if (auto r = safe_pearson(o.classical_out, o.modern_out)) {
          sum_c += *r;
          ++cell.valid_classical;
        }
        if (auto r = safe_pearson(o.truth, o.modern_out)) {
          sum_t += *r;
          ++cell.valid_truth;
        }
        for (int i = 0; i < d; ++i) {
          pool_mh_d.push_back(o.modern_out[i]);
          pool_d.push_back(o.diffusion_out[i]);
          pool_mh_c.push_back(o.modern_out[i]);
          pool_c.push_back(o.classical_out[i]);
          pool_mh_t.push_back(o.modern_out[i]);
          pool_t.push_back(o.truth[i]);
        }
      }
      auto as_vec = [](const std::vector<double>& v) {
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size())).eval();
      };
      cell.r_diffusion = cell.valid_diffusion ? sum_d / cell.valid_diffusion : 0.0;
      cell.r_classical = cell.valid_classical ? sum_c / cell.valid_classical : 0.0;
      cell.r_truth = cell.valid_truth ? sum_t / cell.valid_truth : 0.0;
      cell.r_diffusion_pooled = safe_pearson(as_vec(pool_d), as_vec(pool_mh_d)).value_or(0.0);
      cell.r_classical_pooled = safe_pearson(as_vec(pool_c), as_vec(pool_mh_c)).value_or(0.0);
      cell.r_truth_pooled = safe_pearson(as_vec(pool_t), as_vec(pool_mh_t)).value_or(0.0);
      table.cells.push_back(std::move(cell));
    }
  }
  table.validate();
  return table;
}

ErrorCurve estimate_error_curve(const ExperimentConfig& cfg, RecallModel model) {
  cfg.validate();
  ErrorCurve curve;
  curve.model = model;
  curve.config_hash = cfg.hash();
  for (int d : cfg.dims) {
    for (int n : cfg.pattern_counts) {
      curve.cells.push_back(evaluate_error_cell(cfg, model, d, n));
    }
  }
  return curve;
}

namespace {

struct CapacitySearchResult {
  int capacity = 0;
  std::map<int, ErrorCell> cells;  // keyed by n
};

CapacitySearchResult capacity_search(const ExperimentConfig& cfg, RecallModel model, int d) {
  CapacitySearchResult res;
  auto cell_mean = [&](int n) -> double {
    auto it = res.cells.find(n);
    if (it == res.cells.end()) it = res.cells.emplace(n, evaluate_error_cell(cfg, model, d, n)).first;
    return it->second.mean_error;
  };

  int step = std::max(1, cfg.capacity_scan_step);
  int last_ok = 0;
  int consecutive_above = 0;
  for (int n = 1; n <= cfg.capacity_n_cap; n += step) {
    if (cell_mean(n) <= cfg.error_threshold) {
      last_ok = n;
      consecutive_above = 0;
    } else if (++consecutive_above >= 3) {
      break;
    }
  }
  // First evaluated crossing after the final ok cell, for refinement.
  int first_above = 0;
  for (const auto& [n, cell] : res.cells) {
    if (n > last_ok && cell.mean_error > cfg.error_threshold) {
      first_above = n;
      break;
    }
  }
  if (first_above > 0 && first_above - last_ok > 1 && last_ok > 0) {
    int lo = last_ok, hi = first_above;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (cell_mean(mid) <= cfg.error_threshold) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    last_ok = lo;
  }
  res.capacity = last_ok;
  return res;
}

// Joint bootstrap over the evaluated cells: resample each cell's per-trial
// errors, recompute the capacity rule, and take percentile bands.
std::pair<double, double> capacity_bootstrap(const ExperimentConfig& cfg, RecallModel model, int d,
                                             const CapacitySearchResult& search) {
  RngStream base = RngStream(cfg.master_seed)
                       .derive(kExpBootstrap)
                       .derive(static_cast<uint64_t>(model))
                       .derive(static_cast<uint64_t>(d));
  std::vector<double> caps(cfg.bootstrap_resamples);
  for (int rep = 0; rep < cfg.bootstrap_resamples; ++rep) {
    RngStream rng = base.derive(rep);
    int cap = 0;
    for (const auto& [n, cell] : search.cells) {
      double s = 0.0;
      int m = static_cast<int>(cell.per_trial.size());
      for (int k = 0; k < m; ++k) s += cell.per_trial[rng.uniform_int(m)];
      if (s / m <= cfg.error_threshold) cap = std::max(cap, n);
    }
    caps[rep] = cap;
  }
  std::sort(caps.begin(), caps.end());
  auto quantile = [&](double q) {
    size_t idx = static_cast<size_t>(std::llround(q * (caps.size() - 1)));
    return caps[idx];
  };
  return {quantile(0.025), quantile(0.975)};
}

}  // namespace

CapacityCurve estimate_capacity(const ExperimentConfig& cfg, RecallModel model) {
  cfg.validate();
  CapacityCurve curve;
  curve.model = model_name(model);
  curve.config_hash = cfg.hash();
  curve.smoothing_sigma = cfg.smoothing_sigma;
  for (int d : cfg.dims) {
    CapacitySearchResult search = capacity_search(cfg, model, d);
    CapacityPoint p;
    p.d = d;
    p.capacity = search.capacity;
    p.capacity_mean = search.capacity;
    auto [lo, hi] = capacity_bootstrap(cfg, model, d, search);
    // Bands are the union of the percentile interval and the point estimate.
    p.lo95 = std::min(lo, p.capacity_mean);
    p.hi95 = std::max(hi, p.capacity_mean);
    for (auto& [n, cell] : search.cells) p.evaluated.push_back(cell);
    curve.points.push_back(std::move(p));
  }
  std::vector<double> est, lo, hi;
  for (const CapacityPoint& p : curve.points) {
    est.push_back(p.capacity_mean);
    lo.push_back(p.lo95);
    hi.push_back(p.hi95);
  }
  curve.smoothed = gaussian_smooth(est, cfg.smoothing_sigma);
  curve.smoothed_lo = gaussian_smooth(lo, cfg.smoothing_sigma);
  curve.smoothed_hi = gaussian_smooth(hi, cfg.smoothing_sigma);
  curve.validate();
  return curve;
}

namespace {

// Training recipe shared by the learned-capacity search and the trajectory
// comparison: the t window covers the denoising start with a margin.
TrainConfig learned_train_config(const ExperimentConfig& cfg, const NoiseSchedule& vp,
                                 uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.epochs = cfg.train_epochs;
  tc.seed = seed;
  tc.schedule = vp;
  tc.width_factor = cfg.width_factor;
  tc.t_hi = 1.25 * t_start_for_noise(cfg.theta, cfg.gamma);
  return tc;
}

// One repetition of the learned-capacity search at dimension d.
int learned_capacity_rep(const ExperimentConfig& cfg, int d, int start_n, int rep) {
  RngStream base = RngStream(cfg.master_seed)
                       .derive(kExpLearned)
                       .derive(static_cast<uint64_t>(d))
                       .derive(static_cast<uint64_t>(rep));
  NoiseSchedule vp = NoiseSchedule::variance_preserving(cfg.gamma);
  double t0 = t_start_for_noise(cfg.theta, cfg.gamma);

  for (int n = start_n; n >= 1; --n) {
    RngStream nstream = base.derive(static_cast<uint64_t>(n));
    PatternSet ps = gen_binary_patterns(d, n, nstream.derive(0).key());
    TrainResult tr = train(ps, learned_train_config(cfg, vp, nstream.derive(1).key()));

    // Error on unseen corruptions of the training patterns; one batch covers
    // every stored pattern once and all corruptions integrate as one block.
    int total = cfg.eval_batches * n;
    Eigen::MatrixXd x0s(d, total);
    RngStream evalstream = nstream.derive(2);
    for (int k = 0; k < total; ++k) {
      x0s.col(k) = corrupt_gaussian(ps.data.col(k % n), cfg.theta, evalstream.derive(k).key());
    }
    Eigen::MatrixXd finals =
        ode_denoise_batch(make_learned_score_batch(tr.params, vp), std::move(x0s), t0, vp, cfg.ode_steps);
    double err = 0.0;
    for (int k = 0; k < total; ++k) {
      err += hamming_error(binarize(finals.col(k)), ps.data.col(k % n));
    }
    if (err / total <= cfg.error_threshold) return n;
  }
  return 0;
}

}  // namespace

CapacityCurve estimate_learned_capacity(const ExperimentConfig& cfg,
                                        const std::vector<int>& exact_capacities) {
  cfg.validate();
  if (exact_capacities.size() != cfg.dims.size())
    throw ParameterError("estimate_learned_capacity: one exact capacity per dimension required");
  CapacityCurve curve;
  curve.model = "learned";
  curve.config_hash = cfg.hash();
  curve.smoothing_sigma = cfg.smoothing_sigma;
  for (size_t i = 0; i < cfg.dims.size(); ++i) {
    int d = cfg.dims[i];
    int start_n = exact_capacities[i] + 4;
    CapacityPoint p;
    p.d = d;
    std::vector<double> ok_caps;
    for (int rep = 0; rep < cfg.learned_reps; ++rep) {
      int cap;
      try {
        cap = learned_capacity_rep(cfg, d, start_n, rep);
      } catch (const NumericError&) {
        p.per_rep.push_back(-1);  // diverged training, repetition marked failed
        continue;
      }
      p.per_rep.push_back(cap);
      ok_caps.push_back(cap);
    }
    if (ok_caps.empty()) throw NumericError("estimate_learned_capacity: every repetition failed at d=" + std::to_string(d));
    p.capacity_mean = mean_of(ok_caps);
    p.capacity = static_cast<int>(std::llround(p.capacity_mean));
    if (ok_caps.size() >= 2) {
      auto [lo, hi] = bootstrap_ci(ok_caps, 0.95, cfg.bootstrap_resamples,
                                   RngStream(cfg.master_seed).derive(kExpBootstrap).derive(99).derive(d).key());
      p.lo95 = std::min(lo, p.capacity_mean);
      p.hi95 = std::max(hi, p.capacity_mean);
    } else {
      p.lo95 = p.hi95 = p.capacity_mean;
    }
    curve.points.push_back(std::move(p));
  }
  std::vector<double> est, lo, hi;
  for (const CapacityPoint& p : curve.points) {
    est.push_back(p.capacity_mean);
    lo.push_back(p.lo95);
    hi.push_back(p.hi95);
  }
  curve.smoothed = gaussian_smooth(est, cfg.smoothing_sigma);
  curve.smoothed_lo = gaussian_smooth(lo, cfg.smoothing_sigma);
  curve.smoothed_hi = gaussian_smooth(hi, cfg.smoothing_sigma);
  curve.validate();
  return curve;
}

TrajectoryComparison run_trajectory_comparison(const ExperimentConfig& cfg) {
  cfg.validate();
  int d = cfg.dims.front();
  int n = cfg.pattern_counts.front();
  RngStream base = RngStream(cfg.master_seed).derive(kExpTrajectory);

  // Figure-style instance: reject draws with duplicate or Hamming-adjacent
  // patterns so every attractor is visibly separate.
  PatternSet ps = gen_binary_patterns(d, n, base.derive(0).key());
  for (uint64_t attempt = 1; attempt <= 1000; ++attempt) {
    bool ok = true;
    for (int a = 0; a < n && ok; ++a)
      for (int b = a + 1; b < n && ok; ++b)
        if (hamming_error(ps.data.col(a), ps.data.col(b)) * d < 2.0) ok = false;
    if (ok) break;
    ps = gen_binary_patterns(d, n, base.derive(attempt).key());
  }

  NoiseSchedule vp = NoiseSchedule::variance_preserving(cfg.gamma);
  double t0 = t_start_for_noise(cfg.theta, cfg.gamma);
  ScoreFunction exact = make_exact_score(ps, vp);

  TrainConfig tc = learned_train_config(cfg, vp, base.derive(1001).key());
  ScoreFunction learned = make_learned_score(train(ps, tc).params, vp);

  TrajectoryComparison cmp;
  cmp.patterns = ps;
  cmp.config_hash = cfg.hash();
  cmp.summary.resize(cfg.trials);

  std::vector<std::vector<MethodTrace>> traces(std::min(cfg.trials, cfg.trace_starts));
  RngStream starts = base.derive(2000);
  parallel_for(cfg.trials, cfg.workers, [&](int s) {
    RngStream rng = starts.derive(s);
    int target = s % n;  // cycle so every pattern is exercised evenly
    Eigen::VectorXd y = ps.data.col(target);
    Eigen::VectorXd x0 = corrupt_gaussian(y, cfg.theta, rng.derive(0).key());

    auto mh_seq = modern_iterates(ps, x0, cfg.beta, cfg.trajectory_updates);
    Eigen::VectorXd mh_end = binarize(mh_seq.back());
    Trajectory ode = ode_denoise(exact, x0, t0, vp, cfg.ode_steps);
    Trajectory lode = ode_denoise(learned, x0, t0, vp, cfg.ode_steps);
    Trajectory sde = sde_sample(exact, x0, t0, vp, cfg.sde_steps, rng.derive(1).key());

    TrajectoryStartResult r;
    r.start = s;
    r.target = target;
    r.ode_matches_hopfield = hamming_error(binarize(ode.final_state()), mh_end) == 0.0;
    r.sde_matches_hopfield = hamming_error(binarize(sde.final_state()), mh_end) == 0.0;
    r.learned_matches_hopfield = hamming_error(binarize(lode.final_state()), mh_end) == 0.0;
    r.hopfield_iter1_vs_final = (mh_seq[1] - mh_seq.back()).lpNorm<Eigen::Infinity>();
    r.learned_vs_exact_linf = (lode.final_state() - ode.final_state()).lpNorm<Eigen::Infinity>();
    cmp.summary[s] = r;

    if (s < static_cast<int>(traces.size())) {
      auto record_traj = [&](const char* name, const Trajectory& tr) {
        MethodTrace mt;
        mt.method = name;
        mt.start = s;
        mt.target = target;
        size_t steps = tr.states.size() - 1;
        for (size_t k = 0; k < tr.states.size(); ++k) {
          mt.progress.push_back(steps ? static_cast<double>(k) / steps : 0.0);
          mt.paper_times.push_back(tr.paper_time(k));
          mt.states.push_back(tr.states[k]);
        }
        return mt;
      };
      std::vector<MethodTrace> local;
      local.push_back(record_traj("sde", sde));
      local.push_back(record_traj("ode_exact", ode));
      local.push_back(record_traj("ode_learned", lode));
      MethodTrace mh;
      mh.method = "modern_hopfield";
      mh.start = s;
      mh.target = target;
      for (size_t k = 0; k < mh_seq.size(); ++k) {
        mh.progress.push_back(mh_seq.size() > 1 ? static_cast<double>(k) / (mh_seq.size() - 1) : 0.0);
        mh.paper_times.push_back(static_cast<double>(k));
        mh.states.push_back(mh_seq[k]);
      }
      local.push_back(std::move(mh));
      traces[s] = std::move(local);
    }
  });

  for (auto& group : traces)
    for (auto& t : group) cmp.traces.push_back(std::move(t));

  int agree_ode = 0, agree_sde = 0, agree_learned = 0, agree_all = 0, one_iter = 0;
  for (const TrajectoryStartResult& r : cmp.summary) {
    agree_ode += r.ode_matches_hopfield;
    agree_sde += r.sde_matches_hopfield;
    agree_learned += r.learned_matches_hopfield;
    agree_all += r.ode_matches_hopfield && r.sde_matches_hopfield && r.learned_matches_hopfield;
    one_iter += r.hopfield_iter1_vs_final <= cfg.one_iteration_tol;
  }
  double tn = static_cast<double>(cfg.trials);
  cmp.agreement_ode = agree_ode / tn;
  cmp.agreement_sde = agree_sde / tn;
  cmp.agreement_learned = agree_learned / tn;
  cmp.agreement_all = agree_all / tn;
  cmp.frac_one_iteration = one_iter / tn;
  return cmp;
}

std::pair<double, double> bootstrap_ci(std::span<const double> samples, double level,
                                       int resamples, uint64_t seed) {
  if (samples.size() < 2) throw ParameterError("bootstrap_ci: need at least 2 samples");
  if (resamples < 1) throw ParameterError("bootstrap_ci: resamples must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw ParameterError("bootstrap_ci: level must be in (0,1)");
  RngStream rng(seed);
  int m = static_cast<int>(samples.size());
  std::vector<double> stats(resamples);
  for (int rep = 0; rep < resamples; ++rep) {
    double s = 0.0;
    for (int k = 0; k < m; ++k) s += samples[rng.uniform_int(m)];
    stats[rep] = s / m;
  }
  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    size_t idx = static_cast<size_t>(std::llround(q * (stats.size() - 1)));
    return stats[idx];
  };
  double alpha = (1.0 - level) / 2.0;
  return {quantile(alpha), quantile(1.0 - alpha)};
}

std::vector<double> gaussian_smooth(std::span<const double> series, double sigma) {
  if (sigma < 0.0) throw ParameterError("gaussian_smooth: sigma must be >= 0");
  std::vector<double> out(series.begin(), series.end());
  if (sigma == 0.0 || series.size() < 2) return out;
  int radius = static_cast<int>(std::ceil(4.0 * sigma));
  int m = static_cast<int>(series.size());
  for (int i = 0; i < m; ++i) {
    double num = 0.0, den = 0.0;
    for (int j = std::max(0, i - radius); j <= std::min(m - 1, i + radius); ++j) {
      double w = std::exp(-0.5 * (i - j) * (i - j) / (sigma * sigma));
      num += w * series[j];
      den += w;
    }
    out[i] = num / den;
  }
  return out;
}

void write_table1_csv(const CorrelationTable& table, const std::string& path) {
  std::string out = io::join_csv({"task", "n", "dim", "trials", "valid_diffusion", "valid_classical",
                                  "valid_truth", "r_diffusion", "r_classical", "r_truth",
                                  "r_diffusion_pooled", "r_classical_pooled", "r_truth_pooled"});
  for (const Table1Cell& c : table.cells) {
    out += io::join_csv({c.task, io::fmt(c.n), io::fmt(c.dim), io::fmt(table.trials),
                         io::fmt(c.valid_diffusion), io::fmt(c.valid_classical), io::fmt(c.valid_truth),
                         io::fmt(c.r_diffusion), io::fmt(c.r_classical), io::fmt(c.r_truth),
                         io::fmt(c.r_diffusion_pooled), io::fmt(c.r_classical_pooled),
                         io::fmt(c.r_truth_pooled)});
  }
  io::write_text(path, out);
}

void write_error_curve_csv(const ErrorCurve& curve, const std::string& path) {
  std::string out = io::join_csv({"model", "d", "n", "samples", "mean_error", "median_error"});
  for (const ErrorCell& c : curve.cells) {
    out += io::join_csv({model_name(curve.model), io::fmt(c.d), io::fmt(c.n),
                         io::fmt(static_cast<int>(c.per_trial.size())), io::fmt(c.mean_error),
                         io::fmt(c.median_error)});
  }
  io::write_text(path, out);
}

void write_capacity_csv(const CapacityCurve& curve, const std::string& path) {
  std::string out = io::join_csv({"model", "d", "capacity", "capacity_mean", "lo95", "hi95",
                                  "capacity_smoothed", "lo95_smoothed", "hi95_smoothed"});
  for (size_t i = 0; i < curve.points.size(); ++i) {
    const CapacityPoint& p = curve.points[i];
    out += io::join_csv({curve.model, io::fmt(p.d), io::fmt(p.capacity), io::fmt(p.capacity_mean),
                         io::fmt(p.lo95), io::fmt(p.hi95), io::fmt(curve.smoothed[i]),
                         io::fmt(curve.smoothed_lo[i]), io::fmt(curve.smoothed_hi[i])});
  }
  io::write_text(path, out);
}

void write_capacity_cells_csv(const CapacityCurve& curve, const std::string& path) {
  std::string out = io::join_csv({"model", "d", "n", "samples", "mean_error", "median_error"});
  for (const CapacityPoint& p : curve.points) {
    for (const ErrorCell& c : p.evaluated) {
      out += io::join_csv({curve.model, io::fmt(c.d), io::fmt(c.n),
                           io::fmt(static_cast<int>(c.per_trial.size())), io::fmt(c.mean_error),
                           io::fmt(c.median_error)});
    }
  }
  io::write_text(path, out);
}

void write_learned_reps_csv(const CapacityCurve& curve, const std::string& path) {
  std::string out = io::join_csv({"d", "rep", "capacity"});
  for (const CapacityPoint& p : curve.points) {
    for (size_t rep = 0; rep < p.per_rep.size(); ++rep) {
      out += io::join_csv({io::fmt(p.d), io::fmt(static_cast<int>(rep)), io::fmt(p.per_rep[rep])});
    }
  }
  io::write_text(path, out);
}

void write_trajectories_csv(const TrajectoryComparison& cmp, const std::string& path) {
  int d = cmp.patterns.dim;
  std::vector<std::string> header{"method", "start", "target", "step", "progress", "t"};
  for (int i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i));
  std::string out = io::join_csv(header);
  for (const MethodTrace& t : cmp.traces) {
    for (size_t k = 0; k < t.states.size(); ++k) {
      std::vector<std::string> row{t.method, io::fmt(t.start), io::fmt(t.target),
                                   io::fmt(static_cast<int>(k)), io::fmt(t.progress[k]),
                                   io::fmt(t.paper_times[k])};
      for (int i = 0; i < d; ++i) row.push_back(io::fmt(t.states[k][i]));
      out += io::join_csv(row);
    }
  }
  io::write_text(path, out);
}

void write_trajectory_summary_csv(const TrajectoryComparison& cmp, const std::string& path) {
  std::string out = io::join_csv({"start", "target", "ode_matches", "sde_matches", "learned_matches",
                                  "hopfield_iter1_gap", "learned_vs_exact_linf"});
  for (const TrajectoryStartResult& r : cmp.summary) {
    out += io::join_csv({io::fmt(r.start), io::fmt(r.target), io::fmt(static_cast<int>(r.ode_matches_hopfield)),
                         io::fmt(static_cast<int>(r.sde_matches_hopfield)),
                         io::fmt(static_cast<int>(r.learned_matches_hopfield)),
                         io::fmt(r.hopfield_iter1_vs_final), io::fmt(r.learned_vs_exact_linf)});
  }
  io::write_text(path, out);
}

}  // namespace memdiff
