// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Run a single criterion with --criterion N, everything with no
// arguments.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <queue>
#include <string>
#include <vector>

#include "memdiff/energy_landscape.hpp"
#include "memdiff/harness.hpp"
#include "memdiff/hopfield.hpp"
#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"
#include "memdiff/score_net.hpp"

using namespace memdiff;

namespace {

std::string fmt(double v) { return io::fmt(v); }

// ---------------------------------------------------------------- grids ---

struct GridCells {
  std::vector<std::pair<int, int>> cells;  // (iy, ix)
};

// 4-connected components of the sublevel set {u <= threshold}.
std::vector<GridCells> sublevel_components(const EnergyGrid& g, double threshold) {
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(g.ny, g.nx);
  std::vector<GridCells> comps;
  for (int iy = 0; iy < g.ny; ++iy) {
    for (int ix = 0; ix < g.nx; ++ix) {
      if (seen(iy, ix) || g.values(iy, ix) > threshold) continue;
      GridCells comp;
      std::queue<std::pair<int, int>> q;
      q.push({iy, ix});
      seen(iy, ix) = 1;
      while (!q.empty()) {
        auto [cy, cx] = q.front();
        q.pop();
        comp.cells.push_back({cy, cx});
        const int dy[4] = {1, -1, 0, 0};
        const int dx[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || ny >= g.ny || nx < 0 || nx >= g.nx) continue;
          if (seen(ny, nx) || g.values(ny, nx) > threshold) continue;
          seen(ny, nx) = 1;
          q.push({ny, nx});
        }
      }
      comps.push_back(std::move(comp));
    }
  }
  return comps;
}

double grid_quantile(const EnergyGrid& g, double q) {
  std::vector<double> v(g.values.data(), g.values.data() + g.values.size());
  std::sort(v.begin(), v.end());
  return v[static_cast<size_t>(q * (v.size() - 1))];
}

bool component_contains(const GridCells& comp, const EnergyGrid& g, double x, double y) {
  for (auto [iy, ix] : comp.cells) {
    if (std::abs(g.x_at(ix) - x) <= 1.5 * (g.bounds.xmax - g.bounds.xmin) / (g.nx - 1) &&
        std::abs(g.y_at(iy) - y) <= 1.5 * (g.bounds.ymax - g.bounds.ymin) / (g.ny - 1))
      return true;
  }
  return false;
}

// Aggregate relative L2 error between the analytic gradient field and
// central differences of the value grid over interior cells.
double gradient_fd_error(const EnergyGrid& g) {
  double hx = (g.bounds.xmax - g.bounds.xmin) / (g.nx - 1);
  double hy = (g.bounds.ymax - g.bounds.ymin) / (g.ny - 1);
  double num = 0.0, den = 0.0;
  for (int iy = 1; iy < g.ny - 1; ++iy) {
    for (int ix = 1; ix < g.nx - 1; ++ix) {
      double fx = (g.values(iy, ix + 1) - g.values(iy, ix - 1)) / (2 * hx);
      double fy = (g.values(iy + 1, ix) - g.values(iy - 1, ix)) / (2 * hy);
      num += std::pow(fx - g.grad_x(iy, ix), 2) + std::pow(fy - g.grad_y(iy, ix), 2);
      den += std::pow(g.grad_x(iy, ix), 2) + std::pow(g.grad_y(iy, ix), 2);
    }
  }
  return std::sqrt(num / den);
}

// ------------------------------------------------------------- criteria ---

bool criterion_energy_identity(std::string& detail) {
  // Horizon 4 so that beta(t) = 1/(T - t) covers 0.5 .. 100 inside it.
  NoiseSchedule ve = NoiseSchedule::variance_exploding(1.0, 4.0);
  const double betas[] = {0.5, 1.0, 5.0, 20.0, 100.0};
  double worst = 0.0;
  RngStream rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    RngStream r = rng.derive(rep);
    int d = 2 + r.uniform_int(19);              // up to 20
    int n = 1 + r.uniform_int(40);              // up to 40
    PatternSet ps = normalize_columns(gen_gaussian_patterns(d, n, r.derive(0).key()));
    std::vector<Eigen::VectorXd> xs;
    RngStream xr = r.derive(1);
    for (int k = 0; k < 40; ++k) xs.push_back(xr.normal_vector(d));
    for (double beta : betas) {
      double t = ve.horizon - 1.0 / beta;
      worst = std::max(worst, equivalence_residual(ps, xs, t, ve).spread);
    }
  }
  detail = "max residual spread " + fmt(worst) + " over 100 pattern sets x 5 betas";
  return worst < 1e-8;
}

bool criterion_table1(std::string& detail) {
  ExperimentConfig cfg;
  cfg.master_seed = 2024;
  cfg.trials = 100;
  cfg.dims = {10};
  cfg.pattern_counts = {10, 20, 30};
  cfg.workers = 1;
  CorrelationTable table = run_table1(cfg);

  const double classical_ref[2][3] = {{0.732, 0.704, 0.715}, {0.741, 0.707, 0.700}};
  const double truth_ref[2][3] = {{0.893, 0.822, 0.81}, {0.897, 0.838, 0.795}};

  bool ok = true;
  std::string worst;
  for (int task = 0; task < 2; ++task) {
    for (int j = 0; j < 3; ++j) {
      const Table1Cell& cell = table.cells[task * 3 + j];
      double dc = cell.r_diffusion;
      double cc = cell.r_classical - classical_ref[task][j];
      double tc = cell.r_truth - truth_ref[task][j];
      if (dc < 0.98 || std::abs(cc) > 0.08 || std::abs(tc) > 0.06) ok = false;
      worst += cell.task.substr(0, 1) + std::to_string(cell.n) + ":r_d=" + fmt(dc) +
               ",dc=" + fmt(cc) + ",dt=" + fmt(tc) + " ";
    }
  }
  detail = worst;
  return ok;
}

bool criterion_score_oracle(std::string& detail) {
  double worst = 0.0;
  RngStream rng(103);
  for (int schedule_kind = 0; schedule_kind < 2; ++schedule_kind) {
    NoiseSchedule s = schedule_kind == 0 ? NoiseSchedule::variance_exploding(1.0, 1.0)
                                         : NoiseSchedule::variance_preserving(0.8);
    for (int rep = 0; rep < 100; ++rep) {
      RngStream r = rng.derive(schedule_kind * 1000 + rep);
      int d = 2 + r.uniform_int(8);
      int n = 1 + r.uniform_int(10);
      PatternSet ps = gen_binary_patterns(d, n, r.derive(0).key());
      double t = schedule_kind == 0 ? 0.1 + 0.8 * r.uniform() : 0.15 + 1.8 * r.uniform();
      Eigen::VectorXd x = r.normal_vector(d);
      Eigen::VectorXd an = exact_score(ps, x, t, s);
      Eigen::VectorXd fd(d);
      double h = 1e-5;
      for (int i = 0; i < d; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        fd[i] = (log_marginal(ps, xp, t, s) - log_marginal(ps, xm, t, s)) / (2 * h);
      }
      worst = std::max(worst, (an - fd).norm() / std::max(fd.norm(), 1e-12));
    }
  }
  detail = "max relative L2 error " + fmt(worst) + " over 100 instances per schedule";
  return worst < 1e-4;
}

bool criterion_gradient(std::string& detail) {
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);
  double worst = 0.0;
  RngStream rng(104);
  for (int point = 0; point < 10; ++point) {
    RngStream r = rng.derive(point);
    const int d = 5, h = 40;
    PatternSet ps = gen_binary_patterns(d, 6, r.derive(0).key());
    std::vector<BatchSpec> batch;
    for (int j = 0; j < 6; ++j)
      batch.push_back({ps.data.col(j), 0.2 + 1.4 * r.uniform(), r.derive(10 + j).key()});
    auto samples = make_samples(batch, vp);
    MlpParams p = MlpParams::init(d, h, r.derive(1).key());
    Eigen::VectorXd theta0 = p.flatten();
    Eigen::VectorXd g = loss_gradient(p, samples).flatten();
    for (int dir = 0; dir < 20; ++dir) {
      Eigen::VectorXd v = r.normal_vector(static_cast<int>(theta0.size())).normalized();
      double eps = 1e-5;
      double lp = denoising_loss(MlpParams::unflatten(theta0 + eps * v, d, h), samples);
      double lm = denoising_loss(MlpParams::unflatten(theta0 - eps * v, d, h), samples);
      double fd = (lp - lm) / (2 * eps);
      double an = g.dot(v);
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-10}));
    }
  }
  detail = "max relative error " + fmt(worst) + " over 20 directions x 10 parameter points";
  return worst < 1e-4;
}

bool criterion_fixed_point(std::string& detail) {
  const int d = 5, n = 4, starts = 200;
  const double theta = 0.68, beta = 5.0, gamma = 0.8;
  const double one_iter_tol = 0.1;  // plotting-resolution margin on +-1 states
  RngStream base(105);

  // Figure-style instance: distinct, non-adjacent patterns.
  PatternSet ps = gen_binary_patterns(d, n, base.derive(0).key());
  for (uint64_t attempt = 1; attempt <= 1000; ++attempt) {
    bool ok = true;
    for (int a = 0; a < n && ok; ++a)
      for (int b = a + 1; b < n && ok; ++b)
        if (hamming_error(ps.data.col(a), ps.data.col(b)) * d < 2.0) ok = false;
    if (ok) break;
    ps = gen_binary_patterns(d, n, base.derive(attempt).key());
  }

  NoiseSchedule vp = NoiseSchedule::variance_preserving(gamma);
  ScoreFunction score = make_exact_score(ps, vp);
  double t0 = t_start_for_noise(theta, gamma);

  int agree = 0, one_iter = 0;
  RngStream sr = base.derive(5000);
  for (int s = 0; s < starts; ++s) {
    RngStream rng = sr.derive(s);
    Eigen::VectorXd y = ps.data.col(s % n);
    Eigen::VectorXd x0 = corrupt_gaussian(y, theta, rng.derive(0).key());
    auto seq = modern_iterates(ps, x0, beta, 4);
    Eigen::VectorXd mh_end = binarize(seq.back());
    Eigen::VectorXd ode_end = binarize(ode_denoise(score, x0, t0, vp, 300).final_state());
    agree += hamming_error(ode_end, mh_end) == 0.0;
    one_iter += (seq[1] - seq.back()).lpNorm<Eigen::Infinity>() <= one_iter_tol;
  }
  double fa = static_cast<double>(agree) / starts;
  double fo = static_cast<double>(one_iter) / starts;
  detail = "endpoint agreement " + fmt(fa) + ", one-update convergence " + fmt(fo);
  return fa >= 0.95 && fo >= 0.95;
}

bool criterion_capacity_ordering(std::string& detail) {
  ExperimentConfig cfg;
  cfg.master_seed = 2024;
  cfg.dims = {10, 12, 14, 16};
  cfg.workers = 1;

  CapacityCurve classical = estimate_capacity(cfg, RecallModel::classical);
  CapacityCurve modern = estimate_capacity(cfg, RecallModel::modern);
  CapacityCurve diffusion = estimate_capacity(cfg, RecallModel::diffusion);

  bool ok = true;
  std::string caps;
  for (size_t i = 0; i < cfg.dims.size(); ++i) {
    int c = classical.points[i].capacity;
    int m = modern.points[i].capacity;
    int f = diffusion.points[i].capacity;
    if (!(c < m)) ok = false;
    if (std::abs(m - f) > 1) ok = false;
    caps += "d=" + std::to_string(cfg.dims[i]) + ":(" + std::to_string(c) + "," +
            std::to_string(m) + "," + std::to_string(f) + ") ";
  }
  auto non_decreasing = [](const std::vector<double>& v) {
    for (size_t i = 1; i < v.size(); ++i)
      if (v[i] < v[i - 1] - 1e-9) return false;
    return true;
  };
  if (!non_decreasing(modern.smoothed) || !non_decreasing(diffusion.smoothed) ||
      !non_decreasing(classical.smoothed))
    ok = false;
  detail = "capacities (classical, modern, diffusion): " + caps;
  return ok;
}

bool criterion_learned_capacity(std::string& detail) {
  ExperimentConfig cfg;
  cfg.master_seed = 2024;
  cfg.dims = {10};
  cfg.workers = 1;
  cfg.learned_reps = 3;

  CapacityCurve exact = estimate_capacity(cfg, RecallModel::diffusion);
  int exact_cap = exact.points.front().capacity;
  CapacityCurve learned = estimate_learned_capacity(cfg, {exact_cap});

  std::vector<int> reps;
  for (int c : learned.points.front().per_rep)
    if (c >= 0) reps.push_back(c);
  std::sort(reps.begin(), reps.end());
  double median = reps[reps.size() / 2];
  detail = "exact capacity " + std::to_string(exact_cap) + ", learned reps median " + fmt(median);
  return !reps.empty() && std::abs(median - exact_cap) <= 2.0;
}

bool criterion_landscape(std::string& detail) {
  GridBounds bounds{-2.0, 2.0, -2.0, 2.0};
  const int res = 321;
  const double beta = 6.0;

  // Point memories.
  Eigen::MatrixXd pts(2, 3);
  pts.col(0) << 1.0, 0.5;
  pts.col(1) << -1.0, 0.8;
  pts.col(2) << 0.2, -1.1;
  MemorySpec points = MemorySpec::make_points(PatternSet::continuous(pts));
  EnergyGrid gp = emit_memory_grid(points, bounds, res, res, beta);

  // One segment memory.
  Subspace seg;
  seg.a = Eigen::Vector2d(-1.0, -0.6);
  seg.b = Eigen::Vector2d(1.0, 0.7);
  seg.nodes = 256;
  MemorySpec extended = MemorySpec::make_extended(2, {seg});
  EnergyGrid ge = emit_memory_grid(extended, bounds, res, res, beta);

  // Ring cloud memory.
  SemanticCloud cloud;
  const int atoms = 256;
  cloud.points.resize(2, atoms);
  cloud.weights = Eigen::VectorXd::Constant(atoms, 1.0 / atoms);
  for (int i = 0; i < atoms; ++i) {
    double ang = 2.0 * M_PI * i / atoms;
    cloud.points.col(i) << 1.2 * std::cos(ang), 1.2 * std::sin(ang);
  }
  MemorySpec semantic = MemorySpec::make_semantic(cloud);
  EnergyGrid gs = emit_memory_grid(semantic, bounds, res, res, beta);

  double fd_err = std::max({gradient_fd_error(gp), gradient_fd_error(ge), gradient_fd_error(gs)});
  bool fd_ok = fd_err < 1e-3;

  // Point spec: the low-energy sublevel set splits into one basin per
  // stored point, each containing its point.
  auto comps_p = sublevel_components(gp, grid_quantile(gp, 0.01));
  bool points_ok = comps_p.size() == 3;
  if (points_ok) {
    for (int k = 0; k < 3; ++k) {
      bool found = false;
      for (const auto& comp : comps_p) found = found || component_contains(comp, gp, pts(0, k), pts(1, k));
      points_ok = points_ok && found;
    }
  }

  // Extended spec: a single connected valley running along the segment.
  auto comps_e = sublevel_components(ge, grid_quantile(ge, 0.02));
  bool extended_ok = comps_e.size() == 1;
  if (extended_ok) {
    const auto& comp = comps_e.front();
    extended_ok = component_contains(comp, ge, seg.a[0], seg.a[1]) &&
                  component_contains(comp, ge, seg.b[0], seg.b[1]) &&
                  component_contains(comp, ge, 0.0, 0.05);
  }

  // Semantic spec: a ring-shaped valley (connected, encircling, excluding
  // the center).
  auto comps_s = sublevel_components(gs, grid_quantile(gs, 0.05));
  bool ring_ok = comps_s.size() == 1;
  if (ring_ok) {
    const auto& comp = comps_s.front();
    int sectors_hit = 0;
    const int sectors = 12;
    std::vector<bool> hit(sectors, false);
    for (auto [iy, ix] : comp.cells) {
      double x = gs.x_at(ix), y = gs.y_at(iy);
      if (std::hypot(x, y) < 0.3) ring_ok = false;  // center must stay out
      int sec = static_cast<int>((std::atan2(y, x) + M_PI) / (2 * M_PI) * sectors);
      hit[std::min(sec, sectors - 1)] = true;
    }
    for (bool b : hit) sectors_hit += b;
    ring_ok = ring_ok && sectors_hit == sectors;
  }

  detail = "fd rel err " + fmt(fd_err) + ", basins(points)=" + std::to_string(comps_p.size()) +
           ", valley components(extended)=" + std::to_string(comps_e.size()) +
           ", ring components(semantic)=" + std::to_string(comps_s.size());
  return fd_ok && points_ok && extended_ok && ring_ok;
}

bool criterion_determinism(std::string& detail) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "memdiff_acceptance_determinism";
  fs::create_directories(dir);

  ExperimentConfig cfg;
  cfg.master_seed = 99;
  cfg.trials = 30;
  cfg.dims = {8};
  cfg.pattern_counts = {5, 8};
  cfg.error_samples = 60;
  cfg.bootstrap_resamples = 300;

  auto table_csv = [&](int workers, const std::string& name) {
    ExperimentConfig c = cfg;
    c.workers = workers;
    CorrelationTable t = run_table1(c);
    std::string path = (dir / name).string();
    write_table1_csv(t, path);
    return io::read_text(path);
  };
  auto capacity_csv = [&](int workers, const std::string& name) {
    ExperimentConfig c = cfg;
    c.workers = workers;
    CapacityCurve curve = estimate_capacity(c, RecallModel::modern);
    std::string path = (dir / name).string();
    write_capacity_csv(curve, path);
    return io::read_text(path);
  };

  std::string t1 = table_csv(1, "t1.csv");
  std::string t8 = table_csv(8, "t8.csv");
  std::string t8b = table_csv(8, "t8b.csv");
  std::string c1 = capacity_csv(1, "c1.csv");
  std::string c8 = capacity_csv(8, "c8.csv");

  bool ok = t1 == t8 && t8 == t8b && c1 == c8;
  detail = ok ? "table and capacity CSV bytes identical at workers 1 and 8"
              : "byte mismatch between worker counts";
  return ok;
}

struct Criterion {
  int id;
  const char* name;
  bool (*run)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "energy identity", criterion_energy_identity},
    {2, "correlation table regression", criterion_table1},
    {3, "score oracle", criterion_score_oracle},
    {4, "loss gradient oracle", criterion_gradient},
    {5, "fixed-point agreement", criterion_fixed_point},
    {6, "capacity ordering", criterion_capacity_ordering},
    {7, "learned-model capacity", criterion_learned_capacity},
    {8, "landscape consistency", criterion_landscape},
    {9, "determinism across worker counts", criterion_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }

  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (only != 0 && c.id != only) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] %d: %s (%s)\n", ok ? "PASS" : "FAIL", c.id, c.name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
