#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "memdiff/harness.hpp"
#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"

using namespace memdiff;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.master_seed = 7;
  cfg.trials = 20;
  cfg.error_samples = 40;
  cfg.bootstrap_resamples = 200;
  cfg.workers = 1;
  return cfg;
}

}  // namespace

TEST_CASE("bootstrap_ci basics") {
  std::vector<double> constant(10, 3.25);
  auto [lo, hi] = bootstrap_ci(constant, 0.95, 500, 1);
  CHECK(lo == 3.25);
  CHECK(hi == 3.25);

  RngStream rng(2);
  std::vector<double> normals(10000);
  for (double& v : normals) v = rng.normal();
  auto [nlo, nhi] = bootstrap_ci(normals, 0.95, 1000, 3);
  CHECK(nlo < 0.0);
  CHECK(nhi > 0.0);
  double width = nhi - nlo;
  double expected = 2.0 * 1.96 / std::sqrt(10000.0);
  CHECK(std::abs(width - expected) / expected < 0.2);

  auto [dlo, dhi] = bootstrap_ci(normals, 0.95, 1, 4);
  CHECK(dlo == dhi);  // a single resample gives a degenerate interval

  std::vector<double> too_few{1.0};
  CHECK_THROWS_AS(bootstrap_ci(too_few, 0.95, 100, 0), ParameterError);
}

TEST_CASE("gaussian_smooth identity, constants and impulse") {
  std::vector<double> series{1.0, 4.0, 2.0, 8.0, 5.0};
  CHECK(gaussian_smooth(series, 0.0) == series);

  std::vector<double> flat(12, 2.5);
  for (double v : gaussian_smooth(flat, 1.5)) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

  // Interior impulse spreads to the kernel shape with its mass preserved.
  std::vector<double> impulse(25, 0.0);
  impulse[12] = 1.0;
  std::vector<double> sm = gaussian_smooth(impulse, 1.5);
  CHECK(sm[12] > sm[11]);
  CHECK(sm[11] > sm[10]);
  CHECK(sm[11] == doctest::Approx(sm[13]).epsilon(1e-12));
  double sum = 0.0;
  for (double v : sm) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(gaussian_smooth(series, -1.0), ParameterError);
}

TEST_CASE("parallel_for covers every index once and reports the earliest failure") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 8, [&](int i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);

  try {
    parallel_for(50, 8, [&](int i) {
      if (i == 13 || i == 37) throw NumericError("boom at " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("13") != std::string::npos);
  }
}

TEST_CASE("trivial single-pattern load gives perfect correlations") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {10};
  cfg.pattern_counts = {1};
  cfg.theta = 0.9;
  cfg.trials = 10;
  CorrelationTable table = run_table1(cfg);
  REQUIRE(table.cells.size() == 2);
  for (const Table1Cell& cell : table.cells) {
    CHECK(cell.r_diffusion == doctest::Approx(1.0));
    CHECK(cell.r_truth == doctest::Approx(1.0));
  }
}

TEST_CASE("table1 output is deterministic and worker-count independent") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {8};
  cfg.pattern_counts = {5};
  cfg.trials = 16;

  CorrelationTable t1 = run_table1(cfg);
  cfg.workers = 8;
  CorrelationTable t8 = run_table1(cfg);
  REQUIRE(t1.cells.size() == t8.cells.size());
  for (size_t i = 0; i < t1.cells.size(); ++i) {
    CHECK(t1.cells[i].r_diffusion == t8.cells[i].r_diffusion);
    CHECK(t1.cells[i].r_classical == t8.cells[i].r_classical);
    CHECK(t1.cells[i].r_truth == t8.cells[i].r_truth);
  }

  auto dir = std::filesystem::temp_directory_path() / "memdiff_harness_test";
  std::filesystem::create_directories(dir);
  write_table1_csv(t1, (dir / "a.csv").string());
  write_table1_csv(t8, (dir / "b.csv").string());
  CHECK(io::read_text((dir / "a.csv").string()) == io::read_text((dir / "b.csv").string()));
}

TEST_CASE("error curve: single pattern is easy, overload degrades monotonically") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {10};
  cfg.pattern_counts = {1, 4, 8, 16, 32, 64};
  cfg.error_samples = 60;
  ErrorCurve curve = estimate_error_curve(cfg, RecallModel::modern);
  REQUIRE(curve.cells.size() == 6);
  CHECK(curve.cells.front().mean_error <= 0.01);

  // Monotone trend allowing noise: isotonic violation below 0.02.
  double worst_violation = 0.0;
  double running_max = 0.0;
  for (const ErrorCell& cell : curve.cells) {
    worst_violation = std::max(worst_violation, running_max - cell.mean_error);
    running_max = std::max(running_max, cell.mean_error);
  }
  CHECK(worst_violation < 0.02);
}

TEST_CASE("classical capacity is order d / (4 log2 d)") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {10, 20};
  cfg.error_samples = 60;
  CapacityCurve curve = estimate_capacity(cfg, RecallModel::classical);
  REQUIRE(curve.points.size() == 2);
  for (const CapacityPoint& p : curve.points) {
    double law = p.d / (4.0 * std::log2(static_cast<double>(p.d)));
    CHECK(p.capacity >= law / 3.0);
    CHECK(p.capacity <= law * 3.0);
  }
}

TEST_CASE("capacity smoothing stays within one pattern of the integer curve") {
  // The claim is about smoothing as a local average, so use the classical
  // model whose capacity rises by at most a pattern per grid step.
  ExperimentConfig cfg = small_config();
  cfg.dims = {10, 12, 14, 16};
  cfg.error_samples = 40;
  CapacityCurve curve = estimate_capacity(cfg, RecallModel::classical);
  REQUIRE(curve.smoothed.size() == curve.points.size());
  for (size_t i = 0; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].capacity == doctest::Approx(std::round(curve.points[i].capacity_mean)));
    CHECK(std::abs(curve.smoothed[i] - curve.points[i].capacity) < 1.0);
    CHECK(curve.points[i].lo95 <= curve.points[i].capacity_mean);
    CHECK(curve.points[i].hi95 >= curve.points[i].capacity_mean);
  }
}

TEST_CASE("capacity search brackets the threshold") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {10};
  cfg.error_samples = 80;
  CapacityCurve curve = estimate_capacity(cfg, RecallModel::diffusion);
  const CapacityPoint& p = curve.points.front();
  // The accepted cell is below threshold and the cell right above (when the
  // search evaluated it) is above.
  for (const ErrorCell& cell : p.evaluated) {
    if (cell.n == p.capacity && p.capacity > 0) CHECK(cell.mean_error <= cfg.error_threshold);
    if (cell.n == p.capacity + 1) CHECK(cell.mean_error > cfg.error_threshold);
  }
}

TEST_CASE("untrained networks have zero capacity") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {8};
  cfg.train_epochs = 0;
  cfg.learned_reps = 1;
  cfg.eval_batches = 4;
  cfg.width_factor = 10;
  CapacityCurve curve = estimate_learned_capacity(cfg, {3});
  REQUIRE(curve.points.size() == 1);
  CHECK(curve.points.front().capacity == 0);
  CHECK(curve.points.front().per_rep == std::vector<int>{0});
}

TEST_CASE("learned capacity search accepts the start count when training suffices") {
  // Start the search at a count the trained model handles comfortably; the
  // contract is that it returns the start count without descending.
  ExperimentConfig cfg = small_config();
  cfg.dims = {6};
  cfg.train_epochs = 1500;
  cfg.learned_reps = 1;
  cfg.eval_batches = 6;
  cfg.width_factor = 40;
  CapacityCurve curve = estimate_learned_capacity(cfg, {-2});  // start_n = 2
  REQUIRE(curve.points.size() == 1);
  CHECK(curve.points.front().capacity == 2);
}

TEST_CASE("trajectory comparison on the small figure instance") {
  ExperimentConfig cfg = small_config();
  cfg.dims = {5};
  cfg.pattern_counts = {4};
  cfg.trials = 60;
  cfg.train_epochs = 2500;
  cfg.width_factor = 80;
  cfg.trace_starts = 3;
  TrajectoryComparison cmp = run_trajectory_comparison(cfg);

  // Distinct, non-adjacent patterns by construction.
  for (int a = 0; a < cmp.patterns.count; ++a)
    for (int b = a + 1; b < cmp.patterns.count; ++b)
      CHECK(hamming_error(cmp.patterns.data.col(a), cmp.patterns.data.col(b)) * cmp.patterns.dim >= 2.0);

  CHECK(cmp.agreement_ode >= 0.9);
  CHECK(cmp.agreement_sde >= 0.85);
  CHECK(cmp.agreement_learned >= 0.85);
  CHECK(cmp.frac_one_iteration >= 0.9);

  int within = 0;
  for (const TrajectoryStartResult& r : cmp.summary) within += r.learned_vs_exact_linf <= 0.1;
  CHECK(static_cast<double>(within) / cmp.summary.size() >= 0.85);

  // Four methods per traced start, aligned on the shared progress axis.
  REQUIRE(cmp.traces.size() == 4 * 3);
  for (const MethodTrace& t : cmp.traces) {
    CHECK(t.progress.front() == 0.0);
    CHECK(t.progress.back() == doctest::Approx(1.0));
  }
}

TEST_CASE("config hash ignores output location but tracks physics") {
  ExperimentConfig a = small_config();
  ExperimentConfig b = a;
  b.out_dir = "elsewhere";
  b.tag = "other";
  b.workers = 4;
  CHECK(a.hash() == b.hash());
  b.theta = 0.5;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("config json round trip") {
  ExperimentConfig a = small_config();
  a.dims = {3, 5};
  a.pattern_counts = {2, 4, 8};
  a.tag = "t";
  ExperimentConfig b = ExperimentConfig::from_json(a.to_json());
  CHECK(a.to_json() == b.to_json());
}
