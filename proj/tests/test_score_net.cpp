#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include "memdiff/rng.hpp"
#include "memdiff/score_net.hpp"

using namespace memdiff;

namespace {

double spectral_norm(const Eigen::MatrixXd& w, int iters = 60) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(w.cols()).normalized();
  for (int k = 0; k < iters; ++k) v = (w.transpose() * (w * v)).normalized();
  return (w * v).norm();
}

std::vector<DenoiseSample> random_samples(int d, int count, uint64_t seed,
                                          const NoiseSchedule& vp) {
  RngStream rng(seed);
  std::vector<BatchSpec> batch;
  for (int i = 0; i < count; ++i) {
    batch.push_back(BatchSpec{binarize(rng.normal_vector(d)), 0.3 + 1.2 * rng.uniform(),
                              rng.derive(100 + i).key()});
  }
  return make_samples(batch, vp);
}

}  // namespace

TEST_CASE("zero parameters map everything to zero") {
  MlpParams p = MlpParams::zeros(4, 12);
  RngStream rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd out = mlp_forward(p, rng.normal_vector(4), 0.7);
    CHECK(out.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("forward is pure and thread-stable") {
  MlpParams p = MlpParams::init(5, 20, 3);
  RngStream rng(2);
  Eigen::VectorXd x = rng.normal_vector(5);
  Eigen::VectorXd ref = mlp_forward(p, x, 0.5);
  CHECK(mlp_forward(p, x, 0.5) == ref);

  std::vector<Eigen::VectorXd> outs(4);
  std::vector<std::thread> pool;
  for (int i = 0; i < 4; ++i) pool.emplace_back([&, i] { outs[i] = mlp_forward(p, x, 0.5); });
  for (auto& t : pool) t.join();
  for (const auto& o : outs) CHECK(o == ref);
}

TEST_CASE("forward validates inputs") {
  MlpParams p = MlpParams::init(3, 6, 4);
  Eigen::VectorXd x(3);
  x << 1.0, std::numeric_limits<double>::infinity(), 0.0;
  CHECK_THROWS_AS(mlp_forward(p, x, 0.5), NumericError);
  CHECK_THROWS_AS(mlp_forward(p, Eigen::VectorXd::Zero(3), 0.0), ParameterError);
  CHECK_THROWS_AS(mlp_forward(p, Eigen::VectorXd::Zero(3), 1.5), ParameterError);
}

TEST_CASE("output is Lipschitz with the product of spectral norms as constant") {
  MlpParams p = MlpParams::init(6, 24, 5);
  double lip = spectral_norm(p.w1) * spectral_norm(p.w2) * spectral_norm(p.w3) * spectral_norm(p.w4);
  RngStream rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd x = rng.normal_vector(6);
    Eigen::VectorXd dx = 1e-3 * rng.normal_vector(6);
    double num = (mlp_forward(p, x + dx, 0.6) - mlp_forward(p, x, 0.6)).norm();
    CHECK(num <= lip * dx.norm() * (1.0 + 1e-9));
  }
}

TEST_CASE("initialization keeps pre-activation variance near one") {
  const int d = 8, h = 320;
  MlpParams p = MlpParams::init(d, h, 7);
  RngStream rng(8);
  const int samples = 400;
  double v1 = 0, v2 = 0, v3 = 0;
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd x = rng.normal_vector(d);
    Eigen::VectorXd a0(d + 1);
    a0 << x, 0.7;
    Eigen::VectorXd z1 = p.w1 * a0 + p.b1;
    Eigen::VectorXd h1(h + 1);
    h1 << z1.cwiseMax(0.0), 0.7;
    Eigen::VectorXd z2 = p.w2 * h1 + p.b2;
    Eigen::VectorXd h2(h + 1);
    h2 << z2.cwiseMax(0.0), 0.7;
    Eigen::VectorXd z3 = p.w3 * h2 + p.b3;
    v1 += z1.squaredNorm() / h;
    v2 += z2.squaredNorm() / h;
    v3 += z3.squaredNorm() / h;
  }
  for (double v : {v1 / samples, v2 / samples, v3 / samples}) {
    CHECK(v > 0.5);
    CHECK(v < 2.0);
  }
}

TEST_CASE("zero network loss is half the noise second moment") {
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);
  const int d = 6;
  MlpParams zero = MlpParams::zeros(d, 8);
  auto samples = random_samples(d, 10000, 11, vp);
  double loss = denoising_loss(zero, samples);
  CHECK(std::abs(loss - d / 2.0) / (d / 2.0) < 0.05);
}

TEST_CASE("an oracle predictor has zero loss and zero gradient") {
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);
  auto samples = random_samples(4, 32, 12, vp);

  // Loss helper with perfect predictions.
  Eigen::MatrixXd preds(4, 32), deltas(4, 32);
  for (int i = 0; i < 32; ++i) {
    preds.col(i) = samples[i].delta;
    deltas.col(i) = samples[i].delta;
  }
  CHECK(prediction_loss(preds, deltas) == 0.0);

  // Zero-residual batch: make the targets equal the network output.
  MlpParams p = MlpParams::init(4, 10, 13);
  std::vector<DenoiseSample> aligned = samples;
  for (auto& s : aligned) s.delta = mlp_forward(p, s.x, s.theta_t);
  CHECK(denoising_loss(p, aligned) == doctest::Approx(0.0));
  MlpParams g = loss_gradient(p, aligned);
  CHECK(g.flatten().cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("duplicated batches give the same gradient") {
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);
  auto samples = random_samples(5, 12, 14, vp);
  std::vector<DenoiseSample> doubled = samples;
  doubled.insert(doubled.end(), samples.begin(), samples.end());
  MlpParams p = MlpParams::init(5, 15, 15);
  Eigen::VectorXd g1 = loss_gradient(p, samples).flatten();
  Eigen::VectorXd g2 = loss_gradient(p, doubled).flatten();
  CHECK((g1 - g2).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("loss gradient matches finite differences along random directions") {
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);
  const int d = 4, h = 16;
  RngStream rng(16);
  for (int point = 0; point < 4; ++point) {
    auto samples = random_samples(d, 8, 160 + point, vp);
    MlpParams p = MlpParams::init(d, h, rng.derive(point).key());
    Eigen::VectorXd theta0 = p.flatten();
    Eigen::VectorXd g = loss_gradient(p, samples).flatten();
    for (int dir = 0; dir < 8; ++dir) {
      Eigen::VectorXd v = rng.normal_vector(static_cast<int>(theta0.size())).normalized();
      double eps = 1e-5;
      double lp = denoising_loss(MlpParams::unflatten(theta0 + eps * v, d, h), samples);
      double lm = denoising_loss(MlpParams::unflatten(theta0 - eps * v, d, h), samples);
      double fd = (lp - lm) / (2 * eps);
      double an = g.dot(v);
      CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-10}) < 1e-4);
    }
  }
}

TEST_CASE("training is deterministic and epochs=0 returns the initialization") {
  PatternSet ps = gen_binary_patterns(5, 4, 17);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 18;
  cfg.width_factor = 6;
  cfg.schedule = NoiseSchedule::variance_preserving(0.8);

  TrainResult a = train(ps, cfg);
  TrainResult b = train(ps, cfg);
  REQUIRE(a.loss_history.size() == b.loss_history.size());
  for (size_t i = 0; i < a.loss_history.size(); ++i) CHECK(a.loss_history[i] == b.loss_history[i]);
  CHECK(a.params.flatten() == b.params.flatten());

  cfg.epochs = 0;
  TrainResult init = train(ps, cfg);
  CHECK(init.steps_run == 0);
  CHECK(init.loss_history.empty());
  TrainResult init2 = train(ps, cfg);
  CHECK(init.params.flatten() == init2.params.flatten());
}

TEST_CASE("training loss trends down on a small problem") {
  PatternSet ps = gen_binary_patterns(5, 4, 19);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.seed = 20;
  cfg.width_factor = 8;
  cfg.plateau_window = 0;  // no early stop for this check
  cfg.schedule = NoiseSchedule::variance_preserving(0.8);
  TrainResult r = train(ps, cfg);
  REQUIRE(r.steps_run == 100);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += r.loss_history[i];
    tail += r.loss_history[90 + i];
  }
  CHECK(tail < 0.7 * head);
}

TEST_CASE("learned_score is the scaled negative noise prediction") {
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);
  MlpParams p = MlpParams::init(4, 12, 21);
  ScoreFunction score = make_learned_score(p, vp);
  RngStream rng(22);
  Eigen::VectorXd x = rng.normal_vector(4);
  double t = 0.8;
  Eigen::VectorXd expected = -mlp_forward(p, x, vp.theta_of(t)) / vp.std_of(t);
  CHECK((score(x, t) - expected).lpNorm<Eigen::Infinity>() < 1e-15);
  CHECK_THROWS_AS(score(x, 0.0), ParameterError);

  // With a perfect noise prediction the adapter reproduces the exact score
  // of a single-pattern model.
  Eigen::VectorXd y = binarize(rng.normal_vector(4));
  PatternSet one = PatternSet::binary(y);
  Eigen::VectorXd delta_true = (x - vp.theta_of(t) * y) / vp.std_of(t);
  Eigen::VectorXd score_from_delta = -delta_true / vp.std_of(t);
  CHECK((exact_score(one, x, t, vp) - score_from_delta).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("mlp save and load round trip") {
  MlpParams p = MlpParams::init(3, 9, 23);
  auto dir = std::filesystem::temp_directory_path() / "memdiff_mlp_test";
  std::filesystem::create_directories(dir);
  save_mlp(p, (dir / "m.bin").string(), (dir / "m.json").string(), {{"gamma", 0.8}});
  MlpParams q = load_mlp((dir / "m.bin").string(), (dir / "m.json").string());
  CHECK(q.flatten() == p.flatten());
}

TEST_CASE("trained score aligns with the exact score near the data") {
  const int d = 10, n = 10;
  PatternSet ps = gen_binary_patterns(d, n, 24);
  NoiseSchedule vp = NoiseSchedule::variance_preserving(0.8);

  std::vector<std::pair<int, MlpParams>> checkpoints;
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.seed = 25;
  cfg.schedule = vp;
  cfg.t_hi = 1.2;
  cfg.checkpoint_every = 600;
  cfg.checkpoint = [&](int step, const MlpParams& p, double) { checkpoints.emplace_back(step, p); };
  TrainResult r = train(ps, cfg);
  checkpoints.emplace_back(r.steps_run, r.params);

  double t_eval = t_start_for_noise(0.68, 0.8);
  auto mean_cosine = [&](const MlpParams& p) {
    ScoreFunction learned = make_learned_score(p, vp);
    double acc = 0.0;
    int count = 0;
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd y = ps.data.col(k % n);
      Eigen::VectorXd x = forward_sample(y, t_eval, vp, 3000 + k).x;
      Eigen::VectorXd a = learned(x, t_eval);
      Eigen::VectorXd b = exact_score(ps, x, t_eval, vp);
      acc += a.dot(b) / (a.norm() * b.norm());
      ++count;
    }
    return acc / count;
  };

  std::vector<double> cosines;
  for (auto& [step, p] : checkpoints) cosines.push_back(mean_cosine(p));
  CHECK(cosines.back() > 0.95);
  CHECK(cosines.front() < cosines.back());
  // Monotone trend across checkpoints, allowing single-step noise.
  for (size_t i = 1; i < cosines.size(); ++i) CHECK(cosines[i] > cosines[i - 1] - 0.05);
}
