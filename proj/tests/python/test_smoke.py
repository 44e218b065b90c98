"""Smoke tests for the memdiff extension module."""

import numpy as np
import pytest

import memdiff as md


def test_patterns_roundtrip_and_metrics():
    ps = md.gen_binary_patterns(8, 5, 42)
    assert ps.dim == 8 and ps.count == 5
    data = np.asarray(ps.data)
    assert data.shape == (8, 5)
    assert set(np.unique(data)) == {-1.0, 1.0}

    y = data[:, 0]
    assert md.hamming_error(y, y) == 0.0
    assert md.hamming_error(y, -y) == 1.0
    assert md.pearson(y, y) == pytest.approx(1.0)

    noisy = md.corrupt_gaussian(y, 0.68, 7)
    assert noisy.shape == (8,)
    assert md.corrupt_gaussian(y, 1.0, 7) == pytest.approx(y)

    masked, mask = md.mask_bernoulli(y, 1.0, 3)
    assert np.all(masked == 0.0)
    assert all(mask)

    with pytest.raises(ValueError):
        md.corrupt_gaussian(y, 1.5, 0)
    with pytest.raises(ArithmeticError):
        md.pearson(y, np.ones(8))


def test_hopfield_recall_recovers_pattern():
    ps = md.gen_binary_patterns(10, 3, 1)
    y = np.asarray(ps.data)[:, 0]
    noisy = md.corrupt_gaussian(y, 0.68, 5)

    cfg = md.ModernHopfieldConfig()
    cfg.beta = 5.0
    cfg.max_iters = 150
    out = md.binarize(md.modern_recall(ps, noisy, cfg))
    assert md.hamming_error(out, y) <= 0.2

    w = md.hebbian_weights(ps)
    state, converged, sweeps = md.classical_recall(w, noisy, 50, 9)
    assert converged and sweeps >= 1
    assert set(np.unique(state)) <= {-1.0, 1.0}


def test_exact_score_matches_finite_differences():
    ps = md.gen_binary_patterns(4, 3, 11)
    vp = md.NoiseSchedule.variance_preserving(0.8)
    t = 0.9
    x = np.asarray(md.corrupt_gaussian(np.asarray(ps.data)[:, 0], 0.68, 2))

    score = md.exact_score(ps, x, t, vp)
    h = 1e-5
    fd = np.zeros(4)
    for i in range(4):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (md.log_marginal(ps, xp, t, vp) - md.log_marginal(ps, xm, t, vp)) / (2 * h)
    assert np.linalg.norm(score - fd) / np.linalg.norm(fd) < 1e-4


def test_ode_denoise_reaches_single_pattern():
    vp = md.NoiseSchedule.variance_preserving(0.8)
    ps = md.gen_binary_patterns(6, 1, 3)
    y = np.asarray(ps.data)[:, 0]
    score = md.make_exact_score(ps, vp)
    traj = md.ode_denoise(score, y + 0.5, 1.0, vp, 300)
    assert np.max(np.abs(traj.final_state() - y)) < 1e-2
    assert traj.paper_time(0) == pytest.approx(1.0)
    assert traj.paper_time(300) == pytest.approx(0.0)

    # A python-side score callable works through the same entry point.
    const_score = lambda x, t: np.zeros_like(x)
    drift_only = md.sde_sample(const_score, y * 1.0, 1.0, vp, 50, 4, None, 0.0)
    assert len(drift_only.states) == 51


def test_t_start_matches_theta():
    vp = md.NoiseSchedule.variance_preserving(0.8)
    t0 = md.t_start_for_noise(0.68, 0.8)
    assert vp.theta_of(t0) == pytest.approx(0.68, rel=1e-12)


def test_energy_identity_and_grid():
    ve = md.NoiseSchedule.variance_exploding(1.0, 1.0)
    ps = md.normalize_columns(md.gen_gaussian_patterns(5, 6, 8))
    xs = [np.random.default_rng(k).standard_normal(5) for k in range(20)]
    spread, offset = md.equivalence_residual(ps, xs, 1.0 - 1.0 / 5.0, ve)
    assert spread < 1e-8
    assert offset == pytest.approx(0.5 + np.log(6.0) / 5.0, rel=1e-9)

    spec = md.make_ring_spec(np.zeros(2), 1.0, 64)
    bounds = md.GridBounds()
    grid = md.emit_memory_grid(spec, bounds, 32, 32, 6.0)
    assert np.asarray(grid.values).shape == (32, 32)
    assert np.all(np.isfinite(np.asarray(grid.values)))


def test_training_smoke():
    ps = md.gen_binary_patterns(5, 4, 21)
    cfg = md.TrainConfig()
    cfg.epochs = 150
    cfg.seed = 6
    cfg.width_factor = 8
    cfg.schedule = md.NoiseSchedule.variance_preserving(0.8)
    result = md.train(ps, cfg)
    losses = result.loss_history
    assert len(losses) == result.steps_run
    assert np.mean(losses[-10:]) < np.mean(losses[:10])

    score = md.make_learned_score(result.params, cfg.schedule)
    out = score(np.zeros(5), 0.5)
    assert out.shape == (5,)
