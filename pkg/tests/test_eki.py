import numpy as np
import pytest

from taskgain.eki import (
    EkiConfig,
    Ensemble,
    ScoreCache,
    batch_update,
    covariances,
    draw_prior_ensemble,
    kalman_gain,
    kalman_gain_information,
    one_step_utility,
    predict,
    update,
)
from taskgain.errors import NumericalError
from taskgain.simulate import TaskRecord


class LinearForward:
    """Deterministic stub: score is a fixed linear map of the parameters."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        self.calls = 0

    def score_flat(self, task, flat, rng):
        self.calls += 1
        out = self.matrix @ flat
        return float(out[0]) if out.size == 1 else out


class ConstantForward:
    def __init__(self, value=0.5):
        self.value = value
        self.calls = 0

    def score_flat(self, task, flat, rng):
        self.calls += 1
        return self.value


def make_task(tid):
    return TaskRecord(tid, np.zeros(2), truth=1, difficulty=0.3, score_mode="log_prob")


def test_ensemble_validation():
    with pytest.raises(ValueError):
        Ensemble(np.zeros(3))
    with pytest.raises(ValueError):
        Ensemble(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        Ensemble(np.array([[np.inf, 0.0], [0.0, 0.0]]))
    ens = Ensemble(np.arange(6, dtype=float).reshape(3, 2))
    assert (ens.size, ens.dim) == (3, 2)
    with pytest.raises(ValueError):
        ens.particles[0, 0] = 9.0


def test_config_validation():
    for kwargs in (
        {"ensemble_size": 1},
        {"prior_std": 0.0},
        {"obs_noise": 0.0},
        {"damping": 0.0},
        {"damping": 1.5},
        {"n_steps": 0},
    ):
        with pytest.raises(ValueError):
            EkiConfig(**kwargs)


def test_one_dimensional_hand_update():
    # Two particles at -1 and +1, identity scores, target 0, noise 0.1, no
    # damping: both covariances are 2 and the particles land at -+1/21.
    ens = Ensemble(np.array([[-1.0], [1.0]]))
    scores = np.array([[-1.0], [1.0]])
    c_zl, c_ll = covariances(ens, scores)
    assert c_zl.item() == pytest.approx(2.0, abs=1e-15)
    assert c_ll.item() == pytest.approx(2.0, abs=1e-15)
    posterior = update(ens, scores, 0.0, obs_noise=0.1, damping=1.0)
    assert posterior.particles.ravel() == pytest.approx([-1 / 21, 1 / 21], abs=1e-14)


def test_covariances_match_numpy():
    rng = np.random.default_rng(0)
    particles = rng.normal(size=(7, 3))
    scores = rng.normal(size=(7, 2))
    c_zl, c_ll = covariances(Ensemble(particles), scores)
    joint = np.cov(np.hstack([particles, scores]), rowvar=False, ddof=1)
    assert np.allclose(c_zl, joint[:3, 3:], atol=1e-12)
    assert np.allclose(c_ll, joint[3:, 3:], atol=1e-12)


def test_damping_scales_shift_linearly():
    rng = np.random.default_rng(1)
    ens = Ensemble(rng.normal(size=(6, 4)))
    scores = rng.normal(size=(6, 2))
    full = update(ens, scores, 0.0, obs_noise=0.1, damping=1.0).particles - ens.particles
    damped = update(ens, scores, 0.0, obs_noise=0.1, damping=0.7).particles - ens.particles
    assert np.allclose(damped, 0.7 * full, atol=1e-12)


def test_update_matches_gain_algebra():
    rng = np.random.default_rng(2)
    ens = Ensemble(rng.normal(size=(9, 3)))
    scores = rng.normal(size=(9, 2))
    c_zl, c_ll = covariances(Ensemble(ens.particles), scores)
    gain = np.linalg.solve((c_ll + 0.1 * np.eye(2)).T, c_zl.T).T
    expected = ens.particles + (gain @ (0.0 - scores).T).T
    got = update(ens, scores, 0.0, obs_noise=0.1, damping=1.0)
    assert np.allclose(got.particles, expected, atol=1e-10)


def test_update_rejects_ill_conditioned_system():
    ens = Ensemble(np.array([[-1.0], [1.0]]))
    # eigenvalues of C_ll + 0.1 I spread over ~16 decades
    scores = np.array([[-1e7, -1.0], [1e7, 1.0]])
    with pytest.raises(NumericalError):
        update(ens, scores, 0.0, obs_noise=0.1, damping=1.0)


def test_update_perturb_needs_rng():
    ens = Ensemble(np.array([[-1.0], [1.0]]))
    scores = np.array([[-1.0], [1.0]])
    with pytest.raises(ValueError):
        update(ens, scores, 0.0, obs_noise=0.1, damping=1.0, perturb=True)


def test_kalman_gain_forms_agree():
    rng = np.random.default_rng(3)
    for _ in range(25):
        d, m = rng.integers(1, 6), rng.integers(1, 5)
        a = rng.normal(size=(d, d))
        c = a @ a.T + 0.1 * np.eye(d)
        g = rng.normal(size=(m, d))
        b = rng.normal(size=(m, m))
        gamma = b @ b.T + 0.1 * np.eye(m)
        k1 = kalman_gain(c, g, gamma)
        k2 = kalman_gain_information(c, g, gamma)
        assert np.max(np.abs(k1 - k2)) <= 1e-8


def test_prior_ensemble_moments():
    cfg = EkiConfig(ensemble_size=4000, prior_std=2.0)
    center = np.array([1.0, -3.0, 0.5])
    ens = draw_prior_ensemble(center, cfg, np.random.default_rng(4))
    assert ens.particles.shape == (4000, 3)
    assert np.allclose(ens.mean(), center, atol=0.15)
    assert np.allclose(ens.particles.std(axis=0, ddof=1), 2.0, atol=0.15)
    with pytest.raises(ValueError):
        draw_prior_ensemble(np.zeros((2, 2)), cfg, np.random.default_rng(0))


def test_cache_semantics():
    cache = ScoreCache()
    assert not cache.has("a", 0)
    with pytest.raises(KeyError):
        cache.get("a", 0)
    cache.put("a", 0, 1.5)
    assert cache.get("a", 0) == 1.5
    assert cache.forward_calls == 1
    with pytest.raises(ValueError):
        cache.put("a", 0, 2.0)
    cache.put("a", 1, np.array([1.0, 2.0]))
    assert len(cache) == 2


def test_cache_roundtrip(tmp_path):
    cache = ScoreCache()
    cache.put("a", 0, 1.25)
    cache.put("b", 3, np.array([0.5, -0.75]))
    path = tmp_path / "cache.tsv"
    cache.save(path)
    loaded = ScoreCache.load(path)
    assert loaded.get("a", 0) == 1.25
    assert np.array_equal(loaded.get("b", 3), [0.5, -0.75])


def test_predict_is_order_independent():
    rng = np.random.default_rng(5)
    ens = Ensemble(rng.normal(size=(4, 3)))
    forward = LinearForward(rng.normal(size=(1, 3)))
    tasks = [make_task("q1"), make_task("q2"), make_task("q3")]

    cache_a = ScoreCache()
    scores_fwd = predict(ens, tasks, forward, cache_a, seed=7)
    cache_b = ScoreCache()
    predict(ens, tasks[::-1], forward, cache_b, seed=7)
    scores_rev = predict(ens, tasks, forward, cache_b, seed=7)
    assert np.array_equal(scores_fwd, scores_rev)


def test_predict_counts_and_reuses():
    rng = np.random.default_rng(6)
    ens = Ensemble(rng.normal(size=(5, 3)))
    forward = LinearForward(rng.normal(size=(1, 3)))
    q1, q2, q3 = (make_task(f"q{i}") for i in (1, 2, 3))

    cache = ScoreCache()
    predict(ens, [q1, q2], forward, cache, seed=9)
    assert cache.forward_calls == 2 * ens.size
    predict(ens, [q2, q3], forward, cache, seed=9)  # q2 comes from the cache
    assert cache.forward_calls == 3 * ens.size
    assert forward.calls == 3 * ens.size


def test_batch_update_equals_stacked_update():
    rng = np.random.default_rng(7)
    ens = Ensemble(rng.normal(size=(6, 4)))
    forward = LinearForward(rng.normal(size=(2, 4)))
    tasks = [make_task("qa"), make_task("qb")]
    cache = ScoreCache()
    scores = predict(ens, tasks, forward, cache, seed=11)

    cfg = EkiConfig(ensemble_size=6)
    by_batch = batch_update(ens, tasks, cache, cfg)
    by_hand = update(ens, scores, np.zeros(scores.shape[1]), cfg.obs_noise, cfg.damping)
    assert np.array_equal(by_batch.particles, by_hand.particles)

    with pytest.raises(ValueError):
        batch_update(ens, [], cache, cfg)


def test_batch_update_requires_cached_scores():
    rng = np.random.default_rng(8)
    ens = Ensemble(rng.normal(size=(4, 3)))
    cfg = EkiConfig(ensemble_size=4)
    with pytest.raises(KeyError):
        batch_update(ens, [make_task("missing")], ScoreCache(), cfg)


def test_constant_scores_move_nothing():
    cfg = EkiConfig(ensemble_size=6, prior_std=1.0)
    record = one_step_utility(
        make_task("q"), np.zeros(5), ConstantForward(0.25), cfg, seed=13
    )
    assert record.kl == 0.0
    assert record.pred_var == 0.0
    assert record.task_id == "q"


def test_one_step_utility_deterministic():
    rng = np.random.default_rng(9)
    forward = LinearForward(rng.normal(size=(1, 5)))
    cfg = EkiConfig(ensemble_size=6)
    a = one_step_utility(make_task("q"), np.zeros(5), forward, cfg, seed=21)
    b = one_step_utility(make_task("q"), np.zeros(5), forward, cfg, seed=21)
    c = one_step_utility(make_task("q"), np.zeros(5), forward, cfg, seed=22)
    assert a == b
    assert a != c


def test_one_step_utility_shared_state_matches_fresh():
    # A shared ensemble plus prefilled cache must reproduce the standalone
    # result exactly: streams are keyed by content, not evaluation order.
    rng = np.random.default_rng(10)
    forward = LinearForward(rng.normal(size=(1, 5)))
    cfg = EkiConfig(ensemble_size=6)
    seed = 31

    fresh = one_step_utility(make_task("q2"), np.zeros(5), forward, cfg, seed=seed)

    ensemble = draw_prior_ensemble(np.zeros(5), cfg, np.random.default_rng(0))
    with pytest.raises(AssertionError):
        # guard: the shared path must use its own ensemble to differ
        assert fresh == one_step_utility(
            make_task("q2"), np.zeros(5), forward, cfg, seed=seed, ensemble=ensemble
        )

    from taskgain.seeding import derive_rng

    shared_ens = draw_prior_ensemble(np.zeros(5), cfg, derive_rng(seed, 0))
    cache = ScoreCache()
    predict(shared_ens, [make_task("q1"), make_task("q2")], forward, cache, seed=seed)
    shared = one_step_utility(
        make_task("q2"), np.zeros(5), forward, cfg, seed=seed, cache=cache, ensemble=shared_ens
    )
    assert shared == fresh


def test_multi_step_runs_and_differs():
    rng = np.random.default_rng(11)
    forward = LinearForward(rng.normal(size=(1, 4)))
    one = one_step_utility(
        make_task("q"), np.zeros(4), forward, EkiConfig(ensemble_size=6), seed=41
    )
    three = one_step_utility(
        make_task("q"), np.zeros(4), forward, EkiConfig(ensemble_size=6, n_steps=3), seed=41
    )
    assert np.isfinite(three.kl)
    assert three.kl > one.kl  # extra assimilation steps move the ensemble further


def test_perturbed_update_tracks_kalman_posterior():
    # Linear-Gaussian smoke check; the precise 2%/5% version lives in the
    # acceptance suite.
    rng = np.random.default_rng(12)
    d, m, j = 3, 2, 3000
    g_mat = rng.normal(size=(m, d))
    prior_cov = 4.0 * np.eye(d)
    gamma = 0.1 * np.eye(m)
    target = np.array([1.0, -2.0])

    ens = draw_prior_ensemble(np.zeros(d), EkiConfig(ensemble_size=j, prior_std=2.0), rng)
    scores = ens.particles @ g_mat.T
    posterior = update(ens, scores, target, obs_noise=0.1, damping=1.0, rng=rng, perturb=True)

    gain = kalman_gain(prior_cov, g_mat, gamma)
    exact_mean = gain @ target
    exact_cov = (np.eye(d) - gain @ g_mat) @ prior_cov
    assert np.linalg.norm(posterior.mean() - exact_mean) / np.linalg.norm(exact_mean) < 0.1
    got_var = posterior.particles.var(axis=0, ddof=1)
    assert np.all(np.abs(got_var - np.diag(exact_cov)) / np.diag(exact_cov) < 0.25)
