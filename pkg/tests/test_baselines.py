import numpy as np
import pytest
from scipy.stats import spearmanr

from taskgain.baselines import (
    FISHER_RIDGE,
    egl_score,
    emc_score,
    fisher_greedy,
    fisher_matrix,
)
from taskgain.errors import NumericalError
from taskgain.graph import GraphLogits
from taskgain.simulate import ForwardModel, SimConfig, default_profiles, make_pool


class StubModel:
    """Plays back a fixed score and a cycling gradient sequence."""

    def __init__(self, score, grads):
        self.score = score
        self.grads = [np.asarray(g, dtype=float) for g in grads]
        self.calls = 0

    def score_and_grad(self, task, logits, rng):
        grad = self.grads[self.calls % len(self.grads)]
        self.calls += 1
        return self.score, grad


def small_logits(n_agents=2):
    return GraphLogits.zeros(n_agents)


def test_zero_score_zeroes_both_probes():
    model = StubModel(0.0, [np.ones(5)])
    logits = small_logits()
    rng = np.random.default_rng(0)
    assert egl_score("t", model, logits, rng) == 0.0
    assert emc_score("t", model, logits, rng) == 0.0


def test_egl_hand_value_and_linearity():
    # One sample, gate logit 0 and the edge sampled on: the mask gradient is
    # 0.5 per entry, so a unit score gives norm 0.5 on a single gate.
    logits = small_logits()
    model = StubModel(1.0, [np.array([0.5, 0.0, 0.0, 0.0, 0.0])])
    value = egl_score("t", model, logits, np.random.default_rng(0), n_samples=1)
    assert value == pytest.approx(0.5, abs=1e-15)

    doubled = StubModel(2.0, [np.array([0.5, 0.0, 0.0, 0.0, 0.0])])
    assert egl_score("t", doubled, logits, np.random.default_rng(0), n_samples=1) == pytest.approx(
        1.0, abs=1e-15
    )

    with pytest.raises(ValueError):
        egl_score("t", model, logits, np.random.default_rng(0), n_samples=0)


def test_egl_averages_before_norm():
    # Opposite gradients cancel in the mean; the norm of means is not the
    # mean of norms.
    model = StubModel(1.0, [np.array([1.0, 0.0]), np.array([-1.0, 0.0])])
    logits = small_logits()
    assert egl_score("t", model, logits, np.random.default_rng(0), n_samples=2) == 0.0


def adam_oracle(start, grads, lr):
    # Textbook bias-corrected Adam, written out independently.
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(start)
    v = np.zeros_like(start)
    params = start.copy()
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g**2
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        params = params + lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def test_emc_matches_adam_oracle():
    logits = small_logits()
    grads = [
        np.array([1.0, -2.0, 0.5, 0.0, 3.0]),
        np.array([-1.0, 1.0, 1.0, 1.0, -1.0]),
        np.array([0.25, 0.25, -0.5, 2.0, 0.0]),
    ]
    score = 3.0
    model = StubModel(score, grads)
    value = emc_score("t", model, logits, np.random.default_rng(0), steps=3, lr=0.1)

    start = np.zeros(5)
    end = adam_oracle(start, [score * g for g in grads], lr=0.1)
    assert value == pytest.approx(np.linalg.norm(end - start), abs=1e-10)

    assert emc_score("t", model, logits, np.random.default_rng(0), steps=1, lr=0.0) == 0.0
    with pytest.raises(ValueError):
        emc_score("t", model, logits, np.random.default_rng(0), steps=0)


def test_emc_leaves_logits_untouched():
    logits = small_logits()
    spatial = logits.spatial.copy()
    temporal = logits.temporal.copy()
    model = StubModel(1.0, [np.ones(5)])
    emc_score("t", model, logits, np.random.default_rng(0))
    np.testing.assert_array_equal(logits.spatial, spatial)
    np.testing.assert_array_equal(logits.temporal, temporal)


def test_fisher_matrix_properties():
    grads = [np.array([1.0, 2.0]), np.array([-1.0, 0.5]), np.array([0.0, 3.0])]
    model = StubModel(2.0, grads)
    fisher = fisher_matrix("t", model, small_logits(), np.random.default_rng(0), n_samples=3)

    rows = np.array([2.0 * g for g in grads])
    expected = rows.T @ rows / 3
    np.testing.assert_allclose(fisher, expected, atol=1e-12)
    np.testing.assert_allclose(fisher, fisher.T, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(fisher)) >= -1e-12


def test_fisher_matrix_single_sample_identities():
    h = np.array([1.5, -2.0, 0.5])
    model = StubModel(1.0, [h])
    fisher = fisher_matrix("t", model, small_logits(), np.random.default_rng(0), n_samples=1)
    assert np.trace(fisher) == pytest.approx(np.dot(h, h), abs=1e-12)
    assert np.linalg.det(fisher) == pytest.approx(0.0, abs=1e-12)


def test_fisher_greedy_dominant_then_tie():
    fishers = [np.diag([5.0, 5.0]), np.diag([1.0, 1.0])]
    assert fisher_greedy(fishers, 2, "trace") == [0, 1]
    assert fisher_greedy(fishers, 2, "det") == [0, 1]
    # Exact tie between identical candidates goes to the lower index.
    assert fisher_greedy([np.eye(2), np.eye(2)], 1, "trace") == [0]
    assert fisher_greedy([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], 1, "trace") == [0]


def test_fisher_greedy_prefers_uncovered_directions():
    fishers = [np.diag([10.0, 0.0]), np.diag([10.0, 0.0]), np.diag([0.0, 4.0])]
    assert fisher_greedy(fishers, 2, "trace") == [2, 0]
    assert fisher_greedy(fishers, 3, "trace") == [2, 0, 1]


def test_fisher_greedy_det_gains_nonnegative():
    rng = np.random.default_rng(1)
    fishers = []
    for _ in range(6):
        h = rng.normal(size=(2, 4))
        fishers.append(h.T @ h / 2)
    order = fisher_greedy(fishers, 6, "det")
    assert sorted(order) == list(range(6))

    accumulator = np.mean(fishers, axis=0) + FISHER_RIDGE * np.eye(4)
    for idx in order:
        _, before = np.linalg.slogdet(accumulator)
        accumulator = accumulator + fishers[idx]
        _, after = np.linalg.slogdet(accumulator)
        assert after - before >= -1e-12


def test_fisher_greedy_validation():
    with pytest.raises(ValueError):
        fisher_greedy([], 1)
    with pytest.raises(ValueError):
        fisher_greedy([np.eye(2), np.eye(3)], 1)
    with pytest.raises(ValueError):
        fisher_greedy([np.array([[0.0, 1.0], [0.0, 0.0]])], 1)
    with pytest.raises(ValueError):
        fisher_greedy([np.eye(2)], 2)
    with pytest.raises(ValueError):
        fisher_greedy([np.eye(2)], 0)
    with pytest.raises(ValueError):
        fisher_greedy([np.eye(2)], 1, criterion="volume")
    with pytest.raises(NumericalError):
        fisher_greedy([np.diag([-5.0, -5.0])], 1)


def test_fisher_greedy_trace_matches_brute_force_first_pick():
    # The first greedy pick maximizes the trace criterion by definition;
    # check against a direct argmax over candidates.
    rng = np.random.default_rng(2)
    fishers = []
    for _ in range(7):
        h = rng.normal(size=(3, 3))
        fishers.append(h.T @ h / 3)
    accumulator = np.mean(fishers, axis=0) + FISHER_RIDGE * np.eye(3)
    values = [np.trace(np.linalg.solve(accumulator, f)) for f in fishers]
    assert fisher_greedy(fishers, 1, "trace") == [int(np.argmax(values))]


def test_egl_and_fisher_trace_rank_identically_at_one_sample():
    # With one shared rollout per task, the trace of the outer product is
    # exactly the squared gradient-length score, so the two orderings agree.
    cfg = SimConfig(n_agents=3, n_fake=1, belief_noise=0.0)
    model = ForwardModel(default_profiles(cfg), cfg)
    tasks = make_pool(8, embed_dim=2, seed=11, prefix="rank")
    logits = GraphLogits.zeros(3)

    egls, traces = [], []
    for k, task in enumerate(tasks):
        egls.append(egl_score(task, model, logits, np.random.default_rng(100 + k), n_samples=1))
        fisher = fisher_matrix(task, model, logits, np.random.default_rng(100 + k), n_samples=1)
        traces.append(np.trace(fisher))
    np.testing.assert_allclose(np.array(egls) ** 2, traces, atol=1e-12)
    rho = spearmanr(egls, traces).statistic
    assert rho == pytest.approx(1.0, abs=1e-12)


def test_budget_parity_at_three_samples():
    tasks = [f"t{i}" for i in range(50)]
    logits = small_logits()

    for probe in (
        lambda m, t: egl_score(t, m, logits, np.random.default_rng(0), n_samples=3),
        lambda m, t: emc_score(t, m, logits, np.random.default_rng(0), steps=3),
        lambda m, t: fisher_matrix(t, m, logits, np.random.default_rng(0), n_samples=3),
    ):
        model = StubModel(1.0, [np.ones(5)])
        for task in tasks:
            probe(model, task)
        assert model.calls == 150
