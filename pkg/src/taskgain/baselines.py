"""Reference task-scoring baselines for budget-matched comparisons.

Three families, all built on the same single-sample score-weighted
log-likelihood gradients as the trainer, so rollout budgets are directly
comparable:

* expected gradient length: norm of the mean sampled gradient;
* expected model change: parameter displacement after a few optimizer steps;
* Fisher-style coresets: greedy selection against an accumulating
  outer-product information matrix, with trace and log-det criteria.

Scoring any one task consumes exactly the stated number of rollouts, which
is what makes the 150-rollout parity bookkeeping trivial.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor

from .errors import NumericalError
from .graph import GraphLogits, flatten, unflatten
from .training import AdamState, adam_step

FISHER_CRITERIA = ("trace", "det")

# Ridge added to the initial Fisher accumulator.
FISHER_RIDGE = 1e-3


def _sampled_gradients(task, model, logits, n_samples, rng) -> np.ndarray:
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rows = []
    for _ in range(n_samples):
        score, grad = model.score_and_grad(task, logits, rng)
        rows.append(score * grad)
    return np.asarray(rows)


def egl_score(
    task, model, logits: GraphLogits, rng: np.random.Generator, n_samples: int = 3
) -> float:
    """Expected-gradient-length score: norm of the mean sampled gradient."""
    return float(np.linalg.norm(_sampled_gradients(task, model, logits, n_samples, rng).mean(axis=0)))


def emc_score(
    task,
    model,
    logits: GraphLogits,
    rng: np.random.Generator,
    steps: int = 3,
    lr: float = 0.1,
) -> float:
    """Expected-model-change score: displacement after a short ascent probe.

    Runs ``steps`` single-sample gradient steps through a fresh optimizer
    state and reports how far the trainable parameters moved.  The probe
    never touches the caller's logits.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    start = flatten(logits)
    params = start.copy()
    state = AdamState.initial(params.size)
    for _ in range(steps):
        grad = _sampled_gradients(task, model, unflatten(params, logits.n_agents), 1, rng)[0]
        params, state = adam_step(params, grad, state, lr=lr)
    return float(np.linalg.norm(params - start))


def fisher_matrix(
    task, model, logits: GraphLogits, rng: np.random.Generator, n_samples: int = 3
) -> np.ndarray:
    """Empirical outer-product information matrix from sampled gradients."""
    rows = _sampled_gradients(task, model, logits, n_samples, rng)
    return rows.T @ rows / rows.shape[0]


def fisher_greedy(
    fishers,
    k: int,
    criterion: str = "trace",
    ridge: float = FISHER_RIDGE,
) -> list[int]:
    """Greedy coreset over per-task information matrices.

    The accumulator starts at the mean matrix plus a ridge.  Each round
    picks the candidate maximizing the marginal criterion against the
    current accumulator (``trace``: ``tr(B^{-1} F_i)``; ``det``:
    ``logdet(B + F_i) - logdet(B)``), adds it, and repeats.  Index order
    breaks ties.
    """
    fishers = [np.asarray(f, dtype=float) for f in fishers]
    if not fishers:
        raise ValueError("no candidate matrices")
    dim = fishers[0].shape[0]
    for i, f in enumerate(fishers):
        if f.shape != (dim, dim):
            raise ValueError(f"matrix {i} has shape {f.shape}, expected ({dim}, {dim})")
        if not np.allclose(f, f.T, atol=1e-10):
            raise ValueError(f"matrix {i} is not symmetric")
    if not 1 <= k <= len(fishers):
        raise ValueError(f"k must be in [1, {len(fishers)}], got {k}")
    if criterion not in FISHER_CRITERIA:
        raise ValueError(f"criterion must be one of {FISHER_CRITERIA}, got {criterion!r}")

    accumulator = np.mean(fishers, axis=0) + ridge * np.eye(dim)
    selected: list[int] = []
    for _ in range(k):
        try:
            cho_factor(accumulator)
        except LinAlgError:
            raise NumericalError("Fisher accumulator is not positive definite") from None
        _, logdet_b = np.linalg.slogdet(accumulator)
        best_idx, best_val = -1, -np.inf
        for i, f in enumerate(fishers):
            if i in selected:
                continue
            if criterion == "trace":
                val = float(np.trace(np.linalg.solve(accumulator, f)))
            else:
                _, logdet_bf = np.linalg.slogdet(accumulator + f)
                val = float(logdet_bf - logdet_b)
            if val > best_val:
                best_idx, best_val = i, val
        selected.append(best_idx)
        accumulator = accumulator + fishers[best_idx]
    return selected
