"""Score-function policy-gradient training of the edge logits.

The mask distribution is a product of independent Bernoulli gates, so the
log-likelihood gradient of a sampled mask is available in closed form and
the expected score can be ascended without differentiating through the
forward model: each step samples one or more (mask, score) pairs, forms the
score-weighted log-likelihood gradient, and applies a bias-corrected Adam
ascent step to the trainable entries.

An optional moving-average baseline (disabled by default) is subtracted from
the scores before weighting.  The baseline used at a step never includes
that step's own samples, which keeps the gradient estimate unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphLogits, flatten, unflatten


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators plus the step count."""

    first: np.ndarray
    second: np.ndarray
    step: int

    @staticmethod
    def initial(dim: int) -> "AdamState":
        return AdamState(np.zeros(dim), np.zeros(dim), 0)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 0.1,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam ascent step; returns the moved parameters."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.ndim != 1:
        raise ValueError("params and grad must be matching 1-D arrays")
    step = state.step + 1
    first = beta1 * state.first + (1.0 - beta1) * grad
    second = beta2 * state.second + (1.0 - beta2) * grad**2
    first_hat = first / (1.0 - beta1**step)
    second_hat = second / (1.0 - beta2**step)
    moved = params + lr * first_hat / (np.sqrt(second_hat) + eps)
    return moved, AdamState(first, second, step)


def reinforce_gradient(
    task,
    model,
    logits: GraphLogits,
    rng: np.random.Generator,
    n_samples: int = 1,
    baseline: float = 0.0,
) -> tuple[np.ndarray, list[float]]:
    """Score-function gradient estimate of the expected score.

    Averages ``(score - baseline) * grad_log_prob(mask)`` over fresh
    (mask, score) samples.  Unbiased for any baseline that does not depend
    on the samples themselves.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    total = np.zeros(logits.size)
    scores = []
    for _ in range(n_samples):
        score, grad = model.score_and_grad(task, logits, rng)
        scores.append(score)
        total += (score - baseline) * grad
    return total / n_samples, scores


@dataclass(frozen=True)
class TrainSchedule:
    """Which tasks to train on, how often, and with what optimizer knobs.

    ``repetitions`` full passes are made over ``task_ids`` in order, so a
    10-task schedule at 2 repetitions is 20 gradient steps.
    """

    task_ids: tuple[str, ...]
    repetitions: int = 2
    samples_per_step: int = 1
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_baseline: bool = False
    baseline_decay: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "task_ids", tuple(self.task_ids))
        if not self.task_ids:
            raise ValueError("schedule needs at least one task id")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.samples_per_step < 1:
            raise ValueError(f"samples_per_step must be >= 1, got {self.samples_per_step}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError(f"baseline_decay must be in [0, 1), got {self.baseline_decay}")

    def usages(self) -> list[str]:
        """Task ids in gradient-step order."""
        return list(self.task_ids) * self.repetitions


@dataclass(frozen=True)
class TraceRow:
    """One training step: task used, mean sampled score, gradient norm."""

    step: int
    task_id: str
    score: float
    grad_norm: float


def train(
    logits: GraphLogits,
    schedule: TrainSchedule,
    tasks,
    model,
    rng: np.random.Generator,
) -> tuple[GraphLogits, list[TraceRow]]:
    """Run the schedule; return the trained logits and the step trace."""
    by_id = {t.id: t for t in tasks}
    missing = [tid for tid in schedule.task_ids if tid not in by_id]
    if missing:
        raise ValueError(f"schedule references unknown task ids: {missing}")

    params = flatten(logits)
    state = AdamState.initial(params.size)
    baseline = 0.0
    baseline_ready = False
    trace: list[TraceRow] = []

    for step, task_id in enumerate(schedule.usages()):
        current = unflatten(params, logits.n_agents)
        active_baseline = baseline if (schedule.use_baseline and baseline_ready) else 0.0
        grad, scores = reinforce_gradient(
            by_id[task_id],
            model,
            current,
            rng,
            n_samples=schedule.samples_per_step,
            baseline=active_baseline,
        )
        mean_score = float(np.mean(scores))
        if schedule.use_baseline:
            if baseline_ready:
                baseline = (
                    schedule.baseline_decay * baseline
                    + (1.0 - schedule.baseline_decay) * mean_score
                )
            else:
                baseline = mean_score
                baseline_ready = True
        params, state = adam_step(
            params,
            grad,
            state,
            lr=schedule.lr,
            beta1=schedule.beta1,
            beta2=schedule.beta2,
            eps=schedule.eps,
        )
        trace.append(TraceRow(step, task_id, mean_score, float(np.linalg.norm(grad))))

    return unflatten(params, logits.n_agents), trace
