"""Two-stage task selection: coverage first, information second.

Stage one subsamples the raw pool and thins it to a small representative set
by greedy farthest-point traversal in embedding space, which spreads picks
across the pool's geometry.  Stage two ranks those representatives by
utility, either exhaustively or through the surrogate acquisition loop, and
keeps the top slice for training.  Every utility evaluation is appended to
an audit log together with the forward-call counter so selection cost stays
inspectable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .gain import UtilityRecord, rank_records
from .surrogate import AcquisitionSchedule, acquisition_loop

STRATEGIES = ("enumerate", "surrogate")
METRICS = ("euclidean", "cosine")


def _distances_to(points: np.ndarray, ref: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.linalg.norm(points - ref[None, :], axis=1)
    norms = np.linalg.norm(points, axis=1) * np.linalg.norm(ref)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, points @ ref / norms, 0.0)
    return 1.0 - cos


def farthest_point_select(
    embeddings, n_selected: int, metric: str = "euclidean"
) -> np.ndarray:
    """Greedy k-center traversal; returns indices in pick order.

    The walk starts at the point nearest the centroid and then repeatedly
    takes the point farthest from everything selected so far (max-min
    distance).  Ties break toward the lower index.  Asking for more points
    than exist returns the whole pool in traversal order.
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=float))
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    n = embeddings.shape[0]
    if n == 0:
        raise ValueError("empty embedding pool")
    if n_selected < 1:
        raise ValueError(f"n_selected must be >= 1, got {n_selected}")
    n_selected = min(n_selected, n)

    centroid = embeddings.mean(axis=0)
    first = int(np.argmin(_distances_to(embeddings, centroid, metric)))
    chosen = [first]
    min_dist = _distances_to(embeddings, embeddings[first], metric)
    min_dist[first] = -np.inf
    for _ in range(n_selected - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, _distances_to(embeddings, embeddings[nxt], metric))
        min_dist[nxt] = -np.inf
    return np.array(chosen)


class FarthestPointSelector(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`farthest_point_select`.

    ``fit`` records the traversal in ``indices_``; ``transform`` returns the
    selected rows, so the selector drops into pipeline code that expects the
    usual reduce-the-rows contract.
    """

    def __init__(self, n_selected: int = 50, metric: str = "euclidean"):
        self.n_selected = n_selected
        self.metric = metric

    def fit(self, X, y=None):
        self.indices_ = farthest_point_select(X, self.n_selected, self.metric)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "indices_"):
            raise NotFittedError("FarthestPointSelector is not fitted")
        return np.asarray(X, dtype=float)[self.indices_]


def top_k(records, k: int) -> list[UtilityRecord]:
    """The k highest-KL records; KL ties break on task id."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    return rank_records(records)[:k]


@dataclass(frozen=True)
class SelectionBudgets:
    """Stage sizes: raw subsample, representative set, evaluations, kept."""

    initial_pool: int = 1000
    representative: int = 50
    eval_budget: int = 25
    final: int = 10

    def __post_init__(self):
        chain = (self.final, self.eval_budget, self.representative, self.initial_pool)
        if any(v < 1 for v in chain):
            raise ValueError(f"budgets must be >= 1, got {self}")
        if not (chain[0] <= chain[1] <= chain[2] <= chain[3]):
            raise ValueError(
                "budgets must satisfy final <= eval_budget <= representative "
                f"<= initial_pool, got {self}"
            )


@dataclass(frozen=True)
class RepresentativePool:
    """Stage-one output: pool indices in farthest-point pick order."""

    indices: tuple[int, ...]


@dataclass(frozen=True)
class AuditRow:
    """One utility evaluation: acquisition round, task, KL, cumulative cost."""

    round: int
    task_id: str
    kl: float
    forward_calls: int


@dataclass(frozen=True)
class SelectionResult:
    """Everything the selection stage decided and measured."""

    selected: tuple[str, ...]
    records: tuple[UtilityRecord, ...]
    representative: RepresentativePool
    audit: tuple[AuditRow, ...]


def representative_stage(
    tasks,
    budgets: SelectionBudgets,
    rng: np.random.Generator,
    metric: str = "euclidean",
) -> tuple[list, RepresentativePool]:
    """Stage one alone: subsample the pool, then spread by farthest point.

    Shared by the utility pipeline and by baseline selectors so that every
    method ranks the same representative set when seeded identically.
    """
    tasks = list(tasks)
    if budgets.initial_pool > len(tasks):
        raise ValueError(
            f"initial_pool budget {budgets.initial_pool} exceeds pool size {len(tasks)}"
        )
    subsample = np.sort(rng.choice(len(tasks), size=budgets.initial_pool, replace=False))
    sub_tasks = [tasks[i] for i in subsample]
    embeddings = np.array([t.embedding for t in sub_tasks])
    rep_local = farthest_point_select(embeddings, budgets.representative, metric)
    representative = RepresentativePool(tuple(int(subsample[i]) for i in rep_local))
    return [sub_tasks[i] for i in rep_local], representative


def run_selection_pipeline(
    tasks,
    budgets: SelectionBudgets,
    strategy: str,
    utility_fn,
    rng: np.random.Generator,
    metric: str = "euclidean",
    schedule: AcquisitionSchedule | None = None,
    pls_components: int = 2,
    forward_counter=None,
) -> SelectionResult:
    """Subsample, spread, rank, and keep the most informative tasks.

    ``utility_fn(task) -> UtilityRecord`` is the (expensive) scorer; the
    strategy decides how many representatives it touches.  ``enumerate``
    scores all of them and requires ``eval_budget == representative``;
    ``surrogate`` follows ``schedule``, whose total must equal
    ``eval_budget``.  ``forward_counter()`` supplies the cumulative-cost
    column of the audit log.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if forward_counter is None:
        forward_counter = lambda: 0
    rep_tasks, representative = representative_stage(tasks, budgets, rng, metric)

    records: list[UtilityRecord] = []
    audit: list[AuditRow] = []

    if strategy == "enumerate":
        if budgets.eval_budget != budgets.representative:
            raise ValueError(
                "enumerate strategy scores every representative; set "
                f"eval_budget == representative (got {budgets.eval_budget} "
                f"!= {budgets.representative})"
            )
        for task in rep_tasks:
            record = utility_fn(task)
            records.append(record)
            audit.append(AuditRow(0, task.id, record.kl, int(forward_counter())))
    else:
        if schedule is None:
            raise ValueError("surrogate strategy requires an AcquisitionSchedule")
        if schedule.total != budgets.eval_budget:
            raise ValueError(
                f"schedule total {schedule.total} != eval_budget {budgets.eval_budget}"
            )
        rep_embeddings = np.array([t.embedding for t in rep_tasks])
        scored: dict[int, tuple[UtilityRecord, int]] = {}

        def oracle(idx: int) -> float:
            record = utility_fn(rep_tasks[idx])
            scored[idx] = (record, int(forward_counter()))
            return record.kl

        for ev in acquisition_loop(rep_embeddings, oracle, schedule, rng, pls_components):
            record, calls = scored[ev.index]
            records.append(record)
            audit.append(AuditRow(ev.round, record.task_id, record.kl, calls))

    kept = top_k(records, budgets.final)
    return SelectionResult(
        selected=tuple(r.task_id for r in kept),
        records=tuple(records),
        representative=representative,
        audit=tuple(audit),
    )
