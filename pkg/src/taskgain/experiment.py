"""End-to-end experiment orchestration.

One run is: build (or load) a task pool, select training tasks with the
configured method, train the edge logits on them with matched budgets, and
evaluate the trained graph on a held-out task set.  Runs are isolated: each
derives its own seeds, and a run that raises is recorded as a failed row
instead of aborting the sweep.

Also hosts the sensitivity suites (ensemble size, inversion steps), which
reuse the same utility ranking machinery on small freshly drawn pools.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, eki, simulate
from .gain import UtilityRecord
from .graph import GraphLogits, edge_probs, flatten
from .selection import (
    METRICS,
    STRATEGIES,
    SelectionBudgets,
    SelectionResult,
    representative_stage,
    run_selection_pipeline,
    top_k,
)
from .seeding import derive_int, derive_rng, text_key
from .surrogate import AcquisitionSchedule
from .training import TrainSchedule, train

METHODS = (
    "active_eki",
    "random",
    "no_train",
    "egl",
    "emc",
    "fisher_trace",
    "fisher_det",
)

# Entropy tags: one per phase, so phase streams never collide.
_TAG_POOL = 11
_TAG_EVAL_POOL = 12
_TAG_ENSEMBLE = 13
_TAG_SELECT = 14
_TAG_PIPELINE = 15
_TAG_TRAIN = 16
_TAG_EVAL = 17
_TAG_SCORE = 18
_TAG_SENS_POOL = 19
_TAG_SENS_RANK = 20

# Rollouts per task each baseline scorer spends, fixing budget parity.
BASELINE_SAMPLES = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; INI files map onto this."""

    method: str = "active_eki"
    seed: int = 0
    runs: int = 20
    pool_size: int = 1000
    pool_file: str | None = None
    eval_file: str | None = None
    embed_dim: int = 8
    score_mode: str = "log_prob"
    eval_tasks: int = 40
    eval_masks: int = 8
    reliability: float = 0.9
    sim: simulate.SimConfig = field(default_factory=simulate.SimConfig)
    eki: eki.EkiConfig = field(default_factory=eki.EkiConfig)
    budgets: SelectionBudgets = field(default_factory=SelectionBudgets)
    schedule: AcquisitionSchedule = field(default_factory=AcquisitionSchedule)
    strategy: str = "surrogate"
    metric: str = "euclidean"
    pls_components: int = 2
    repetitions: int = 2
    samples_per_step: int = 1
    train_lr: float = 0.1
    use_baseline: bool = False
    baseline_decay: float = 0.9
    init_logit: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if self.score_mode not in simulate.SCORE_MODES:
            raise ValueError(f"unknown score_mode {self.score_mode!r}")
        if self.eval_tasks < 1 or self.eval_masks < 1:
            raise ValueError("eval_tasks and eval_masks must be >= 1")
        if self.pool_file is None and self.pool_size < self.budgets.initial_pool:
            raise ValueError(
                f"pool_size {self.pool_size} smaller than the initial_pool "
                f"budget {self.budgets.initial_pool}"
            )
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.strategy == "surrogate" and self.schedule.total != self.budgets.eval_budget:
            raise ValueError(
                f"surrogate schedule total {self.schedule.total} != eval_budget "
                f"{self.budgets.eval_budget}"
            )
        if self.strategy == "enumerate" and self.budgets.eval_budget != self.budgets.representative:
            raise ValueError(
                "enumerate strategy requires eval_budget == representative, got "
                f"{self.budgets.eval_budget} != {self.budgets.representative}"
            )
        if self.pls_components < 1:
            raise ValueError("pls_components must be >= 1")
        if self.repetitions < 1 or self.samples_per_step < 1:
            raise ValueError("repetitions and samples_per_step must be >= 1")
        if self.train_lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError(f"baseline_decay must be in [0, 1), got {self.baseline_decay}")
        if not np.isfinite(self.init_logit):
            raise ValueError(f"init_logit must be finite, got {self.init_logit}")


@dataclass(frozen=True)
class RunResult:
    """Outcome of one seeded run (or its failure)."""

    method: str
    run: int
    selected: tuple[str, ...]
    eval_score: float
    select_calls: int
    train_calls: int
    eval_calls: int
    fake_edge_prob_start: float
    fake_edge_prob_end: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def fake_edge_influence(logits: GraphLogits, profiles) -> float:
    """Mean on-probability of spatial edges from fake into honest agents."""
    p_spatial, _ = edge_probs(logits)
    fake = np.array([p.is_fake for p in profiles])
    probs = [
        p_spatial[i, j]
        for i in range(logits.n_agents)
        for j in range(i + 1, logits.n_agents)
        if fake[i] and not fake[j]
    ]
    return float(np.mean(probs)) if probs else float("nan")


def initial_logits(cfg: ExperimentConfig) -> GraphLogits:
    """Starting graph for a run: every trainable logit at ``init_logit``.

    Zero keeps every edge at probability 1/2; a positive value starts the
    team densely connected, which is the regime where pruning damage from
    adversarial agents shows up.
    """
    n = cfg.sim.n_agents
    fill = np.full((n, n), cfg.init_logit)
    return GraphLogits(n, fill, fill)


def _load_pools(cfg: ExperimentConfig, run: int):
    if cfg.pool_file is not None:
        pool = simulate.read_pool(cfg.pool_file)
    else:
        pool = simulate.make_pool(
            cfg.pool_size,
            embed_dim=cfg.embed_dim,
            seed=derive_int(cfg.seed, run, _TAG_POOL),
            score_mode=cfg.score_mode,
        )
    if cfg.eval_file is not None:
        eval_pool = simulate.read_pool(cfg.eval_file)
    else:
        eval_pool = simulate.make_pool(
            cfg.eval_tasks,
            embed_dim=cfg.embed_dim,
            seed=derive_int(cfg.seed, run, _TAG_EVAL_POOL),
            score_mode=cfg.score_mode,
            prefix="eval",
        )
    return pool, eval_pool


def _select_active(cfg, pool, model, run) -> SelectionResult:
    center = flatten(initial_logits(cfg))
    ensemble = eki.draw_prior_ensemble(
        center, cfg.eki, derive_rng(cfg.seed, run, _TAG_ENSEMBLE)
    )
    cache = eki.ScoreCache()
    sel_seed = derive_int(cfg.seed, run, _TAG_SELECT)

    def utility_fn(task) -> UtilityRecord:
        return eki.one_step_utility(
            task, center, model, cfg.eki, sel_seed, cache=cache, ensemble=ensemble
        )

    return run_selection_pipeline(
        pool,
        cfg.budgets,
        cfg.strategy,
        utility_fn,
        derive_rng(cfg.seed, run, _TAG_PIPELINE),
        metric=cfg.metric,
        schedule=cfg.schedule,
        pls_components=cfg.pls_components,
        forward_counter=lambda: model.calls,
    )


def _select_baseline(cfg, pool, model, run) -> tuple[str, ...]:
    logits = initial_logits(cfg)
    rep_tasks, _ = representative_stage(
        pool, cfg.budgets, derive_rng(cfg.seed, run, _TAG_PIPELINE), cfg.metric
    )

    def task_rng(task):
        return derive_rng(cfg.seed, run, _TAG_SCORE, text_key(task.id))

    k = cfg.budgets.final
    if cfg.method in ("egl", "emc"):
        if cfg.method == "egl":
            scores = [
                baselines.egl_score(t, model, logits, task_rng(t), BASELINE_SAMPLES)
                for t in rep_tasks
            ]
        else:
            scores = [
                baselines.emc_score(t, model, logits, task_rng(t), steps=BASELINE_SAMPLES)
                for t in rep_tasks
            ]
        order = sorted(zip(scores, (t.id for t in rep_tasks)), key=lambda sv: (-sv[0], sv[1]))
        return tuple(tid for _, tid in order[:k])
    criterion = "trace" if cfg.method == "fisher_trace" else "det"
    matrices = [
        baselines.fisher_matrix(t, model, logits, task_rng(t), BASELINE_SAMPLES)
        for t in rep_tasks
    ]
    picked = baselines.fisher_greedy(matrices, k, criterion=criterion)
    return tuple(rep_tasks[i].id for i in picked)


def _select(cfg, pool, model, run) -> tuple[tuple[str, ...], SelectionResult | None]:
    if cfg.method == "active_eki":
        result = _select_active(cfg, pool, model, run)
        return result.selected, result
    if cfg.method == "random":
        rng = derive_rng(cfg.seed, run, _TAG_PIPELINE)
        idx = rng.choice(len(pool), size=cfg.budgets.final, replace=False)
        return tuple(pool[i].id for i in idx), None
    if cfg.method == "no_train":
        return (), None
    return _select_baseline(cfg, pool, model, run), None


@dataclass(frozen=True)
class SelectOutcome:
    """Selection phase of one run, kept around for inspection or training."""

    selected: tuple[str, ...]
    result: SelectionResult | None
    select_calls: int
    pool: tuple
    model: simulate.ForwardModel


def select_once(cfg: ExperimentConfig, run: int = 0) -> SelectOutcome:
    """Run just the selection phase of run ``run``."""
    pool, _ = _load_pools(cfg, run)
    profiles = simulate.default_profiles(cfg.sim, cfg.reliability)
    model = simulate.ForwardModel(profiles, cfg.sim)
    mark = model.calls
    selected, result = _select(cfg, pool, model, run)
    return SelectOutcome(selected, result, model.calls - mark, tuple(pool), model)


@dataclass(frozen=True)
class TrainOutcome:
    """Selection plus training of one run."""

    logits: GraphLogits
    trace: tuple
    selection: SelectOutcome
    train_calls: int


def train_once(cfg: ExperimentConfig, run: int = 0) -> TrainOutcome:
    """Run the selection and training phases of run ``run``."""
    selection = select_once(cfg, run)
    model = selection.model
    logits = initial_logits(cfg)
    mark = model.calls
    trace: tuple = ()
    if selection.selected:
        schedule = TrainSchedule(
            selection.selected,
            repetitions=cfg.repetitions,
            samples_per_step=cfg.samples_per_step,
            lr=cfg.train_lr,
            use_baseline=cfg.use_baseline,
            baseline_decay=cfg.baseline_decay,
        )
        logits, rows = train(
            logits, schedule, selection.pool, model, derive_rng(cfg.seed, run, _TAG_TRAIN)
        )
        trace = tuple(rows)
    return TrainOutcome(logits, trace, selection, model.calls - mark)


def _single_run(cfg: ExperimentConfig, run: int) -> RunResult:
    pool, eval_pool = _load_pools(cfg, run)
    profiles = simulate.default_profiles(cfg.sim, cfg.reliability)
    model = simulate.ForwardModel(profiles, cfg.sim)
    logits = initial_logits(cfg)
    start_influence = fake_edge_influence(logits, profiles)

    mark = model.calls
    selected, _ = _select(cfg, pool, model, run)
    select_calls = model.calls - mark

    trained = logits
    mark = model.calls
    if selected:
        schedule = TrainSchedule(
            selected,
            repetitions=cfg.repetitions,
            samples_per_step=cfg.samples_per_step,
            lr=cfg.train_lr,
            use_baseline=cfg.use_baseline,
            baseline_decay=cfg.baseline_decay,
        )
        trained, _ = train(
            logits, schedule, pool, model, derive_rng(cfg.seed, run, _TAG_TRAIN)
        )
    train_calls = model.calls - mark

    mark = model.calls
    eval_score = evaluate_logits(
        trained, eval_pool, model, derive_rng(cfg.seed, run, _TAG_EVAL), cfg.eval_masks
    )
    eval_calls = model.calls - mark

    return RunResult(
        method=cfg.method,
        run=run,
        selected=selected,
        eval_score=eval_score,
        select_calls=select_calls,
        train_calls=train_calls,
        eval_calls=eval_calls,
        fake_edge_prob_start=start_influence,
        fake_edge_prob_end=fake_edge_influence(trained, profiles),
    )


def evaluate_logits(
    logits: GraphLogits,
    tasks,
    model,
    rng: np.random.Generator,
    n_masks: int = 8,
) -> float:
    """Mean score over tasks, each averaged over freshly sampled masks."""
    if n_masks < 1:
        raise ValueError(f"n_masks must be >= 1, got {n_masks}")
    per_task = [
        np.mean([model.score(task, logits, rng) for _ in range(n_masks)])
        for task in tasks
    ]
    return float(np.mean(per_task))


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    """All runs for one method; failures isolate into error rows."""
    results = []
    for run in range(cfg.runs):
        try:
            results.append(_single_run(cfg, run))
        except Exception as exc:  # noqa: BLE001 - seed isolation is the contract
            results.append(
                RunResult(
                    method=cfg.method,
                    run=run,
                    selected=(),
                    eval_score=float("nan"),
                    select_calls=0,
                    train_calls=0,
                    eval_calls=0,
                    fake_edge_prob_start=float("nan"),
                    fake_edge_prob_end=float("nan"),
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return results


def compare_methods(cfg: ExperimentConfig, methods) -> dict[str, list[RunResult]]:
    """Run several methods under one config; shared seeds, same pools."""
    out: dict[str, list[RunResult]] = {}
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {method!r}")
        out[method] = run_experiment(replace(cfg, method=method))
    return out


# ---------------------------------------------------------------------------
# Sensitivity suites

@dataclass(frozen=True)
class SensitivityRow:
    """Overlap of one setting's top picks against the reference ranking."""

    label: str
    mean_overlap: float
    std_overlap: float


def _rank_top_ids(cfg, tasks, model, ensemble, cache, sel_seed, n_steps: int) -> set[str]:
    eki_cfg = replace(cfg.eki, ensemble_size=ensemble.size, n_steps=n_steps)
    center = flatten(initial_logits(cfg))
    records = [
        eki.one_step_utility(
            task, center, model, eki_cfg, sel_seed, cache=cache, ensemble=ensemble
        )
        for task in tasks
    ]
    return {r.task_id for r in top_k(records, cfg.budgets.final)}


def sensitivity_suite(
    kind: str,
    cfg: ExperimentConfig,
    reps: int = 9,
    ensemble_sizes: tuple[int, ...] = (2, 4, 6, 10, 16),
    reference_size: int = 20,
    steps_pair: tuple[int, int] = (1, 3),
) -> list[SensitivityRow]:
    """Ranking-stability report for ensemble size or inversion depth.

    Each repetition draws a fresh representative-scale pool and one master
    particle cloud; every setting ranks with a prefix of that cloud and a
    shared score cache, so settings differ only in how many particles (or
    inversion steps) they use, never in the draws themselves.  Overlap of
    each setting's top picks with the reference (the large ensemble, or the
    single-step ranking) is averaged over repetitions.  The
    ``ensemble_size`` report appends the chance-level row (final budget over
    pool size).
    """
    if kind not in ("ensemble_size", "eki_steps"):
        raise ValueError(f"kind must be 'ensemble_size' or 'eki_steps', got {kind!r}")
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")

    profiles = simulate.default_profiles(cfg.sim, cfg.reliability)
    k = cfg.budgets.final
    n_pool = cfg.budgets.representative
    center = flatten(initial_logits(cfg))

    overlaps: dict[str, list[float]] = {}
    for rep in range(reps):
        tasks = simulate.make_pool(
            n_pool,
            embed_dim=cfg.embed_dim,
            seed=derive_int(cfg.seed, rep, _TAG_SENS_POOL),
            score_mode=cfg.score_mode,
            prefix=f"sens{rep}",
        )
        model = simulate.ForwardModel(profiles, cfg.sim)
        master_size = (
            max(reference_size, *ensemble_sizes)
            if kind == "ensemble_size"
            else cfg.eki.ensemble_size
        )
        master = eki.draw_prior_ensemble(
            center,
            replace(cfg.eki, ensemble_size=master_size),
            derive_rng(cfg.seed, rep, _TAG_SENS_RANK),
        )
        cache = eki.ScoreCache()
        sel_seed = derive_int(cfg.seed, rep, _TAG_SENS_RANK, 1)

        def prefix(size: int) -> eki.Ensemble:
            return eki.Ensemble(master.particles[:size])

        if kind == "ensemble_size":
            reference = _rank_top_ids(
                cfg, tasks, model, prefix(reference_size), cache, sel_seed, cfg.eki.n_steps
            )
            for size in ensemble_sizes:
                top = _rank_top_ids(
                    cfg, tasks, model, prefix(size), cache, sel_seed, cfg.eki.n_steps
                )
                overlaps.setdefault(f"J={size}", []).append(len(top & reference) / k)
        else:
            first = _rank_top_ids(cfg, tasks, model, master, cache, sel_seed, steps_pair[0])
            second = _rank_top_ids(cfg, tasks, model, master, cache, sel_seed, steps_pair[1])
            label = f"steps={steps_pair[0]}_vs_{steps_pair[1]}"
            overlaps.setdefault(label, []).append(len(first & second) / k)

    rows = [
        SensitivityRow(label, float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
        for label, vals in overlaps.items()
    ]
    if kind == "ensemble_size":
        rows.append(SensitivityRow("random", k / n_pool, 0.0))
    return rows
