"""Ensemble Kalman inversion over graph parameters.

The engine treats the flattened edge logits as the unknown parameter, runs
the (black-box, non-differentiable) forward model on each particle, and
nudges the whole ensemble toward the target score with a damped Kalman-style
update built from empirical cross-covariances.  No gradients of the forward
model are ever needed.

Scores are cached per (task id, particle index) so that overlapping task
subsets, and repeated utility queries inside one selection round, reuse
forward evaluations instead of recomputing them.  Cache-filling streams are
derived from content keys (root seed, particle index, task id hash), which
makes results independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import simulate
from .errors import NumericalError
from .gain import UtilityRecord, diagnostics
from .seeding import derive_rng, text_key

# Condition-number ceiling for the innovation system.
COND_LIMIT = 1e12

# Jitter added to the innovation system if its Cholesky factorization fails.
CHOLESKY_JITTER = 1e-10

# Internal sub-stream tags so one root seed covers all phases of a utility query.
_TAG_ENSEMBLE = 0
_TAG_PREDICT = 1
_TAG_PERTURB = 2


@dataclass(frozen=True)
class Ensemble:
    """Immutable particle matrix, one row per ensemble member."""

    particles: np.ndarray

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=float).copy()
        if particles.ndim != 2:
            raise ValueError(f"particles must be 2-D, got shape {particles.shape}")
        if particles.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 particles")
        if not np.all(np.isfinite(particles)):
            raise ValueError("particles must be finite")
        particles.flags.writeable = False
        object.__setattr__(self, "particles", particles)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return self.particles.mean(axis=0)


@dataclass(frozen=True)
class EkiConfig:
    """Inversion hyperparameters.

    ``perturb_obs`` switches on the stochastic-observation update (target
    jittered per particle by the observation noise), which is the variant
    whose posterior spread is statistically consistent; the plain variant is
    the default and is what utility ranking uses.
    """

    ensemble_size: int = 6
    prior_std: float = 2.0
    obs_noise: float = 0.1
    damping: float = 0.7
    n_steps: int = 1
    perturb_obs: bool = False
    full_covariance_kl: bool = False

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError(f"ensemble_size must be >= 2, got {self.ensemble_size}")
        if self.prior_std <= 0:
            raise ValueError("prior_std must be > 0")
        if self.obs_noise <= 0:
            raise ValueError("obs_noise must be > 0")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")


class ScoreCache:
    """Map (task id, particle index) -> score, counting distinct fills.

    ``forward_calls`` counts fills only; hits never increment it, and a key
    can be filled once, which keeps the counter equal to the number of
    forward-model executions routed through the cache.
    """

    def __init__(self):
        self._scores: dict[tuple[str, int], np.ndarray | float] = {}
        self.forward_calls = 0

    def __len__(self) -> int:
        return len(self._scores)

    def has(self, task_id: str, particle: int) -> bool:
        return (task_id, particle) in self._scores

    def get(self, task_id: str, particle: int):
        try:
            return self._scores[(task_id, particle)]
        except KeyError:
            raise KeyError(
                f"no cached score for task {task_id!r}, particle {particle}; "
                "run predict over this ensemble first"
            ) from None

    def put(self, task_id: str, particle: int, score) -> None:
        key = (task_id, particle)
        if key in self._scores:
            raise ValueError(f"cache key {key} filled twice")
        self._scores[key] = score
        self.forward_calls += 1

    def save(self, path) -> None:
        """Persist as line-delimited (task id, particle index, score) rows."""
        lines = []
        for (task_id, particle), score in sorted(self._scores.items()):
            flat = ",".join(repr(float(v)) for v in np.atleast_1d(score))
            lines.append(f"{task_id}\t{particle}\t{flat}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ScoreCache":
        cache = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            task_id, particle, flat = line.split("\t")
            values = [float(v) for v in flat.split(",")]
            cache.put(task_id, int(particle), values[0] if len(values) == 1 else np.array(values))
        return cache


def draw_prior_ensemble(
    center: np.ndarray, cfg: EkiConfig, rng: np.random.Generator
) -> Ensemble:
    """Isotropic Gaussian cloud around the current parameter vector."""
    center = np.asarray(center, dtype=float)
    if center.ndim != 1:
        raise ValueError("center must be a 1-D parameter vector")
    noise = rng.normal(0.0, cfg.prior_std, size=(cfg.ensemble_size, center.size))
    return Ensemble(center[None, :] + noise)


def predict(
    ensemble: Ensemble,
    tasks,
    forward,
    cache: ScoreCache,
    seed: int,
) -> np.ndarray:
    """Forward-evaluate every (task, particle) pair, through the cache.

    Pairs already cached are reused verbatim.  Fresh pairs get their own
    generator derived from (seed, particle, task id), so the resulting
    matrix does not depend on iteration order or on what was cached before.

    Returns
    -------
    scores : ndarray, shape (ensemble.size, total score dim)
        Columns grouped by task, in the given task order.
    """
    blocks = []
    for task in tasks:
        key = text_key(task.id)
        column = []
        for j in range(ensemble.size):
            if not cache.has(task.id, j):
                rng = derive_rng(seed, _TAG_PREDICT, j, key)
                cache.put(task.id, j, forward.score_flat(task, ensemble.particles[j], rng))
            column.append(np.atleast_1d(cache.get(task.id, j)))
        blocks.append(np.asarray(column, dtype=float))
    return np.hstack(blocks)


def covariances(ensemble: Ensemble, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased empirical parameter-score and score-score covariances.

    Returns
    -------
    (C_zl, C_ll) : ndarrays, shapes (dim, m) and (m, m)
        Both divided by ``ensemble.size - 1``.
    """
    scores = _as_score_matrix(scores, ensemble.size)
    centered_z = ensemble.particles - ensemble.particles.mean(axis=0)
    centered_l = scores - scores.mean(axis=0)
    denom = ensemble.size - 1
    return centered_z.T @ centered_l / denom, centered_l.T @ centered_l / denom


def _as_score_matrix(scores, n_rows: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    if scores.ndim != 2 or scores.shape[0] != n_rows:
        raise ValueError(f"scores must have {n_rows} rows, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores


def update(
    ensemble: Ensemble,
    scores: np.ndarray,
    target,
    obs_noise: float,
    damping: float,
    rng: np.random.Generator | None = None,
    perturb: bool = False,
) -> Ensemble:
    """One damped Kalman-style assimilation step.

    Each particle moves by ``damping * C_zl @ solve(C_ll + noise*I,
    target - score_j)``.  The innovation system is solved by Cholesky (with
    one jitter retry), never by forming an inverse.  With ``perturb`` the
    target is jittered per particle by N(0, obs_noise), which needs ``rng``.
    """
    scores = _as_score_matrix(scores, ensemble.size)
    m = scores.shape[1]
    target = np.broadcast_to(np.atleast_1d(np.asarray(target, dtype=float)), (m,))
    if obs_noise <= 0:
        raise ValueError("obs_noise must be > 0")
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must be in (0, 1], got {damping}")

    c_zl, c_ll = covariances(ensemble, scores)
    system = c_ll + obs_noise * np.eye(m)
    cond = np.linalg.cond(system)
    if cond > COND_LIMIT:
        raise NumericalError(
            f"innovation system condition number {cond:.3e} exceeds {COND_LIMIT:.0e}"
        )
    innovation = target[None, :] - scores
    if perturb:
        if rng is None:
            raise ValueError("perturb=True requires an rng")
        innovation = innovation + rng.normal(0.0, np.sqrt(obs_noise), size=innovation.shape)
    try:
        factor = cho_factor(system)
    except LinAlgError:
        factor = cho_factor(system + CHOLESKY_JITTER * np.eye(m))
    shift = damping * (c_zl @ cho_solve(factor, innovation.T)).T
    return Ensemble(ensemble.particles + shift)


def one_step_utility(
    task,
    center: np.ndarray,
    forward,
    cfg: EkiConfig,
    seed: int,
    cache: ScoreCache | None = None,
    ensemble: Ensemble | None = None,
) -> UtilityRecord:
    """Utility of one candidate task: KL moved by assimilating its scores.

    With ``ensemble``/``cache`` provided (the shared-reuse path), the prior
    cloud and any previously filled scores are reused; otherwise a fresh
    cloud is drawn from ``center``.  Multi-step configs re-predict from the
    moved ensemble with fresh draws each step; only the first step can use
    the shared cache, because its keys identify particles of the original
    cloud.
    """
    if ensemble is None:
        ensemble = draw_prior_ensemble(center, cfg, derive_rng(seed, _TAG_ENSEMBLE))
    if cache is None:
        cache = ScoreCache()
    target = simulate.target_score(task.score_mode)

    current = ensemble
    first_scores = None
    for step in range(cfg.n_steps):
        step_cache = cache if step == 0 else ScoreCache()
        scores = predict(current, [task], forward, step_cache, _step_seed(seed, step))
        if step == 0:
            first_scores = scores
        rng = derive_rng(seed, _TAG_PERTURB, step, text_key(task.id)) if cfg.perturb_obs else None
        current = update(
            current,
            scores,
            target,
            cfg.obs_noise,
            cfg.damping,
            rng=rng,
            perturb=cfg.perturb_obs,
        )
    return diagnostics(
        task.id,
        ensemble.particles,
        current.particles,
        first_scores,
        full_covariance=cfg.full_covariance_kl,
    )


def _step_seed(seed: int, step: int) -> int:
    # Step 0 keeps the raw seed so shared-cache keys line up across tasks.
    if step == 0:
        return seed
    return int(np.random.SeedSequence([seed, 997, step]).generate_state(1, np.uint64)[0])


def batch_update(
    ensemble: Ensemble,
    tasks,
    cache: ScoreCache,
    cfg: EkiConfig,
    rng: np.random.Generator | None = None,
) -> Ensemble:
    """Joint assimilation of a task subset from cached scores only.

    Stacks the cached score vectors task-major into one pseudo-observation
    per particle and applies a single update against the stacked targets.
    Every (task, particle) pair must already be cached; nothing is computed
    here, which is what makes subset enumeration cheap.
    """
    if not tasks:
        raise ValueError("empty task subset")
    blocks = []
    targets = []
    for task in tasks:
        column = [np.atleast_1d(cache.get(task.id, j)) for j in range(ensemble.size)]
        block = np.asarray(column, dtype=float)
        blocks.append(block)
        targets.extend([simulate.target_score(task.score_mode)] * block.shape[1])
    scores = np.hstack(blocks)
    return update(
        ensemble,
        scores,
        np.array(targets),
        cfg.obs_noise,
        cfg.damping,
        rng=rng,
        perturb=cfg.perturb_obs,
    )


def stack_multi_objective(per_objective_scores, weights) -> np.ndarray:
    """Weighted column stack of per-objective score vectors.

    Component order follows the argument order: column ``i`` is
    ``weights[i] * per_objective_scores[i]``.  Used to build vector
    pseudo-observations from several scoring functions of one rollout.
    """
    weights = np.asarray(weights, dtype=float)
    columns = [np.asarray(s, dtype=float) for s in per_objective_scores]
    if len(columns) != weights.size or weights.size == 0:
        raise ValueError("need one weight per objective")
    if any(c.shape != columns[0].shape or c.ndim != 1 for c in columns):
        raise ValueError("objective score vectors must share one 1-D shape")
    return np.column_stack(columns) * weights[None, :]


def stack_multi_objective_target(targets, weights) -> np.ndarray:
    """Targets stacked consistently with :func:`stack_multi_objective`."""
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if targets.shape != weights.shape or targets.ndim != 1:
        raise ValueError("targets and weights must be matching 1-D arrays")
    return targets * weights


# ---------------------------------------------------------------------------
# Kalman gain identities (linear-Gaussian reference algebra)

def kalman_gain(c_zz: np.ndarray, g: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Covariance-form gain ``C G^T (G C G^T + Gamma)^{-1}`` via a solve."""
    c_zz, g, gamma = (np.asarray(a, dtype=float) for a in (c_zz, g, gamma))
    system = g @ c_zz @ g.T + gamma
    return np.linalg.solve(system.T, (c_zz @ g.T).T).T


def kalman_gain_information(c_zz: np.ndarray, g: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Information-form gain ``(C^{-1} + G^T Gamma^{-1} G)^{-1} G^T Gamma^{-1}``.

    Algebraically identical to :func:`kalman_gain` for SPD inputs; kept as
    an independent implementation so the identity can be checked numerically.
    """
    c_zz, g, gamma = (np.asarray(a, dtype=float) for a in (c_zz, g, gamma))
    gamma_inv_g = np.linalg.solve(gamma, g)
    information = np.linalg.inv(c_zz) + g.T @ gamma_inv_g
    return np.linalg.solve(information, gamma_inv_g.T)
