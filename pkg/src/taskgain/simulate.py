"""Synthetic multi-agent execution model.

A team of agents forms an initial per-agent belief about a task's correct
answer, exchanges beliefs along a sampled communication mask for a fixed
number of rounds, and a final read-out turns the pooled beliefs into a
success probability ``g``.  Some agents are adversarial ("fake"): their
initial belief is inverted and they negate whatever they aggregate, so the
team does better when edges out of fake agents are pruned.

All belief mixing happens in logit space.  Agent ``j``'s round update is a
convex combination of its own previous logit (weight ``own_weight``) and the
incoming messages (equal shares of the rest): spatial messages carry the
sender's belief from the current round, which is well-defined because the
spatial graph is a DAG walked in agent order, and temporal messages carry
beliefs from the previous round.  An agent with no incoming messages keeps
its belief unchanged, so isolated agents are a fixed point of the dynamics.

Tasks score in one of two modes: ``log_prob`` rewards ``ln g`` (target 0),
``zero_one`` rewards a Bernoulli(``g``) draw (target 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .graph import (
    GraphLogits,
    CommMask,
    enumerate_masks,
    grad_log_prob,
    mask_log_prob,
    sample_mask,
    unflatten,
)

SCORE_MODES = ("log_prob", "zero_one")

# Beliefs are clamped away from {0, 1} so logits stay finite.
BELIEF_FLOOR = 1e-6


@dataclass(frozen=True)
class TaskRecord:
    """One task: identity, embedding, and scoring contract.

    ``difficulty`` in [0, 1] controls how far initial beliefs sit from the
    truth (0 = everyone confident, 1 = everyone at chance).  ``truth`` is the
    binary reference label; the simulator tracks belief in the correct answer
    directly, so ``truth`` does not enter the dynamics.
    """

    id: str
    embedding: np.ndarray
    truth: int
    difficulty: float
    score_mode: str = "log_prob"

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=float)
        if emb.ndim != 1 or emb.size == 0:
            raise ValueError(f"embedding must be a non-empty 1-D array, got shape {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise ValueError(f"task {self.id}: embedding has non-finite entries")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"task {self.id}: difficulty {self.difficulty} outside [0, 1]")
        if self.truth not in (0, 1):
            raise ValueError(f"task {self.id}: truth must be 0 or 1, got {self.truth}")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"task {self.id}: unknown score_mode {self.score_mode!r}")
        emb = emb.copy()
        emb.flags.writeable = False
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "truth", int(self.truth))
        object.__setattr__(self, "difficulty", float(self.difficulty))


@dataclass(frozen=True)
class AgentProfile:
    """Behavioral parameters of one agent."""

    reliability: float
    is_fake: bool = False

    def __post_init__(self):
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError(f"reliability {self.reliability} outside [0, 1]")


@dataclass(frozen=True)
class SimConfig:
    """Simulator knobs.

    ``belief_noise`` is the standard deviation of the Gaussian perturbation
    on initial beliefs; zero makes the whole rollout deterministic given the
    mask.  ``own_weight`` is the weight an agent keeps on its own previous
    belief when messages arrive.
    """

    n_agents: int = 6
    n_fake: int = 3
    n_rounds: int = 2
    belief_noise: float = 0.05
    own_weight: float = 0.5

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        if not 0 <= self.n_fake <= self.n_agents:
            raise ValueError(f"n_fake {self.n_fake} outside [0, {self.n_agents}]")
        if self.n_rounds < 1:
            raise ValueError(f"n_rounds must be >= 1, got {self.n_rounds}")
        if self.belief_noise < 0:
            raise ValueError("belief_noise must be >= 0")
        if not 0.0 <= self.own_weight <= 1.0:
            raise ValueError(f"own_weight {self.own_weight} outside [0, 1]")


def default_profiles(cfg: SimConfig, reliability: float = 0.9) -> tuple[AgentProfile, ...]:
    """Uniform-reliability team with the fake agents at the low indices.

    Spatial edges only run from lower to higher agent index, so placing the
    fakes first is what gives them spatial influence over honest agents.
    """
    return tuple(
        AgentProfile(reliability, is_fake=(i < cfg.n_fake)) for i in range(cfg.n_agents)
    )


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def rollout(
    task: TaskRecord,
    mask: CommMask,
    profiles: tuple[AgentProfile, ...],
    cfg: SimConfig,
    rng: np.random.Generator | None = None,
) -> float:
    """Execute the team once under a fixed mask; return success probability.

    Deterministic whenever ``cfg.belief_noise == 0`` (``rng`` may then be
    omitted).  With noise on, consumes exactly ``n_agents`` normal draws.
    """
    n = cfg.n_agents
    if len(profiles) != n:
        raise ValueError(f"expected {n} profiles, got {len(profiles)}")
    if mask.n_agents != n:
        raise ValueError(f"mask is for {mask.n_agents} agents, config says {n}")

    rel = np.array([p.reliability for p in profiles])
    fake = np.array([p.is_fake for p in profiles])
    d = task.difficulty
    base = rel * (1.0 - d) + 0.5 * d
    if cfg.belief_noise > 0:
        if rng is None:
            raise ValueError("belief_noise > 0 requires an rng")
        base = base + rng.normal(0.0, cfg.belief_noise, size=n)
    belief = np.clip(base, BELIEF_FLOOR, 1.0 - BELIEF_FLOOR)
    belief = np.where(fake, 1.0 - belief, belief)

    w0 = cfg.own_weight
    cur = _logit(belief)
    for rnd in range(cfg.n_rounds):
        new = cur.copy()
        for j in range(n):
            msgs = [new[i] for i in np.flatnonzero(mask.spatial[:, j])]
            if rnd > 0:
                msgs.extend(cur[i] for i in np.flatnonzero(mask.temporal[:, j]))
            if msgs:
                agg = w0 * cur[j] + (1.0 - w0) * float(np.mean(msgs))
                new[j] = -agg if fake[j] else agg
        cur = new
    return float(expit(np.mean(cur)))


def evaluate(
    g: float, task: TaskRecord, rng: np.random.Generator | None = None
) -> float:
    """Turn a success probability into the task's score.

    ``log_prob`` mode returns ``ln g``; ``zero_one`` mode draws a
    Bernoulli(``g``) outcome from ``rng`` (one uniform).
    """
    if not 0.0 < g < 1.0:
        raise ValueError(f"success probability must be in (0, 1), got {g}")
    if task.score_mode == "log_prob":
        return float(np.log(g))
    if rng is None:
        raise ValueError("zero_one scoring requires an rng")
    return 1.0 if rng.random() < g else 0.0


def target_score(score_mode: str) -> float:
    """Ideal observed score for a mode: perfect log-likelihood or sure success."""
    if score_mode == "log_prob":
        return 0.0
    if score_mode == "zero_one":
        return 1.0
    raise ValueError(f"unknown score_mode {score_mode!r}")


def exact_expected_score(
    task: TaskRecord,
    logits: GraphLogits,
    profiles: tuple[AgentProfile, ...],
    cfg: SimConfig,
) -> float:
    """Exact expectation of the score over the mask distribution.

    Sums ``p(mask) * E[score | mask]`` over every mask; the per-mask score
    expectation is ``ln g`` in log_prob mode and ``g`` itself in zero_one
    mode.  Requires ``belief_noise == 0`` and is guarded against teams with
    more than a handful of trainable edges (the sum has 2**k terms).
    """
    if cfg.belief_noise != 0:
        raise ValueError("exact enumeration requires belief_noise == 0")
    total = 0.0
    for mask in enumerate_masks(logits.n_agents):
        g = rollout(task, mask, profiles, cfg)
        per_mask = np.log(g) if task.score_mode == "log_prob" else g
        total += np.exp(mask_log_prob(logits, mask)) * per_mask
    return float(total)


class ForwardModel:
    """Callable bundle: sample a mask, run the team, score the outcome.

    Binds the agent profiles and simulator config so callers only hand over
    a task, graph logits, and a generator.  Counts every execution in
    ``calls`` for budget-parity accounting.
    """

    def __init__(self, profiles: tuple[AgentProfile, ...], cfg: SimConfig):
        if len(profiles) != cfg.n_agents:
            raise ValueError(f"expected {cfg.n_agents} profiles, got {len(profiles)}")
        self.profiles = tuple(profiles)
        self.cfg = cfg
        self.calls = 0

    @property
    def n_agents(self) -> int:
        return self.cfg.n_agents

    def score(self, task: TaskRecord, logits: GraphLogits, rng: np.random.Generator) -> float:
        self.calls += 1
        mask = sample_mask(logits, rng)
        g = rollout(task, mask, self.profiles, self.cfg, rng)
        return evaluate(g, task, rng)

    def score_flat(self, task: TaskRecord, flat: np.ndarray, rng: np.random.Generator) -> float:
        """Score with logits given as a flattened parameter vector."""
        return self.score(task, unflatten(flat, self.cfg.n_agents), rng)

    def score_and_grad(
        self, task: TaskRecord, logits: GraphLogits, rng: np.random.Generator
    ) -> tuple[float, np.ndarray]:
        """One score sample plus the mask's score-function gradient.

        The gradient is taken at the sampled mask, so
        ``score * grad`` is the single-sample policy-gradient estimate.
        """
        self.calls += 1
        mask = sample_mask(logits, rng)
        g = rollout(task, mask, self.profiles, self.cfg, rng)
        return evaluate(g, task, rng), grad_log_prob(logits, mask)


# ---------------------------------------------------------------------------
# Task pools

def write_pool(tasks, path) -> None:
    """Write tasks as tab-delimited lines.

    Field order per line: id, score_mode, truth, difficulty, then the
    embedding coordinates.  That order is the file contract.
    """
    lines = []
    for t in tasks:
        fields = [t.id, t.score_mode, str(t.truth), repr(t.difficulty)]
        fields.extend(repr(float(v)) for v in t.embedding)
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pool(path) -> list[TaskRecord]:
    """Read a pool written by :func:`write_pool`."""
    tasks = []
    dim = None
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 5:
            raise ValueError(f"{path}:{ln}: expected at least 5 fields, got {len(fields)}")
        emb = np.array([float(v) for v in fields[4:]])
        if dim is None:
            dim = emb.size
        elif emb.size != dim:
            raise ValueError(f"{path}:{ln}: embedding dim {emb.size} != {dim}")
        tasks.append(
            TaskRecord(
                id=fields[0],
                score_mode=fields[1],
                truth=int(fields[2]),
                difficulty=float(fields[3]),
                embedding=emb,
            )
        )
    if not tasks:
        raise ValueError(f"empty task pool: {path}")
    return tasks


def make_pool(
    n_tasks: int,
    embed_dim: int = 8,
    seed: int = 0,
    score_mode: str = "log_prob",
    difficulty_range: tuple[float, float] = (0.0, 1.0),
    difficulty_scale: float = 6.0,
    prefix: str = "task",
) -> list[TaskRecord]:
    """Generate a synthetic pool with a learnable utility landscape.

    Difficulty is drawn uniformly from ``difficulty_range`` and written,
    scaled, onto one fixed direction of the embedding space (the rest is
    isotropic noise), then the whole cloud is rotated by a seed-fixed
    orthogonal matrix.  Informativeness in this simulator falls off with
    difficulty, so utility is a smooth function of the embedding, which is
    what embedding-based stages are supposed to exploit.
    """
    if n_tasks < 1:
        raise ValueError(f"n_tasks must be >= 1, got {n_tasks}")
    lo, hi = difficulty_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"difficulty_range {difficulty_range} outside [0, 1]")
    rng = np.random.default_rng(seed)
    rotation, _ = np.linalg.qr(rng.normal(size=(embed_dim, embed_dim)))
    difficulty = rng.uniform(lo, hi, size=n_tasks)
    raw = rng.normal(size=(n_tasks, embed_dim))
    raw[:, 0] = (difficulty - 0.5 * (lo + hi)) * difficulty_scale
    emb = raw @ rotation.T
    truth = rng.integers(0, 2, size=n_tasks)
    width = max(4, len(str(n_tasks - 1)))
    return [
        TaskRecord(
            id=f"{prefix}-{i:0{width}d}",
            embedding=emb[i],
            truth=int(truth[i]),
            difficulty=float(difficulty[i]),
            score_mode=score_mode,
        )
        for i in range(n_tasks)
    ]
