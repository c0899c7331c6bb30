"""Trainable communication-graph model.

A team of ``n`` agents communicates through two directed edge sets: spatial
edges inside a round, restricted to ``i -> j`` with ``i < j`` under the fixed
agent order, and temporal edges from one round to the next, allowed between
any ordered pair including self-loops.  Each edge carries an independent
Bernoulli gate whose on-probability is the logistic transform of a trainable
logit.  Keeping the spatial logits strictly upper triangular makes every
sampled within-round graph a DAG, so execution order never has to be solved
for.

Trainable entries flatten into a single parameter vector in a fixed order:
the spatial upper triangle row-major, then the full temporal matrix
row-major.  That order is part of the sampling and checkpoint contracts.
Non-trainable spatial positions (diagonal and below) are pinned to
``PINNED_OFF`` and report edge probability zero no matter what is stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

# Sentinel logit for positions that can never carry an edge.
PINNED_OFF = -np.inf

# Enumeration guard: 2**k masks get out of hand quickly.
MAX_ENUM_EDGES = 20


def trainable_size(n_agents: int) -> int:
    """Number of trainable logits for a team of ``n_agents``."""
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    return n_agents * (n_agents - 1) // 2 + n_agents * n_agents


def spatial_pairs(n_agents: int) -> list[tuple[int, int]]:
    """Row-major (i, j) pairs with i < j, the trainable spatial positions."""
    return [(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)]


def _as_square(arr, n_agents: int, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    if out.shape != (n_agents, n_agents):
        raise ValueError(
            f"{name} must have shape ({n_agents}, {n_agents}), got {out.shape}"
        )
    return out.copy()


@dataclass(frozen=True)
class GraphLogits:
    """Immutable edge-logit matrices for one communication graph.

    Attributes
    ----------
    n_agents : int
        Team size.
    spatial : ndarray, shape (n, n)
        Within-round edge logits.  Only the strict upper triangle is
        trainable; other positions are pinned off.
    temporal : ndarray, shape (n, n)
        Across-round edge logits.  Fully trainable, diagonal included.
    """

    n_agents: int
    spatial: np.ndarray
    temporal: np.ndarray

    def __post_init__(self):
        n = self.n_agents
        spatial = _as_square(self.spatial, n, "spatial")
        temporal = _as_square(self.temporal, n, "temporal")
        spatial[np.tril_indices(n)] = PINNED_OFF
        if not np.all(np.isfinite(spatial[np.triu_indices(n, 1)])):
            raise ValueError("trainable spatial logits must be finite")
        if not np.all(np.isfinite(temporal)):
            raise ValueError("temporal logits must be finite")
        spatial.flags.writeable = False
        temporal.flags.writeable = False
        object.__setattr__(self, "spatial", spatial)
        object.__setattr__(self, "temporal", temporal)

    @property
    def size(self) -> int:
        """Length of the flattened trainable parameter vector."""
        return trainable_size(self.n_agents)

    @staticmethod
    def zeros(n_agents: int) -> "GraphLogits":
        """All trainable logits zero: every edge probability 1/2."""
        z = np.zeros((n_agents, n_agents))
        return GraphLogits(n_agents, z, z)


@dataclass(frozen=True)
class CommMask:
    """One sampled binary communication graph.

    Entries may be 1 only where the corresponding logit is trainable, so the
    spatial mask is always strictly upper triangular.
    """

    n_agents: int
    spatial: np.ndarray
    temporal: np.ndarray

    def __post_init__(self):
        n = self.n_agents
        spatial = _as_square(self.spatial, n, "spatial").astype(np.int8)
        temporal = _as_square(self.temporal, n, "temporal").astype(np.int8)
        for name, arr in (("spatial", spatial), ("temporal", temporal)):
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} mask entries must be 0 or 1")
        if spatial[np.tril_indices(n)].any():
            raise ValueError("spatial mask has an edge at a pinned-off position")
        spatial.flags.writeable = False
        temporal.flags.writeable = False
        object.__setattr__(self, "spatial", spatial)
        object.__setattr__(self, "temporal", temporal)


def flatten(logits: GraphLogits) -> np.ndarray:
    """Trainable entries as one vector, spatial triangle first."""
    n = logits.n_agents
    return np.concatenate(
        [logits.spatial[np.triu_indices(n, 1)], logits.temporal.ravel()]
    )


def unflatten(flat, n_agents: int) -> GraphLogits:
    """Inverse of :func:`flatten`."""
    flat = np.asarray(flat, dtype=float)
    d = trainable_size(n_agents)
    if flat.shape != (d,):
        raise ValueError(f"expected {d} entries for n_agents={n_agents}, got {flat.shape}")
    n_sp = n_agents * (n_agents - 1) // 2
    spatial = np.full((n_agents, n_agents), PINNED_OFF)
    spatial[np.triu_indices(n_agents, 1)] = flat[:n_sp]
    temporal = flat[n_sp:].reshape(n_agents, n_agents)
    return GraphLogits(n_agents, spatial, temporal)


def mask_flatten(mask: CommMask) -> np.ndarray:
    """Mask entries in the flattened trainable order."""
    n = mask.n_agents
    return np.concatenate(
        [mask.spatial[np.triu_indices(n, 1)], mask.temporal.ravel()]
    ).astype(float)


def mask_unflatten(flat, n_agents: int) -> CommMask:
    """Inverse of :func:`mask_flatten`."""
    flat = np.asarray(flat)
    d = trainable_size(n_agents)
    if flat.shape != (d,):
        raise ValueError(f"expected {d} entries for n_agents={n_agents}, got {flat.shape}")
    n_sp = n_agents * (n_agents - 1) // 2
    spatial = np.zeros((n_agents, n_agents))
    spatial[np.triu_indices(n_agents, 1)] = flat[:n_sp]
    temporal = flat[n_sp:].reshape(n_agents, n_agents)
    return CommMask(n_agents, spatial, temporal)


def edge_probs(logits: GraphLogits) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge on-probabilities ``sigmoid(logit)``.

    Returns
    -------
    (p_spatial, p_temporal) : ndarray pair, each (n, n)
        Non-trainable spatial positions are exactly zero regardless of the
        stored value.
    """
    p_spatial = expit(logits.spatial)
    p_spatial[np.tril_indices(logits.n_agents)] = 0.0
    return p_spatial, expit(logits.temporal)


def sample_mask(logits: GraphLogits, rng: np.random.Generator) -> CommMask:
    """Draw one Bernoulli mask.

    Consumes exactly ``logits.size`` uniforms in flattened order (spatial
    upper triangle row-major, then temporal row-major), so samples are
    reproducible from the generator state alone.
    """
    flat = flatten(logits)
    draws = rng.random(flat.shape[0])
    return mask_unflatten((draws < expit(flat)).astype(np.int8), logits.n_agents)


def mask_log_prob(logits: GraphLogits, mask: CommMask) -> float:
    """Log-probability of ``mask`` under independent Bernoulli gates.

    Computed as ``sum_e a_e * log(p_e) + (1 - a_e) * log(1 - p_e)`` over the
    trainable entries only, in log-sigmoid form so saturated logits do not
    overflow.
    """
    if mask.n_agents != logits.n_agents:
        raise ValueError("mask and logits have different team sizes")
    z = flatten(logits)
    a = mask_flatten(mask)
    return float(np.sum(a * log_expit(z) + (1.0 - a) * log_expit(-z)))


def grad_log_prob(logits: GraphLogits, mask: CommMask) -> np.ndarray:
    """Gradient of :func:`mask_log_prob` in the flattened order.

    For a Bernoulli gate the score function is ``a_e - sigmoid(z_e)``
    coordinate-wise.
    """
    if mask.n_agents != logits.n_agents:
        raise ValueError("mask and logits have different team sizes")
    return mask_flatten(mask) - expit(flatten(logits))


def enumerate_masks(n_agents: int):
    """Yield every possible mask for a team, in flat binary-counting order.

    The first flattened edge is the least significant bit.  Guarded to
    ``MAX_ENUM_EDGES`` trainable edges (2**20 masks) to keep exhaustive
    enumeration honest about its cost.
    """
    k = trainable_size(n_agents)
    if k > MAX_ENUM_EDGES:
        raise ValueError(
            f"enumeration over 2**{k} masks refused (limit 2**{MAX_ENUM_EDGES})"
        )
    bit = np.arange(k)
    for code in range(1 << k):
        yield mask_unflatten((code >> bit) & 1, n_agents)


def save_checkpoint(logits: GraphLogits, path) -> None:
    """Write logits as line-delimited decimal text.

    First line records the team size; then one trainable entry per line in
    flattened order, printed with full round-trip precision.
    """
    lines = [f"n_agents\t{logits.n_agents}"]
    lines.extend(repr(float(v)) for v in flatten(logits))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> GraphLogits:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ValueError(f"empty checkpoint file: {path}")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "n_agents":
        raise ValueError(f"malformed checkpoint header: {lines[0]!r}")
    n_agents = int(head[1])
    values = np.array([float(s) for s in lines[1:]])
    return unflatten(values, n_agents)
