"""Information-gain scoring of ensemble updates.

A task's utility is how far one assimilation step moves the parameter
ensemble, measured as the KL divergence from the posterior ensemble's
Gaussian approximation to the prior's.  Alongside the KL, a few cheaper
diagnostics are recorded: predictive score variance, cosine similarity of
the ensemble means, and the posterior variance mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Empirical variances are floored before entering any ratio or log.
VARIANCE_FLOOR = 1e-8

# Mean vectors shorter than this are treated as directionless.
COSINE_NORM_FLOOR = 1e-12

_RECORD_FIELDS = ("task_id", "kl", "pred_var", "cosine", "var_sum")


@dataclass(frozen=True)
class UtilityRecord:
    """Scored utility of one candidate task."""

    task_id: str
    kl: float
    pred_var: float
    cosine: float
    var_sum: float

    def __post_init__(self):
        for name in ("kl", "pred_var", "cosine", "var_sum"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("kl", "pred_var", "var_sum"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not np.isfinite(self.cosine) or not -1.0 <= self.cosine <= 1.0:
            raise ValueError(f"cosine must lie in [-1, 1], got {self.cosine}")


def _moments(particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if particles.ndim != 2 or particles.shape[0] < 2:
        raise ValueError("need a 2-D particle matrix with at least 2 rows")
    mean = particles.mean(axis=0)
    var = np.maximum(particles.var(axis=0, ddof=1), VARIANCE_FLOOR)
    return mean, var


def kl_diag_gauss(prior: np.ndarray, posterior: np.ndarray) -> float:
    """KL(posterior || prior) between diagonal Gaussian moment matches.

    Per coordinate, with empirical means ``mu`` and floored unbiased
    variances ``s2``::

        ln(s_prior / s_post)
        + (s2_post + (mu_post - mu_prior)**2) / (2 * s2_prior)
        - 1/2

    Always finite thanks to the variance floor, and non-negative up to
    roundoff; identical ensembles give exactly zero.
    """
    prior = np.asarray(prior, dtype=float)
    posterior = np.asarray(posterior, dtype=float)
    if prior.shape[1] != posterior.shape[1]:
        raise ValueError("prior and posterior dimensions differ")
    mu_p, var_p = _moments(prior)
    mu_q, var_q = _moments(posterior)
    terms = (
        0.5 * np.log(var_p / var_q)
        + (var_q + (mu_q - mu_p) ** 2) / (2.0 * var_p)
        - 0.5
    )
    return float(max(np.sum(terms), 0.0))


def kl_full_gauss(prior: np.ndarray, posterior: np.ndarray) -> float:
    """Full-covariance Gaussian KL(posterior || prior).

    Only meaningful when the ensemble size exceeds the parameter dimension;
    covariances are regularized by the variance floor on the diagonal.
    """
    prior = np.asarray(prior, dtype=float)
    posterior = np.asarray(posterior, dtype=float)
    if prior.shape[1] != posterior.shape[1]:
        raise ValueError("prior and posterior dimensions differ")
    dim = prior.shape[1]
    if prior.shape[0] <= dim or posterior.shape[0] <= dim:
        raise ValueError(
            "full-covariance KL needs more particles than dimensions; "
            "use kl_diag_gauss instead"
        )
    mu_p = prior.mean(axis=0)
    mu_q = posterior.mean(axis=0)
    cov_p = np.cov(prior, rowvar=False, ddof=1) + VARIANCE_FLOOR * np.eye(dim)
    cov_q = np.cov(posterior, rowvar=False, ddof=1) + VARIANCE_FLOOR * np.eye(dim)
    delta = mu_q - mu_p
    solved = np.linalg.solve(cov_p, cov_q)
    quad = float(delta @ np.linalg.solve(cov_p, delta))
    _, logdet_p = np.linalg.slogdet(cov_p)
    _, logdet_q = np.linalg.slogdet(cov_q)
    kl = 0.5 * (np.trace(solved) + quad - dim + logdet_p - logdet_q)
    return float(max(kl, 0.0))


def predictive_variance(scores: np.ndarray) -> float:
    """Unbiased variance of predicted scores; summed over components."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[0] == 1:
        scores = scores.T
    if scores.shape[0] < 2:
        raise ValueError("need at least 2 score rows")
    return float(np.sum(scores.var(axis=0, ddof=1)))


def mean_shift_cosine(prior: np.ndarray, posterior: np.ndarray) -> float:
    """Cosine similarity of the two ensemble mean vectors; 0 when degenerate."""
    mu_p = np.asarray(prior, dtype=float).mean(axis=0)
    mu_q = np.asarray(posterior, dtype=float).mean(axis=0)
    norm_p = np.linalg.norm(mu_p)
    norm_q = np.linalg.norm(mu_q)
    if norm_p < COSINE_NORM_FLOOR or norm_q < COSINE_NORM_FLOOR:
        return 0.0
    return float(np.clip(mu_p @ mu_q / (norm_p * norm_q), -1.0, 1.0))


def diagnostics(
    task_id: str,
    prior: np.ndarray,
    posterior: np.ndarray,
    scores: np.ndarray,
    full_covariance: bool = False,
) -> UtilityRecord:
    """Bundle the KL utility and its companion diagnostics for one task."""
    kl = kl_full_gauss(prior, posterior) if full_covariance else kl_diag_gauss(prior, posterior)
    post = np.asarray(posterior, dtype=float)
    var_sum = float(np.sum(post.var(axis=0, ddof=1)))
    return UtilityRecord(
        task_id=task_id,
        kl=kl,
        pred_var=predictive_variance(scores),
        cosine=mean_shift_cosine(prior, posterior),
        var_sum=var_sum,
    )


def rank_records(records) -> list[UtilityRecord]:
    """Sort by KL descending; ties break on task id so ranking is stable."""
    return sorted(records, key=lambda r: (-r.kl, r.task_id))


def write_records(records, path) -> None:
    """One tab-delimited row per task under a header line."""
    lines = ["\t".join(_RECORD_FIELDS)]
    for r in records:
        lines.append(
            "\t".join([r.task_id, repr(r.kl), repr(r.pred_var), repr(r.cosine), repr(r.var_sum)])
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path) -> list[UtilityRecord]:
    """Read rows written by :func:`write_records`."""
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != _RECORD_FIELDS:
        raise ValueError(f"{path}: missing or malformed header")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        task_id, kl, pred_var, cosine, var_sum = line.split("\t")
        records.append(
            UtilityRecord(task_id, float(kl), float(pred_var), float(cosine), float(var_sum))
        )
    return records
