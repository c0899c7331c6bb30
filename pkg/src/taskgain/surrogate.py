"""Embedding-space surrogate for expensive utility evaluations.

High-dimensional task embeddings are projected to a few supervised latent
dimensions (partial least squares), a Gaussian process with a Matern-5/2
kernel models utility over that latent space, and batched joint Thompson
sampling picks which tasks to evaluate next.  The loop spends a fixed
evaluation schedule (random initialization plus a few acquisition rounds)
instead of scoring every candidate.

Hyperparameters for the GP come from an exhaustive log-marginal-likelihood
search over a small fixed grid, which keeps refits deterministic; there is
no gradient-based kernel optimization to drift between runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import NumericalError

# Fixed hyperparameter grid for the GP marginal-likelihood search.
LENGTH_SCALE_GRID = np.geomspace(0.1, 10.0, 13)
OUTPUT_SCALE_GRID = np.geomspace(0.1, 10.0, 7)
NOISE_VAR_GRID = np.geomspace(1e-4, 1.0, 5)

# Posterior-covariance jitter escalates from here by factors of 10.
JITTER_START = 1e-10
JITTER_MAX = 1e-6

_CONST_TOL = 1e-12


def _check_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"y must be 1-D with {x.shape[0]} entries, got shape {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    return x, y


class PLSReducer(TransformerMixin, BaseEstimator):
    """Supervised linear projection to ``n_components`` latent dimensions.

    Classic NIPALS with deflation: each component's weight vector is the
    (normalized) covariance direction between the deflated inputs and the
    response, and loadings are regressions of the inputs on the scores.  The
    exposed projection ``x_rotations_`` maps centered inputs straight to the
    orthogonal score space, so ``transform`` reproduces the training scores.

    Weight signs are normalized so each component's largest-magnitude
    coordinate is positive.  Components stop early if the inputs run out of
    covariance with the response; ``n_components_`` records how many were
    actually extracted.
    """

    def __init__(self, n_components: int = 2):
        self.n_components = n_components

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, dim = X.shape
        if n < 2:
            raise ValueError("PLS needs at least 2 samples")
        if np.ptp(y) < _CONST_TOL:
            raise ValueError("response is constant; PLS is undefined")
        if not 1 <= self.n_components <= min(n - 1, dim):
            raise ValueError(
                f"n_components must be in [1, {min(n - 1, dim)}], got {self.n_components}"
            )

        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = float(y.mean())
        residual = X - self.x_mean_
        y_c = y - self.y_mean_

        weights, scores, loadings = [], [], []
        for _ in range(self.n_components):
            w = residual.T @ y_c
            w_norm = np.linalg.norm(w)
            if w_norm < _CONST_TOL:
                break
            w = w / w_norm
            flip = np.argmax(np.abs(w))
            if w[flip] < 0:
                w = -w
            t = residual @ w
            tt = float(t @ t)
            if tt < _CONST_TOL:
                break
            p = residual.T @ t / tt
            residual = residual - np.outer(t, p)
            weights.append(w)
            scores.append(t)
            loadings.append(p)

        if not weights:
            raise ValueError("inputs carry no covariance with the response")
        self.x_weights_ = np.column_stack(weights)
        self.x_loadings_ = np.column_stack(loadings)
        self.x_scores_ = np.column_stack(scores)
        self.x_rotations_ = self.x_weights_ @ np.linalg.inv(
            self.x_loadings_.T @ self.x_weights_
        )
        self.n_components_ = self.x_weights_.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "x_rotations_"):
            raise NotFittedError("PLSReducer is not fitted")
        X = np.asarray(X, dtype=float)
        return (X - self.x_mean_) @ self.x_rotations_


def pls_fit(X, y, n_components: int = 2) -> np.ndarray:
    """Fit a reducer and return its projection matrix (dim x components)."""
    return PLSReducer(n_components).fit(X, y).x_rotations_


def matern52_kernel(a, b, length_scale: float, output_scale: float) -> np.ndarray:
    """Matern kernel with smoothness 5/2 on Euclidean distances."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    scaled = np.sqrt(5.0) * cdist(a, b) / length_scale
    return output_scale * (1.0 + scaled + scaled**2 / 3.0) * np.exp(-scaled)


class MaternGP(RegressorMixin, BaseEstimator):
    """Gaussian-process regressor with a Matern-5/2 kernel.

    Hyperparameters left as ``None`` are chosen by maximizing the log
    marginal likelihood over the fixed grid (first grid point wins ties, so
    refits are deterministic).  The prior mean is the training-response
    mean, handled by centering.  Predictive variance includes the fitted
    observation noise.
    """

    def __init__(
        self,
        length_scale: float | None = None,
        output_scale: float | None = None,
        noise_var: float | None = None,
    ):
        self.length_scale = length_scale
        self.output_scale = output_scale
        self.noise_var = noise_var

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        if X.shape[0] < 2:
            raise ValueError("GP needs at least 2 observations")
        self.x_train_ = X
        self.y_mean_ = float(y.mean())
        y_c = y - self.y_mean_

        if None in (self.length_scale, self.output_scale, self.noise_var):
            chosen = self._grid_search(X, y_c)
        else:
            chosen = (self.length_scale, self.output_scale, self.noise_var)
        self.length_scale_, self.output_scale_, self.noise_var_ = chosen

        kernel = matern52_kernel(X, X, self.length_scale_, self.output_scale_)
        kernel[np.diag_indices_from(kernel)] += self.noise_var_
        try:
            self._factor = cho_factor(kernel)
        except LinAlgError:
            kernel[np.diag_indices_from(kernel)] += JITTER_START
            self._factor = cho_factor(kernel)
        self.alpha_ = cho_solve(self._factor, y_c)
        return self

    def _grid_search(self, X, y_c) -> tuple[float, float, float]:
        n = X.shape[0]
        best, best_lml = None, -np.inf
        for ls in LENGTH_SCALE_GRID if self.length_scale is None else [self.length_scale]:
            base = matern52_kernel(X, X, ls, 1.0)
            for s2 in OUTPUT_SCALE_GRID if self.output_scale is None else [self.output_scale]:
                for nv in NOISE_VAR_GRID if self.noise_var is None else [self.noise_var]:
                    kernel = s2 * base
                    kernel[np.diag_indices_from(kernel)] += nv
                    try:
                        factor = cho_factor(kernel)
                    except LinAlgError:
                        continue
                    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
                    lml = -0.5 * float(y_c @ cho_solve(factor, y_c)) - 0.5 * logdet
                    lml -= 0.5 * n * np.log(2.0 * np.pi)
                    if lml > best_lml:
                        best, best_lml = (float(ls), float(s2), float(nv)), lml
        if best is None:
            # Every grid point failed to factor; fall back to scale heuristics.
            dists = cdist(X, X)[np.triu_indices(n, 1)]
            positive = dists[dists > 0]
            ls = float(np.median(positive)) if positive.size else 1.0
            best = (ls, max(float(np.var(y_c)), 1e-8), float(NOISE_VAR_GRID[0]))
        return best

    def predict(self, X, return_cov: bool = False):
        if not hasattr(self, "alpha_"):
            raise NotFittedError("MaternGP is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cross = matern52_kernel(X, self.x_train_, self.length_scale_, self.output_scale_)
        mean = cross @ self.alpha_ + self.y_mean_
        if not return_cov:
            return mean
        prior = matern52_kernel(X, X, self.length_scale_, self.output_scale_)
        cov = prior - cross @ cho_solve(self._factor, cross.T)
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices_from(cov)] += self.noise_var_
        return mean, cov


def gp_fit(X, y) -> MaternGP:
    """Grid-searched GP fit; thin functional wrapper."""
    return MaternGP().fit(X, y)


def gp_posterior(gp: MaternGP, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance at the query points."""
    return gp.predict(X, return_cov=True)


def _stabilized_cholesky(cov: np.ndarray) -> np.ndarray:
    jitter = JITTER_START
    while True:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > JITTER_MAX:
                raise NumericalError(
                    f"posterior covariance not factorizable at jitter {JITTER_MAX:.0e}"
                ) from None


def thompson_batch(
    gp: MaternGP, candidates, batch: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of the top-``batch`` entries of one joint posterior sample.

    A single draw across all candidates keeps within-batch diversity: the
    sample's correlations, not independent marginals, decide the batch.
    Ties break toward the lower candidate index.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if not 1 <= batch <= candidates.shape[0]:
        raise ValueError(f"batch must be in [1, {candidates.shape[0]}], got {batch}")
    mean, cov = gp.predict(candidates, return_cov=True)
    sample = mean + _stabilized_cholesky(cov) @ rng.standard_normal(candidates.shape[0])
    order = np.argsort(-sample, kind="stable")
    return np.sort(order[:batch])


@dataclass(frozen=True)
class AcquisitionSchedule:
    """Evaluation budget layout: random seeding plus Thompson rounds."""

    n_init: int = 10
    rounds: int = 3
    batch: int = 5

    def __post_init__(self):
        if self.n_init < 2:
            raise ValueError(f"n_init must be >= 2, got {self.n_init}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.rounds > 0 and self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")

    @property
    def total(self) -> int:
        return self.n_init + self.rounds * self.batch


@dataclass(frozen=True)
class AcqEval:
    """One surrogate-loop evaluation: acquisition round, pool index, value."""

    round: int
    index: int
    value: float


def acquisition_loop(
    embeddings,
    oracle,
    schedule: AcquisitionSchedule,
    rng: np.random.Generator,
    pls_components: int = 2,
) -> list[AcqEval]:
    """Run the surrogate-guided evaluation loop over a candidate pool.

    ``oracle(index) -> float`` is called exactly ``schedule.total`` times,
    never twice for the same index.  Round 0 is the random initialization;
    each later round refits the projection and GP on everything observed so
    far and evaluates one Thompson batch.  If the observed values are
    constant (the projection is undefined there), the batch falls back to a
    uniform random draw from the remaining candidates.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    n = embeddings.shape[0]
    if schedule.total > n:
        raise ValueError(f"schedule needs {schedule.total} evaluations but pool has {n}")

    evals: list[AcqEval] = []
    seen: set[int] = set()

    def run_batch(round_no: int, indices) -> None:
        for idx in indices:
            idx = int(idx)
            if idx in seen:
                raise RuntimeError(f"candidate {idx} evaluated twice")
            seen.add(idx)
            evals.append(AcqEval(round_no, idx, float(oracle(idx))))

    run_batch(0, rng.choice(n, size=schedule.n_init, replace=False))
    for round_no in range(1, schedule.rounds + 1):
        observed = np.array(sorted(seen))
        remaining = np.array([i for i in range(n) if i not in seen])
        values = np.array([e.value for e in sorted(evals, key=lambda e: e.index)])
        if np.ptp(values) < _CONST_TOL:
            picks = remaining[rng.choice(remaining.size, size=schedule.batch, replace=False)]
        else:
            projection = PLSReducer(pls_components).fit(embeddings[observed], values)
            latent_obs = projection.transform(embeddings[observed])
            gp = MaternGP().fit(latent_obs, values)
            latent_remaining = projection.transform(embeddings[remaining])
            picks = remaining[thompson_batch(gp, latent_remaining, schedule.batch, rng)]
        run_batch(round_no, picks)
    return evals
