"""Antithetic Gaussian-smoothing (ES) and Guided ES gradient estimators.

Guided ES draws perturbations from ``n * Sigma`` with

    Sigma = alpha/n * I + (1 - alpha)/k * U U^T

so that an empty subspace (alpha treated as 1) reproduces plain ES draw for
draw.  With a non-empty subspace the estimator targets ``n * Sigma @ grad``,
not ``grad``: directions inside the subspace are amplified and the rest
damped, which is where the variance reduction comes from.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from ._validation import check_random_state, check_vector
from .exceptions import ConfigError, ContractError, NumericError, ShapeError

ORTHO_TOL = 1e-8


@dataclass
class EsConfig:
    sigma: float = 0.01
    num_pairs: int = 8
    alpha: float = 0.5
    k: int = 10

    def __post_init__(self):
        if not np.all(np.asarray(self.sigma) > 0):
            raise ConfigError(f"must be > 0, got {self.sigma}", key="sigma")
        if int(self.num_pairs) != self.num_pairs or self.num_pairs < 1:
            raise ConfigError(f"must be an integer >= 1, got {self.num_pairs}", key="num_pairs")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.alpha}", key="alpha")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"must be an integer >= 1, got {self.k}", key="k")

    @classmethod
    def for_dimension(cls, n, **overrides):
        """Defaults scaled to the design dimension."""
        params = dict(sigma=0.01, num_pairs=max(8, n // 4), alpha=0.5, k=min(10, n))
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)


@dataclass
class GesState:
    dim: int
    k: int
    history: deque = None
    basis: np.ndarray = None

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.k)
        if self.basis is None:
            self.basis = np.zeros((self.dim, 0))

    @property
    def rank(self):
        return self.basis.shape[1]


def _evaluate_pairs(f, xi, perturbations, executor=None):
    points = []
    for d in perturbations:
        points.append(xi + d)
        points.append(xi - d)
    values = list(executor.map(f, points)) if executor is not None else [f(p) for p in points]
    values = np.asarray(values, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = bad[0]
        sign = "+" if i % 2 == 0 else "-"
        raise NumericError(
            f"objective returned {values[i]} at perturbation {sign}{perturbations[i // 2].tolist()} (pair {i // 2})"
        )
    return values[0::2], values[1::2]


def _antithetic_estimate(f, xi, eps, sigma, executor):
    plus, minus = _evaluate_pairs(f, xi, sigma * eps, executor)
    return ((plus - minus)[:, None] * eps).sum(axis=0) / (2.0 * np.asarray(sigma) * eps.shape[0])


def es_gradient(f, xi, sigma, num_pairs, seed=None, executor=None):
    """Antithetic estimate of the Gaussian-smoothed gradient of ``f`` at ``xi``.

    ``f`` is called exactly ``2 * num_pairs`` times.
    """
    xi = check_vector(xi, name="xi")
    if not np.all(np.asarray(sigma) > 0):
        raise ConfigError(f"must be > 0, got {sigma}", key="sigma")
    if num_pairs < 1:
        raise ConfigError(f"must be >= 1, got {num_pairs}", key="num_pairs")
    rng = check_random_state(seed)
    eps = rng.standard_normal((num_pairs, xi.size))
    return _antithetic_estimate(f, xi, eps, sigma, executor)


def check_orthonormal(basis):
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2:
        raise ContractError(f"basis must be a matrix, got shape {basis.shape}")
    r = basis.shape[1]
    if r and np.max(np.abs(basis.T @ basis - np.eye(r))) > ORTHO_TOL:
        raise ContractError("subspace basis is not column-orthonormal")
    return basis


def ges_covariance(basis, alpha, n, k=None):
    """Sampling factor ``A`` (``n x (n + r)``) with ``A @ A.T == Sigma``.

    ``k`` defaults to the number of basis columns; with an empty basis the
    full-space weight is forced to 1.
    """
    basis = check_orthonormal(basis)
    if basis.shape[0] != n:
        raise ShapeError(f"basis has {basis.shape[0]} rows, design dimension is {n}")
    r = basis.shape[1]
    k = r if k is None else k
    if r != k:
        raise ContractError(f"basis has {r} columns but k={k}")
    if r == 0:
        return np.sqrt(1.0 / n) * np.eye(n)
    return np.hstack([np.sqrt(alpha / n) * np.eye(n), np.sqrt((1.0 - alpha) / k) * basis])


def ges_sigma_matrix(basis, alpha, n):
    a = ges_covariance(basis, alpha, n)
    return a @ a.T


def subspace_update(state, new_grad, k=None):
    """Push ``new_grad`` into the history and re-orthonormalize it in place."""
    g = check_vector(new_grad, name="new_grad")
    if g.size != state.dim:
        raise ContractError(f"gradient has dimension {g.size}, state expects {state.dim}")
    if k is not None and k != state.history.maxlen:
        state.history = deque(state.history, maxlen=k)
        state.k = k
    state.history.append(g.copy())
    cols = []
    for v in state.history:
        w = v.copy()
        # two passes of modified Gram-Schmidt keep U^T U = I to ~1e-15
        for _ in range(2):
            for q in cols:
                w -= (q @ w) * q
        norm = np.linalg.norm(w)
        if norm < 1e-12 or norm <= 1e-10 * np.linalg.norm(v):
            continue
        cols.append(w / norm)
    state.basis = np.column_stack(cols) if cols else np.zeros((state.dim, 0))
    return state


def ges_gradient(f, xi, config, state, seed=None, executor=None):
    """Guided ES estimate; appends it to ``state`` as the next surrogate gradient."""
    xi = check_vector(xi, name="xi")
    n = xi.size
    if state.dim != n:
        raise ContractError(f"state dimension {state.dim} does not match design dimension {n}")
    rng = check_random_state(seed)
    if state.rank:
        a = ges_covariance(state.basis, config.alpha, n)
        z = rng.standard_normal((config.num_pairs, a.shape[1]))
        eps = np.sqrt(n) * z @ a.T
    else:
        # isotropic fallback, drawn exactly as es_gradient does
        eps = rng.standard_normal((config.num_pairs, n))
    grad = _antithetic_estimate(f, xi, eps, config.sigma, executor)
    subspace_update(state, grad)
    return grad
