"""Gaussian process machinery on patristic distances.

The covariance between two taxa is a decaying exponential in their path
distance, ``sigma_f^2 * exp(-d / ell)``, plus independent observation
noise ``sigma_n^2`` on tip diagonal entries.  All solves go through a
Cholesky factorization with an adaptive diagonal jitter ladder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import IllConditionedKernelError

# jitter ladder, as fractions of the mean kernel diagonal
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GammaVector:
    """Hyperparameters of one scalar trait's evolution.

    ``sigma_f`` scales the heritable (tree-structured) variation, ``ell``
    is its patristic correlation length, and ``sigma_n`` scales the
    independent tip noise.  ``ell`` must be given exactly when
    ``sigma_f`` is positive; with ``sigma_f`` zero there is nothing for a
    length scale to describe and it must be ``None``.
    """

    sigma_f: float
    ell: float | None
    sigma_n: float

    def __post_init__(self):
        if self.sigma_f < 0 or self.sigma_n < 0:
            raise ValueError("sigma_f and sigma_n must be non-negative")
        if self.sigma_f == 0 and self.sigma_n == 0:
            raise ValueError("sigma_f and sigma_n cannot both be zero")
        if self.sigma_f > 0:
            if self.ell is None or not self.ell > 0:
                raise ValueError("ell must be positive when sigma_f > 0")
        elif self.ell is not None:
            raise ValueError("ell is meaningless when sigma_f == 0")

    def as_dict(self) -> dict:
        return {"sigma_f": self.sigma_f, "ell": self.ell, "sigma_n": self.sigma_n}


@dataclass
class KernelMatrix:
    """A covariance matrix plus the jitter its factorization needed."""

    values: np.ndarray
    jitter_applied: float = 0.0


@dataclass
class GaussianPosterior:
    """Joint Gaussian over query nodes: mean vector and covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.covariance), 0.0, None)


def heritable_covariance(distances: np.ndarray, gamma: GammaVector) -> np.ndarray:
    """Tree-structured covariance only, no observation noise.

    Accepts rectangular distance blocks, e.g. query rows against training
    columns.
    """
    d = np.asarray(distances, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    if gamma.sigma_f == 0:
        return np.zeros_like(d)
    return gamma.sigma_f ** 2 * np.exp(-d / gamma.ell)


def ou_covariance(distances: np.ndarray, gamma: GammaVector,
                  tip_flags: np.ndarray | None = None) -> KernelMatrix:
    """Covariance among observed taxa.

    ``distances`` must be square and symmetric with a zero diagonal.
    Observation noise is added on the diagonal for taxa flagged as tips;
    by default every taxon is a tip.
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(d, d.T, atol=1e-12):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.abs(np.diag(d)) > 1e-12):
        raise ValueError("distance matrix must have a zero diagonal")
    k = heritable_covariance(d, gamma)
    if tip_flags is None:
        flags = np.ones(d.shape[0], dtype=bool)
    else:
        flags = np.asarray(tip_flags, dtype=bool)
        if flags.shape != (d.shape[0],):
            raise ValueError("tip_flags length must match the distance matrix")
    k = k + np.diag(np.where(flags, gamma.sigma_n ** 2, 0.0))
    return KernelMatrix(values=k)


def cholesky_with_jitter(kernel: KernelMatrix) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter only when needed.

    Jitter starts at 1e-10 of the mean diagonal and grows tenfold up to
    1e-4 of it; the amount actually used is recorded on ``kernel``.
    Raises :class:`IllConditionedKernelError` when even the largest
    jitter leaves the matrix indefinite.
    """
    k = kernel.values
    scale = float(np.mean(np.diag(k)))
    if not np.isfinite(scale) or scale <= 0:
        raise IllConditionedKernelError("kernel diagonal is not positive")
    jitter = 0.0
    while True:
        try:
            target = k if jitter == 0.0 else k + jitter * np.eye(k.shape[0])
            low = np.linalg.cholesky(target)
            kernel.jitter_applied = jitter
            return low
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = _JITTER_START * scale
            else:
                jitter *= 10.0
            if jitter > _JITTER_MAX * scale:
                raise IllConditionedKernelError(
                    "kernel not positive definite even after maximum jitter"
                ) from None


def log_marginal_likelihood(observations: np.ndarray, kernel: KernelMatrix) -> float:
    """Log density of the observations under a zero-mean Gaussian."""
    y = np.asarray(observations, dtype=float).ravel()
    n = y.shape[0]
    if kernel.values.shape != (n, n):
        raise ValueError("kernel and observation sizes disagree")
    low = cholesky_with_jitter(kernel)
    alpha = solve_triangular(low, y, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    return -0.5 * float(alpha @ alpha) - 0.5 * logdet - 0.5 * n * _LOG_2PI


def gp_posterior(train_distances: np.ndarray,
                 cross_distances: np.ndarray,
                 query_distances: np.ndarray,
                 observations: np.ndarray,
                 gamma: GammaVector,
                 train_tip_flags: np.ndarray | None = None,
                 query_tip_flags: np.ndarray | None = None) -> GaussianPosterior:
    """Posterior of the heritable signal at query nodes given tip values.

    ``cross_distances`` holds query rows against training columns.  Query
    nodes are always treated as unobserved ancestors: no observation
    noise enters their prior variance or the cross covariance, so the
    posterior describes the noise-free signal there.  ``query_tip_flags``
    is accepted for symmetry with the training side and only checked for
    shape; it never adds noise.
    """
    y = np.asarray(observations, dtype=float).ravel()
    n = y.shape[0]
    cross = np.asarray(cross_distances, dtype=float)
    if cross.ndim != 2 or cross.shape[1] != n:
        raise ValueError("cross distance block must be (n_query, n_train)")
    m = cross.shape[0]
    qd = np.asarray(query_distances, dtype=float)
    if qd.shape != (m, m):
        raise ValueError("query distance matrix must be square and match the cross block")
    if query_tip_flags is not None and np.asarray(query_tip_flags).shape != (m,):
        raise ValueError("query_tip_flags length must match the query block")

    kernel = ou_covariance(train_distances, gamma, train_tip_flags)
    if kernel.values.shape != (n, n):
        raise ValueError("training kernel and observation sizes disagree")
    low = cholesky_with_jitter(kernel)

    k_cross = heritable_covariance(cross, gamma)
    k_query = heritable_covariance(qd, gamma)

    alpha = cho_solve((low, True), y)
    mean = k_cross @ alpha
    v = solve_triangular(low, k_cross.T, lower=True)
    cov = k_query - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(mean=mean, covariance=cov)
