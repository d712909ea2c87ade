"""Basis recovery from observed curves.

PCA compresses the curves to a few score directions; ICA then rotates the
retained scores so the recovered blend coefficients are as statistically
independent as possible under a third plus fourth cumulant contrast.
PCA alone is forced to return orthogonal curve shapes, which the true
blend curves generally are not; the extra rotation removes that
restriction while preserving the span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError
from .simulate import BasisSet, FunctionalDataset

# eigenvalues this far below the leading one are numerical zeros
_SPECTRUM_RTOL = 1e-12

ICA_MAX_ITER = 500
ICA_TOL = 1e-8
# optimized contrast below this multiple of its pure-noise expectation
# (30k/n) is indistinguishable from Gaussian coefficients
_LOW_CONFIDENCE_FACTOR = 5.0


@dataclass
class PcaResult:
    """Centered principal component decomposition of a dataset.

    ``components`` rows are orthonormal curve directions, ``scores`` are
    the centered data projected on them, ``eigenvalues`` the per-direction
    sample variances, descending.  Directions with numerically zero
    variance are dropped.
    """

    components: np.ndarray
    scores: np.ndarray
    eigenvalues: np.ndarray
    mean_curve: np.ndarray

    def reconstruct(self, k: int | None = None) -> np.ndarray:
        """Data approximation using the first ``k`` directions (all by default)."""
        if k is None:
            k = self.components.shape[0]
        return self.mean_curve + self.scores[:, :k] @ self.components[:k]


@dataclass
class IcaResult:
    """Rotation of whitened scores toward independent coefficients.

    ``sources`` are the recovered coefficient rows (unit variance).
    ``rotation`` is orthogonal and acts on whitened scores;
    ``whitening`` maps centered scores to whitened scores, so
    ``sources = rotation @ whitening @ scores.T``.
    """

    rotation: np.ndarray
    whitening: np.ndarray
    sources: np.ndarray
    contrast: float
    converged: bool
    low_confidence: bool
    n_iter: int

    @property
    def unmixing(self) -> np.ndarray:
        """Combined map from centered scores to sources."""
        return self.rotation @ self.whitening


@dataclass
class IpcaResult:
    """Recovered basis and blend coefficients for a dataset."""

    k: int
    basis_hat: BasisSet
    mixing_hat: np.ndarray
    mean_curve: np.ndarray
    taxa: list[str]
    pca: PcaResult
    ica: IcaResult


class DimensionPolicy:
    """Chooses how many score directions to keep."""


@dataclass(frozen=True)
class VarianceThreshold(DimensionPolicy):
    """Smallest k whose leading eigenvalues reach a fraction of total variance."""

    fraction: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


@dataclass(frozen=True)
class FixedDimension(DimensionPolicy):
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


def pca(data: FunctionalDataset) -> PcaResult:
    """SVD principal components of the centered curves."""
    x = data.traits
    if x.shape[0] < 2:
        raise ValueError("need at least two taxa")
    mean_curve = x.mean(axis=0)
    centered = x - mean_curve
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    eig = s ** 2 / (x.shape[0] - 1)
    keep = eig > _SPECTRUM_RTOL * eig[0] if eig.size and eig[0] > 0 else np.zeros(eig.size, bool)
    m = int(np.sum(keep))
    return PcaResult(components=vt[:m], scores=u[:, :m] * s[:m],
                     eigenvalues=eig[:m], mean_curve=mean_curve)


def select_dimension(eigenvalues: np.ndarray, policy: DimensionPolicy) -> int:
    """Number of directions to keep under the given policy."""
    eig = np.asarray(eigenvalues, dtype=float)
    if eig.size == 0 or not eig.sum() > 0:
        raise DegenerateDataError("degenerate data: empty variance spectrum")
    if np.any(np.diff(eig) > 1e-12 * eig[0]):
        raise ValueError("eigenvalues must be sorted descending")
    if isinstance(policy, FixedDimension):
        if policy.k > eig.size:
            raise ValueError(f"k={policy.k} exceeds the spectrum size {eig.size}")
        return policy.k
    if isinstance(policy, VarianceThreshold):
        frac = np.cumsum(eig) / eig.sum()
        return int(np.searchsorted(frac, policy.fraction - 1e-12) + 1)
    raise TypeError(f"unknown policy {policy!r}")


def _sym_orthogonalize(w: np.ndarray) -> np.ndarray:
    # nearest orthogonal matrix in Frobenius norm
    u, _, vt = np.linalg.svd(w)
    return u @ vt


def _contrast(y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    # y rows are candidate sources; returns J, third and excess fourth cumulants
    k3 = np.mean(y ** 3, axis=1)
    k4 = np.mean(y ** 4, axis=1) - 3.0
    return float(np.sum(k3 ** 2 + k4 ** 2)), k3, k4


def ica(scores: np.ndarray, seed: int = 0, max_iter: int = ICA_MAX_ITER,
        tol: float = ICA_TOL) -> IcaResult:
    """Cumulant-contrast ICA on PCA scores.

    Scores are whitened internally, then an orthogonal rotation is found
    by a symmetric fixed-point iteration that increases the summed squared
    third and excess fourth cumulants of the candidate sources.  The
    rotation update uses the adaptive nonlinearity 3*k3*y^2 + 4*k4*y^3,
    whose fixed points are the independent directions for both skewed and
    kurtotic sources.  Iteration stops when the largest row realignment
    drops below ``tol`` or after ``max_iter`` sweeps; in the latter case
    the best iterate by contrast is returned with ``converged`` False.

    With one retained direction there is nothing to rotate: the source is
    the standardized score and the rotation is the identity.
    """
    x = np.atleast_2d(np.asarray(scores, dtype=float))
    n, k = x.shape
    if n < 4:
        raise ValueError("need at least four rows to estimate cumulants")
    x = x - x.mean(axis=0)

    cov = x.T @ x / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    if np.any(evals <= 1e-12 * max(evals.max(), 1e-300)):
        raise DegenerateDataError("degenerate data: scores are rank deficient")
    whitening = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    z = x @ whitening  # n x k, identity sample covariance

    null_contrast = 30.0 * k / n

    if k == 1:
        y = z.T
        j, _, _ = _contrast(y)
        return IcaResult(rotation=np.eye(1), whitening=whitening, sources=y,
                         contrast=j, converged=True,
                         low_confidence=j < _LOW_CONFIDENCE_FACTOR * null_contrast,
                         n_iter=0)

    rng = np.random.default_rng(seed)
    rot = _sym_orthogonalize(rng.standard_normal((k, k)))

    best_rot = rot
    best_j = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y = rot @ z.T
        j, k3, k4 = _contrast(y)
        if j > best_j:
            best_j, best_rot = j, rot
        g = 3.0 * k3[:, None] * y ** 2 + 4.0 * k4[:, None] * y ** 3
        gprime = 6.0 * k3 * np.mean(y, axis=1) + 12.0 * k4 * np.mean(y ** 2, axis=1)
        new = g @ z / n - gprime[:, None] * rot
        norms = np.linalg.norm(new, axis=1)
        dead = norms < 1e-12
        if np.any(dead):
            new[dead] = rot[dead]
        new = _sym_orthogonalize(new)
        # rows may flip sign freely; measure realignment up to sign
        agreement = np.abs(np.sum(new * rot, axis=1))
        rot = new
        if np.max(1.0 - agreement) < tol:
            converged = True
            break

    if converged:
        final_rot = rot
        final_j, _, _ = _contrast(final_rot @ z.T)
        if final_j < best_j:  # keep the better iterate either way
            final_rot, final_j = best_rot, best_j
    else:
        final_rot, final_j = best_rot, best_j

    sources = final_rot @ z.T
    return IcaResult(rotation=final_rot, whitening=whitening, sources=sources,
                     contrast=final_j, converged=converged,
                     low_confidence=final_j < _LOW_CONFIDENCE_FACTOR * null_contrast,
                     n_iter=it)


def ipca(data: FunctionalDataset, policy: DimensionPolicy | None = None,
         seed: int = 0) -> IpcaResult:
    """PCA then ICA: recover basis curves and blend coefficients.

    The recovered basis rows have unit norm with their largest-magnitude
    entry positive; all scale sits in ``mixing_hat``.  The product
    ``mixing_hat.T @ basis_hat + mean_curve`` equals the k-direction PCA
    reconstruction of the data.
    """
    if policy is None:
        policy = VarianceThreshold()
    p = pca(data)
    k = select_dimension(p.eigenvalues, policy)
    ic = ica(p.scores[:, :k], seed=seed)

    # sources = M @ centered_scores.T with M = rotation @ whitening, so the
    # curves attached to the sources are rows of inv(M).T @ components
    m_inv_t = ic.rotation @ np.linalg.inv(ic.whitening)
    raw_basis = m_inv_t @ p.components[:k]

    norms = np.linalg.norm(raw_basis, axis=1)
    signs = np.array([np.sign(row[np.argmax(np.abs(row))]) or 1.0 for row in raw_basis])
    basis = raw_basis * (signs / norms)[:, None]
    mixing = ic.sources * (signs * norms)[:, None]

    return IpcaResult(k=k, basis_hat=BasisSet(basis, data.grid),
                      mixing_hat=mixing, mean_curve=p.mean_curve,
                      taxa=list(data.taxa), pca=p, ica=ic)


@dataclass
class MatchResult:
    """Greedy alignment of estimated basis rows to reference rows.

    ``permutation[i]`` is the estimated row matched to reference row i,
    ``signs[i]`` the orientation that aligns them, ``similarities[i]``
    the absolute cosine between the pair.
    """

    permutation: np.ndarray
    signs: np.ndarray
    similarities: np.ndarray


def match_components(estimated: BasisSet, reference: BasisSet) -> MatchResult:
    """Match estimated rows to reference rows by absolute cosine, greedily."""
    if estimated.k != reference.k:
        raise ValueError("basis sets must have the same number of rows")
    if estimated.functions.shape[1] != reference.functions.shape[1]:
        raise ValueError("basis sets must share a grid size")

    def unit_rows(a):
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero basis row")
        return a / norms

    cos = unit_rows(reference.functions) @ unit_rows(estimated.functions).T
    k = reference.k
    perm = np.full(k, -1, dtype=int)
    signs = np.zeros(k)
    sims = np.zeros(k)
    taken_ref = np.zeros(k, dtype=bool)
    taken_est = np.zeros(k, dtype=bool)
    work = np.abs(cos).copy()
    for _ in range(k):
        work[taken_ref, :] = -1.0
        work[:, taken_est] = -1.0
        i, j = np.unravel_index(np.argmax(work), work.shape)
        perm[i] = j
        sims[i] = abs(cos[i, j])
        signs[i] = 1.0 if cos[i, j] >= 0 else -1.0
        taken_ref[i] = True
        taken_est[j] = True
    return MatchResult(permutation=perm, signs=signs, similarities=sims)
