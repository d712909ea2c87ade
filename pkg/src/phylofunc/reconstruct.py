"""Function-valued posteriors at unobserved nodes.

Each recovered coefficient row gets an independent Gaussian posterior at
the target nodes; pushing those through the recovered basis gives a
Gaussian over whole curves.  The heritable band reflects posterior
uncertainty in the coefficients; at tips an extra band for the
independent coefficient noise can be attached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GammaVector, GaussianPosterior, gp_posterior
from .simulate import BasisSet
from .trees import Phylogeny, patristic_matrix


@dataclass
class FunctionValuedPosterior:
    """Gaussian over one node's curve.

    ``phylo_var`` is the pointwise variance from coefficient posterior
    uncertainty.  ``nonphylo_var`` adds the independent tip noise term
    and is None for internal nodes, where that noise never applies.
    ``covariance`` optionally carries the full grid-by-grid matrix.
    """

    node: str
    grid: np.ndarray
    mean: np.ndarray
    phylo_var: np.ndarray
    nonphylo_var: np.ndarray | None = None
    covariance: np.ndarray | None = None


@dataclass
class CoverageReport:
    """How often truth stays inside the two-standard-deviation band."""

    per_node: dict[str, float]
    overall: float
    n_nodes: int


def reconstruct_row(t: Phylogeny, row: np.ndarray, gamma: GammaVector,
                    targets) -> GaussianPosterior:
    """Joint posterior of one coefficient row at the target nodes.

    ``row`` is ordered like ``t``'s tips.  Targets are node ids; tips may
    appear among them, in which case the posterior still describes the
    heritable part of the coefficient, not a fresh noisy observation.
    """
    target_ids = [int(i) for i in targets]
    if not target_ids:
        raise ValueError("need at least one target node")
    for i in target_ids:
        t._check_node(i)
    row = np.asarray(row, dtype=float).ravel()
    if row.shape[0] != t.n_tips:
        raise ValueError("row length must equal the number of tips")

    ids = list(t.tips) + target_ids
    full = patristic_matrix(t, ids)
    n = t.n_tips
    return gp_posterior(train_distances=full[:n, :n],
                        cross_distances=full[n:, :n],
                        query_distances=full[n:, n:],
                        observations=row, gamma=gamma)


def reconstruct_functions(basis_hat: BasisSet, mean_curve: np.ndarray,
                          row_posteriors: list[tuple[float, float]],
                          node: str = "",
                          gammas: list[GammaVector] | None = None,
                          full_covariance: bool = False) -> FunctionValuedPosterior:
    """Combine per-row coefficient posteriors into a curve posterior.

    ``row_posteriors`` holds one (mean, variance) pair per basis row for
    a single node.  Rows are treated as independent, so the curve mean is
    the blend of posterior means and the pointwise variance is a blend of
    posterior variances against squared basis values.  Passing ``gammas``
    attaches the tip-noise band; use it only for tip nodes.
    """
    k = basis_hat.k
    if len(row_posteriors) != k:
        raise ValueError("one (mean, variance) pair per basis row required")
    mean_curve = np.asarray(mean_curve, dtype=float).ravel()
    phi = basis_hat.functions
    if mean_curve.shape[0] != phi.shape[1]:
        raise ValueError("mean curve and basis grid sizes disagree")
    if gammas is not None and len(gammas) != k:
        raise ValueError("one hyperparameter triple per basis row required")

    means = np.array([m for m, _ in row_posteriors], dtype=float)
    variances = np.array([v for _, v in row_posteriors], dtype=float)
    if np.any(variances < 0):
        raise ValueError("negative coefficient variance")

    mean = mean_curve + means @ phi
    phylo_var = variances @ phi ** 2
    nonphylo_var = None
    if gammas is not None:
        noise = np.array([g.sigma_n ** 2 for g in gammas])
        nonphylo_var = noise @ phi ** 2
    cov = None
    if full_covariance:
        cov = (phi.T * variances) @ phi
    return FunctionValuedPosterior(node=node, grid=basis_hat.grid, mean=mean,
                                   phylo_var=phylo_var, nonphylo_var=nonphylo_var,
                                   covariance=cov)


def autocovariance_estimate(basis: BasisSet, gammas: list[GammaVector]) -> np.ndarray:
    """Grid-by-grid second moment of a tip curve implied by the model.

    Each row contributes (sigma_f^2 + sigma_n^2) times the outer product
    of its basis curve with itself; rows are independent, so the
    contributions add.
    """
    if len(gammas) != basis.k:
        raise ValueError("one hyperparameter triple per basis row required")
    weights = np.array([g.sigma_f ** 2 + g.sigma_n ** 2 for g in gammas])
    phi = basis.functions
    return (phi.T * weights) @ phi


def coverage_report(posteriors: list[FunctionValuedPosterior],
                    truth: dict[str, np.ndarray]) -> CoverageReport:
    """Fraction of grid points where truth sits inside mean +- 2 sd.

    The band uses the heritable variance only.  Nodes missing from
    ``truth`` are an error; extra truth entries are ignored.
    """
    if not posteriors:
        raise ValueError("no posteriors given")
    per_node: dict[str, float] = {}
    total = 0.0
    for post in posteriors:
        if post.node not in truth:
            raise ValueError(f"no truth curve for node {post.node!r}")
        target = np.asarray(truth[post.node], dtype=float).ravel()
        if target.shape != post.mean.shape:
            raise ValueError(f"truth curve for {post.node!r} has the wrong length")
        band = 2.0 * np.sqrt(post.phylo_var)
        inside = np.abs(target - post.mean) <= band
        frac = float(np.mean(inside))
        per_node[post.node] = frac
        total += frac
    return CoverageReport(per_node=per_node, overall=total / len(posteriors),
                          n_nodes=len(posteriors))
