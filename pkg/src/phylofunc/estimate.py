"""Maximum likelihood for the evolution hyperparameters of one row.

The likelihood of a coefficient row under the tree-structured Gaussian
model is maximized with a derivative-free simplex search in log
parameter space, restarted from several random points.  Bagging repeats
the fit on random tip subsets and averages, which tames the heavy tails
of single-fit estimates on modest trees.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .errors import IllConditionedKernelError, NonConvergenceError
from .gp import GammaVector, KernelMatrix, cholesky_with_jitter, log_marginal_likelihood, ou_covariance
from .seeding import substream
from .trees import Phylogeny, induced_subtree, patristic_matrix, patristic_percentile

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the restarted simplex search.

    ``bounds`` maps parameter name (sigma_f, ell, sigma_n) to a (low,
    high) pair in natural units.  When a bound is absent it defaults to
    [1e-4, 1e2] times the data standard deviation for the sigmas and
    [1e-3, 10] times the tree's tip-pair diameter for ell.  Restart
    points are drawn log-uniformly inside the bounds from a stream seeded
    by ``seed``.
    """

    restarts: int = 8
    max_iter: int = 400
    tol: float = 1e-6
    bounds: dict[str, tuple[float, float]] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.bounds is not None:
            for name, pair in self.bounds.items():
                if name not in ("sigma_f", "ell", "sigma_n"):
                    raise ValueError(f"unknown bound {name!r}")
                lo, hi = pair
                if not 0 < lo < hi:
                    raise ValueError(f"bad bounds for {name}: ({lo}, {hi})")


class SignalClass(str, Enum):
    """What the fitted hyperparameters say about a row's heritability."""

    PHYLOGENETIC = "phylogenetic"
    NON_PHYLOGENETIC = "non_phylogenetic"
    SATURATED = "saturated"


@dataclass
class GammaEstimate:
    """Bagged fit for one coefficient row."""

    gamma_hat: GammaVector
    bag_sd: dict[str, float]
    per_bag: list[GammaVector]
    n_bags: int
    bag_size: int
    log_lik_full: float
    classification: SignalClass | None = None
    seed: int = 0


def _resolve_bounds(cfg: OptimizerConfig, row: np.ndarray, ell_max: float,
                    names: tuple[str, ...]) -> np.ndarray:
    s = float(np.std(row, ddof=1))
    if not s > 0:
        s = 1.0
    defaults = {
        "sigma_f": (1e-4 * s, 1e2 * s),
        "ell": (1e-3 * ell_max, 10.0 * ell_max),
        "sigma_n": (1e-4 * s, 1e2 * s),
    }
    given = cfg.bounds or {}
    out = [given.get(name, defaults[name]) for name in names]
    return np.log(np.asarray(out, dtype=float))


def _gaussian_nll(row: np.ndarray, kernel_values: np.ndarray) -> float:
    # negative log density of a zero-mean Gaussian; inf when indefinite
    try:
        low = cholesky_with_jitter(KernelMatrix(kernel_values))
    except IllConditionedKernelError:
        return np.inf
    alpha = solve_triangular(low, row, lower=True)
    return 0.5 * float(alpha @ alpha) + float(np.sum(np.log(np.diag(low)))) \
        + 0.5 * row.shape[0] * _LOG_2PI


def _restarted_simplex(objective, log_bounds: np.ndarray, cfg: OptimizerConfig):
    """Best simplex run over log-uniform restarts inside the bounds.

    Returns (clipped best point, best value, whether any run converged).
    """
    rng = substream(cfg.seed, "mle-restarts")
    starts = rng.uniform(log_bounds[:, 0], log_bounds[:, 1],
                         size=(cfg.restarts, log_bounds.shape[0]))
    best_x, best_fun = None, np.inf
    any_converged = False
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxiter": cfg.max_iter, "xatol": cfg.tol,
                                "fatol": cfg.tol})
        if not np.isfinite(res.fun):
            continue
        any_converged = any_converged or bool(res.success)
        if res.fun < best_fun:
            best_x, best_fun = res.x, float(res.fun)
    if best_x is None:
        raise NonConvergenceError("likelihood was not finite at any visited point")
    return np.clip(best_x, log_bounds[:, 0], log_bounds[:, 1]), best_fun, any_converged


def _mle_gamma_full(t: Phylogeny, row: np.ndarray, cfg: OptimizerConfig | None = None,
                    distances: np.ndarray | None = None) -> tuple[GammaVector, float]:
    cfg = cfg or OptimizerConfig()
    row = np.asarray(row, dtype=float).ravel()
    if row.shape[0] != t.n_tips:
        raise ValueError("row length must equal the number of tips")
    if t.n_tips < 3:
        raise ValueError("need at least three tips")
    d = patristic_matrix(t) if distances is None else np.asarray(distances, dtype=float)
    log_bounds = _resolve_bounds(cfg, row, float(d.max()), ("sigma_f", "ell", "sigma_n"))
    diag = np.diag_indices(row.shape[0])

    def objective(log_params):
        p = np.clip(log_params, log_bounds[:, 0], log_bounds[:, 1])
        sigma_f, ell, sigma_n = np.exp(p)
        k = sigma_f ** 2 * np.exp(-d / ell)
        k[diag] += sigma_n ** 2
        return _gaussian_nll(row, k)

    x, fun, converged = _restarted_simplex(objective, log_bounds, cfg)
    sigma_f, ell, sigma_n = np.exp(x)
    gamma = GammaVector(sigma_f=float(sigma_f), ell=float(ell), sigma_n=float(sigma_n))
    if not converged:
        raise NonConvergenceError("no simplex restart converged", best=gamma)
    return gamma, -fun


def mle_gamma(t: Phylogeny, row: np.ndarray, cfg: OptimizerConfig | None = None,
              distances: np.ndarray | None = None) -> GammaVector:
    """Maximum likelihood hyperparameters for one row of tip values.

    ``row`` must be ordered like ``t``'s tips (id order).  ``distances``
    lets callers reuse a precomputed tip-pair matrix.  Raises
    :class:`NonConvergenceError`, carrying the best point found, when no
    restart converges.
    """
    gamma, _ = _mle_gamma_full(t, row, cfg, distances)
    return gamma


def mle_gamma_ratio_constrained(t: Phylogeny, row: np.ndarray, ratio: float,
                                cfg: OptimizerConfig | None = None) -> GammaVector:
    """Fit with the signal-to-noise variance ratio pinned.

    ``ratio`` is sigma_f^2 over sigma_n^2; the search runs over
    (sigma_f, ell) with sigma_n tied to sigma_f.
    """
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    cfg = cfg or OptimizerConfig()
    row = np.asarray(row, dtype=float).ravel()
    if row.shape[0] != t.n_tips:
        raise ValueError("row length must equal the number of tips")
    if t.n_tips < 3:
        raise ValueError("need at least three tips")
    d = patristic_matrix(t)
    log_bounds = _resolve_bounds(cfg, row, float(d.max()), ("sigma_f", "ell"))
    root_ratio = float(np.sqrt(ratio))
    diag = np.diag_indices(row.shape[0])

    def objective(log_params):
        p = np.clip(log_params, log_bounds[:, 0], log_bounds[:, 1])
        sigma_f, ell = np.exp(p)
        k = sigma_f ** 2 * np.exp(-d / ell)
        k[diag] += (sigma_f / root_ratio) ** 2
        return _gaussian_nll(row, k)

    x, _, converged = _restarted_simplex(objective, log_bounds, cfg)
    sigma_f, ell = np.exp(x)
    gamma = GammaVector(sigma_f=float(sigma_f), ell=float(ell),
                        sigma_n=float(sigma_f / root_ratio))
    if not converged:
        raise NonConvergenceError("no simplex restart converged", best=gamma)
    return gamma


def bagged_mle(t: Phylogeny, row: np.ndarray, n_bags: int = 100,
               bag_size: int = 100, cfg: OptimizerConfig | None = None,
               ratio: float | None = None) -> GammaEstimate:
    """Average of per-bag fits on random tip subsets.

    Bag ``b`` samples ``bag_size`` tips without replacement from a stream
    seeded by (cfg.seed, "bag", b) and fits on the induced subtree; the
    per-parameter mean and standard deviation over successful bags are
    reported.  More than 20 percent failed bags is an error.  The
    returned log likelihood is evaluated on the full tree at the averaged
    parameters.  A positive ``ratio`` makes every bag use the
    signal-to-noise constrained fit.
    """
    cfg = cfg or OptimizerConfig()
    row = np.asarray(row, dtype=float).ravel()
    if row.shape[0] != t.n_tips:
        raise ValueError("row length must equal the number of tips")
    if not 3 <= bag_size <= t.n_tips:
        raise ValueError("bag_size must lie in [3, n_tips]")
    if n_bags < 1:
        raise ValueError("need at least one bag")

    value_by_label = dict(zip(t.tip_labels, row))
    per_bag: list[GammaVector] = []
    failures = 0
    for b in range(n_bags):
        if bag_size == t.n_tips:
            # the sample is always the whole tip set, so fit on t directly
            sub, sub_row = t, row
        else:
            rng = substream(cfg.seed, "bag", b)
            chosen = t.tips[rng.choice(t.n_tips, size=bag_size, replace=False)]
            sub = induced_subtree(t, chosen)
            sub_row = np.array([value_by_label[lab] for lab in sub.tip_labels])
        try:
            if ratio is None:
                per_bag.append(mle_gamma(sub, sub_row, cfg))
            else:
                per_bag.append(mle_gamma_ratio_constrained(sub, sub_row, ratio, cfg))
        except (NonConvergenceError, IllConditionedKernelError):
            failures += 1
    if failures > 0.2 * n_bags:
        raise NonConvergenceError(
            f"{failures} of {n_bags} bags failed, estimate unreliable")

    stacked = np.array([[g.sigma_f, g.ell, g.sigma_n] for g in per_bag])
    means = stacked.mean(axis=0)
    sds = stacked.std(axis=0, ddof=1) if len(per_bag) > 1 else np.zeros(3)
    gamma_hat = GammaVector(sigma_f=float(means[0]), ell=float(means[1]),
                            sigma_n=float(means[2]))

    kernel = ou_covariance(patristic_matrix(t), gamma_hat)
    log_lik = log_marginal_likelihood(row, kernel)
    return GammaEstimate(gamma_hat=gamma_hat,
                         bag_sd={"sigma_f": float(sds[0]), "ell": float(sds[1]),
                                 "sigma_n": float(sds[2])},
                         per_bag=per_bag, n_bags=n_bags, bag_size=bag_size,
                         log_lik_full=log_lik, seed=cfg.seed)


def classify_phylo_signal(gamma: GammaVector, t: Phylogeny) -> SignalClass:
    """Place fitted hyperparameters on the heritability scale of the tree.

    A length scale below the 1st percentile of tip-pair distances, or a
    signal amplitude vanishing relative to the noise, means the tree adds
    nothing (non-phylogenetic).  A length scale beyond ten times the
    largest tip-pair distance cannot be told from a flat profile
    (saturated).  Everything else is ordinary heritable signal.
    """
    if gamma.sigma_f == 0 or gamma.sigma_f < 1e-6 * gamma.sigma_n:
        return SignalClass.NON_PHYLOGENETIC
    near = patristic_percentile(t, 1.0)
    far = patristic_percentile(t, 100.0)
    if gamma.ell < near:
        return SignalClass.NON_PHYLOGENETIC
    if gamma.ell > 10.0 * far:
        return SignalClass.SATURATED
    return SignalClass.PHYLOGENETIC
