"""Forward simulation of function-valued traits on a tree.

Each curve is a fixed linear blend of a small set of basis curves.  The
blend coefficients evolve independently along the tree as stationary
mean-reverting diffusions, one hyperparameter triple per coefficient, and
tips receive additional independent coefficient noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import GammaVector
from .seeding import derive_seed
from .trees import BranchLengthSampler, Phylogeny, generate_random_tree, patristic_percentile


@dataclass
class BasisSet:
    """Rows of ``functions`` are curves sampled on a shared ``grid``."""

    functions: np.ndarray
    grid: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.functions = np.atleast_2d(np.asarray(self.functions, dtype=float))
        self.grid = np.asarray(self.grid, dtype=float).ravel()
        if self.functions.shape[1] != self.grid.shape[0]:
            raise ValueError("functions and grid sizes disagree")
        if not np.all(np.isfinite(self.functions)):
            raise ValueError("basis values must be finite")
        if self.grid.shape[0] > 1 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if not self.names:
            self.names = [f"phi_{i + 1}" for i in range(self.functions.shape[0])]
        elif len(self.names) != self.functions.shape[0]:
            raise ValueError("one name per basis row required")

    @property
    def k(self) -> int:
        return self.functions.shape[0]


@dataclass
class MixingMatrix:
    """Blend coefficients, one row per basis curve, one column per taxon."""

    values: np.ndarray
    taxa: list[str]
    row_meta: list[GammaVector] | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.taxa):
            raise ValueError("one column per taxon required")
        if self.row_meta is not None and len(self.row_meta) != self.values.shape[0]:
            raise ValueError("one hyperparameter triple per row required")

    @property
    def k(self) -> int:
        return self.values.shape[0]


@dataclass
class FunctionalDataset:
    """Observed curves, one row per taxon, sampled on ``grid``."""

    traits: np.ndarray
    taxa: list[str]
    grid: np.ndarray

    def __post_init__(self):
        self.traits = np.atleast_2d(np.asarray(self.traits, dtype=float))
        self.grid = np.asarray(self.grid, dtype=float).ravel()
        if self.traits.shape[0] != len(self.taxa):
            raise ValueError("one row per taxon required")
        if self.traits.shape[1] != self.grid.shape[0]:
            raise ValueError("traits and grid sizes disagree")
        if not np.all(np.isfinite(self.traits)):
            raise ValueError("trait values must be finite")

    @property
    def n(self) -> int:
        return self.traits.shape[0]


def simulate_phylo_ou(t: Phylogeny, sigma_f: float, ell: float | None,
                      seed: int = 0) -> dict[int, float]:
    """One draw of a stationary mean-reverting diffusion on every node.

    The root is drawn from the stationary law N(0, sigma_f^2); each child
    is its parent damped by exp(-branch/ell) plus the exact amount of
    fresh variance that keeps the marginal stationary.  The resulting
    covariance between any two nodes is sigma_f^2 * exp(-d/ell) in their
    patristic distance d.  With ``sigma_f`` zero all values are zero.
    """
    if sigma_f < 0:
        raise ValueError("sigma_f must be non-negative")
    if sigma_f == 0:
        return {int(i): 0.0 for i in range(t.n_nodes)}
    if ell is None or not ell > 0:
        raise ValueError("ell must be positive when sigma_f > 0")

    rng = np.random.default_rng(seed)
    values = np.zeros(t.n_nodes)
    order = t.preorder()
    values[order[0]] = sigma_f * rng.standard_normal()
    for node in order[1:]:
        node = int(node)
        rho = np.exp(-t.branch_length[node] / ell)
        fresh = sigma_f * np.sqrt(max(1.0 - rho * rho, 0.0))
        values[node] = rho * values[t.parent[node]] + fresh * rng.standard_normal()
    return {int(i): float(values[i]) for i in range(t.n_nodes)}


def add_tip_noise(values: dict[int, float], t: Phylogeny, sigma_n: float,
                  seed: int = 0) -> dict[int, float]:
    """Copy of ``values`` with independent N(0, sigma_n^2) added at tips only."""
    if sigma_n < 0:
        raise ValueError("sigma_n must be non-negative")
    out = dict(values)
    if sigma_n == 0:
        return out
    rng = np.random.default_rng(seed)
    for tip in t.tips:
        out[int(tip)] = out[int(tip)] + sigma_n * rng.standard_normal()
    return out


def synthesize_dataset(basis: BasisSet, mixing: MixingMatrix,
                       taxa_subset: list[str] | None = None) -> FunctionalDataset:
    """Curves obtained by blending the basis with each taxon's coefficients."""
    if mixing.k != basis.k:
        raise ValueError("mixing rows and basis rows disagree")
    if taxa_subset is None:
        cols = np.arange(len(mixing.taxa))
        taxa = list(mixing.taxa)
    else:
        index = {lab: i for i, lab in enumerate(mixing.taxa)}
        missing = [lab for lab in taxa_subset if lab not in index]
        if missing:
            raise ValueError(f"unknown taxa: {missing}")
        cols = np.array([index[lab] for lab in taxa_subset], dtype=int)
        taxa = list(taxa_subset)
    traits = mixing.values[:, cols].T @ basis.functions
    return FunctionalDataset(traits=traits, taxa=taxa, grid=basis.grid)


def make_demo_basis(grid_size: int = 1024) -> BasisSet:
    """Three unimodal bumps on [0, 1], deliberately non-orthogonal.

    Gaussian bumps centered at 0.25, 0.5 and 0.75 with enough width that
    neighboring bumps overlap; every pairwise inner product is nonzero.
    """
    if grid_size < 8:
        raise ValueError("grid_size must be at least 8")
    grid = np.linspace(0.0, 1.0, grid_size)
    centers = (0.25, 0.50, 0.75)
    widths = (0.12, 0.15, 0.12)
    rows = [np.exp(-0.5 * ((grid - c) / w) ** 2) for c, w in zip(centers, widths)]
    return BasisSet(functions=np.vstack(rows), grid=grid)


def default_gamma_set(ell_max: float) -> list[GammaVector]:
    """Hyperparameter triples for the three-curve demo simulation.

    One strongly heritable slow row, one pure-noise row, one moderately
    heritable fast row.  Length scales are pinned to fractions of the
    realized tip-pair diameter ``ell_max`` so signal decay is comparable
    across random trees.
    """
    if not ell_max > 0:
        raise ValueError("ell_max must be positive")
    return [
        GammaVector(sigma_f=2.5, ell=0.75 * ell_max, sigma_n=0.5),
        GammaVector(sigma_f=0.0, ell=None, sigma_n=1.0),
        GammaVector(sigma_f=1.5, ell=0.25 * ell_max, sigma_n=0.5),
    ]


@dataclass
class SimulationResult:
    """Everything produced by one forward simulation."""

    tree: Phylogeny
    basis: BasisSet
    tip_mixing: MixingMatrix
    internal_mixing: MixingMatrix
    dataset: FunctionalDataset


def run_simulation(seed: int = 0, n_tips: int = 128, grid_size: int = 1024,
                   gammas: list[GammaVector] | None = None,
                   sampler: BranchLengthSampler | None = None,
                   tree: Phylogeny | None = None,
                   basis: BasisSet | None = None) -> SimulationResult:
    """Tree, coefficients and observed curves from one root seed.

    Tree growth, each coefficient row's diffusion, and each row's tip
    noise all use named substreams of ``seed``, so any one piece can be
    regenerated independently.  ``tree`` and ``basis`` can be supplied to
    reuse existing objects; ``gammas`` defaults to
    :func:`default_gamma_set` of the realized tree diameter.
    """
    if tree is None:
        tree = generate_random_tree(n_tips, sampler, seed=derive_seed(seed, "tree"))
    if basis is None:
        basis = make_demo_basis(grid_size)
    if gammas is None:
        gammas = default_gamma_set(patristic_percentile(tree, 100.0))
    if len(gammas) != basis.k:
        raise ValueError("one hyperparameter triple per basis row required")

    internal = np.flatnonzero(~tree.tip_flags)
    tip_rows = np.zeros((basis.k, tree.n_tips))
    internal_rows = np.zeros((basis.k, internal.shape[0]))
    for i, g in enumerate(gammas):
        heritable = simulate_phylo_ou(tree, g.sigma_f, g.ell,
                                      seed=derive_seed(seed, "ou-row", i))
        observed = add_tip_noise(heritable, tree, g.sigma_n,
                                 seed=derive_seed(seed, "noise-row", i))
        tip_rows[i] = [observed[int(n)] for n in tree.tips]
        internal_rows[i] = [heritable[int(n)] for n in internal]

    tip_mixing = MixingMatrix(tip_rows, taxa=tree.tip_labels, row_meta=list(gammas))
    internal_mixing = MixingMatrix(internal_rows,
                                   taxa=[tree.labels[int(n)] for n in internal],
                                   row_meta=list(gammas))
    dataset = synthesize_dataset(basis, tip_mixing)
    return SimulationResult(tree=tree, basis=basis, tip_mixing=tip_mixing,
                            internal_mixing=internal_mixing, dataset=dataset)
