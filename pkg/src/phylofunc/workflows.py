"""End-to-end report paths behind the command line.

Each function reads or builds its inputs, runs the corresponding library
steps, writes delimited outputs (and figures unless told not to) into an
output directory, and returns the in-memory results so tests and callers
can inspect them without re-reading files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import io, plots
from .errors import NumericalError
from .estimate import GammaEstimate, OptimizerConfig, bagged_mle, classify_phylo_signal
from .gp import GammaVector
from .ipca import DimensionPolicy, FixedDimension, IpcaResult, VarianceThreshold, ipca, match_components
from .reconstruct import (FunctionValuedPosterior, coverage_report, reconstruct_functions,
                          reconstruct_row)
from .seeding import derive_seed, substream
from .simulate import SimulationResult, add_tip_noise, run_simulation, simulate_phylo_ou
from .trees import Phylogeny, generate_random_tree, patristic_percentile

# log-uniform sampling ranges for randomized robustness runs; ell is a
# fraction of the realized tip-pair diameter
ROBUSTNESS_RANGES = {
    "sigma_f": (0.5, 3.0),
    "sigma_n": (0.25, 1.5),
    "ell_frac": (0.1, 0.9),
}


def parse_policy(text: str) -> DimensionPolicy:
    """Parse a dimension policy flag: 'var:0.99' or 'fixed:3'."""
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "var":
            return VarianceThreshold() if len(parts) == 1 else VarianceThreshold(float(parts[1]))
        if parts[0] == "fixed":
            return FixedDimension(int(parts[1]))
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad policy {text!r}: {exc}") from None
    raise ValueError(f"bad policy {text!r}, expected 'var:<fraction>' or 'fixed:<k>'")


def resolve_targets(t: Phylogeny, text: str) -> list[int]:
    """Target node ids from a flag value.

    Accepts 'root', 'all-internal', 'all-tips', or a comma separated list
    of node labels.
    """
    text = text.strip()
    if text == "root":
        return [t.root]
    if text == "all-internal":
        return [int(i) for i in np.flatnonzero(~t.tip_flags)]
    if text == "all-tips":
        return [int(i) for i in t.tips]
    ids = []
    for label in text.split(","):
        label = label.strip()
        if not t.has_label(label):
            sample = ", ".join(t.labels[i] for i in range(min(8, t.n_nodes)))
            raise ValueError(f"unknown node label {label!r}; labels look like: {sample}, ...")
        ids.append(t.node(label))
    if not ids:
        raise ValueError("no target nodes given")
    return ids


def _row_order(taxa: list[str], tip_labels: list[str], what: str) -> np.ndarray:
    index = {lab: i for i, lab in enumerate(taxa)}
    missing = [lab for lab in tip_labels if lab not in index]
    if missing:
        raise ValueError(f"{what} is missing tips {missing[:5]} of the tree")
    return np.array([index[lab] for lab in tip_labels], dtype=int)


# -- simulate ---------------------------------------------------------------


def run_simulate(out_dir, seed=0, n_tips=128, grid_size=1024, gammas=None,
                 sampler=None, render=True) -> SimulationResult:
    os.makedirs(out_dir, exist_ok=True)
    sim = run_simulation(seed=seed, n_tips=n_tips, grid_size=grid_size,
                         gammas=gammas, sampler=sampler)
    io.write_tree_file(sim.tree, os.path.join(out_dir, "tree.nwk"))
    io.write_basis_csv(sim.basis, os.path.join(out_dir, "basis_true.csv"))
    io.write_mixing_csv(sim.tip_mixing.values, sim.tip_mixing.taxa,
                        os.path.join(out_dir, "mixing_true.csv"))
    io.write_mixing_csv(sim.internal_mixing.values, sim.internal_mixing.taxa,
                        os.path.join(out_dir, "mixing_internal_true.csv"))
    io.write_dataset_csv(sim.dataset, os.path.join(out_dir, "dataset.csv"))
    io.write_json({"seed": seed, "n_tips": n_tips, "grid_size": grid_size,
                   "gammas": [g.as_dict() for g in sim.tip_mixing.row_meta]},
                  os.path.join(out_dir, "gamma_true.json"))
    if render:
        plots.save_tree_figure(sim.tree, os.path.join(out_dir, "tree.png"))
        plots.save_basis_figure(sim.basis, os.path.join(out_dir, "basis_true.png"),
                                title="true basis curves")
        plots.save_dataset_figure(sim.dataset, os.path.join(out_dir, "dataset.png"))
    return sim


# -- decomposition ------------------------------------------------------------


def run_ipca(out_dir, data_path=None, dataset=None, policy="var:0.99", seed=0,
             truth_basis_path=None, render=True) -> IpcaResult:
    os.makedirs(out_dir, exist_ok=True)
    if dataset is None:
        if data_path is None:
            raise ValueError("either a dataset or a path to one is required")
        dataset = io.read_dataset_csv(data_path)
    pol = parse_policy(policy) if isinstance(policy, str) else policy
    res = ipca(dataset, pol, seed=seed)

    io.write_basis_csv(res.basis_hat, os.path.join(out_dir, "basis_hat.csv"))
    io.write_mixing_csv(res.mixing_hat, res.taxa, os.path.join(out_dir, "mixing_hat.csv"))
    io.write_mean_curve_csv(res.mean_curve, os.path.join(out_dir, "mean_curve.csv"))

    spectrum = res.pca.eigenvalues
    meta = {
        "k": res.k,
        "policy": str(policy),
        "seed": seed,
        "converged": res.ica.converged,
        "n_iter": res.ica.n_iter,
        "contrast": res.ica.contrast,
        "low_confidence": res.ica.low_confidence,
        "eigenvalues": [float(v) for v in spectrum[:10]],
        "variance_fraction": [float(v) for v in (np.cumsum(spectrum) / spectrum.sum())[:10]],
    }
    reference = None
    if truth_basis_path is not None:
        reference = io.read_basis_csv(truth_basis_path)
        match = match_components(res.basis_hat, reference)
        meta["match"] = {
            "permutation": [int(i) for i in match.permutation],
            "signs": [float(s) for s in match.signs],
            "similarities": [float(s) for s in match.similarities],
        }
    io.write_json(meta, os.path.join(out_dir, "ipca_meta.json"))
    if render:
        plots.save_decomposition_figure(res.pca.components[:res.k], res.basis_hat,
                                        os.path.join(out_dir, "decomposition.png"),
                                        reference=reference)
    return res


# -- estimation ---------------------------------------------------------------


def run_estimate(out_dir, tree_path=None, mixing_path=None, tree=None, mixing=None,
                 taxa=None, n_bags=100, bag_size=100, restarts=8, seed=0,
                 ratios=None, render=True) -> list[GammaEstimate]:
    """Bagged fits for every coefficient row, aligned to the tree by label.

    ``ratios`` is an optional per-row list; a positive entry pins that
    row's signal-to-noise variance ratio, None leaves the row free.
    """
    os.makedirs(out_dir, exist_ok=True)
    if tree is None:
        tree = io.read_tree_file(tree_path)
    if mixing is None:
        mixing, taxa = io.read_mixing_csv(mixing_path)
    mixing = np.atleast_2d(np.asarray(mixing, dtype=float))
    order = _row_order(list(taxa), tree.tip_labels, "coefficient table")
    aligned = mixing[:, order]

    bag_size = min(bag_size, tree.n_tips)
    if ratios is not None and len(ratios) != aligned.shape[0]:
        raise ValueError("one ratio entry per coefficient row required")

    estimates = []
    for i, row in enumerate(aligned):
        cfg = OptimizerConfig(restarts=restarts, seed=derive_seed(seed, "row", i))
        ratio = None if ratios is None else ratios[i]
        est = bagged_mle(tree, row, n_bags=n_bags, bag_size=bag_size, cfg=cfg,
                         ratio=ratio)
        est.classification = classify_phylo_signal(est.gamma_hat, tree)
        estimates.append(est)

    io.write_gamma_json(estimates, os.path.join(out_dir, "gamma_hat.json"),
                        extra={"seed": seed})
    if render:
        plots.save_bag_estimates_figure(estimates, os.path.join(out_dir, "gamma_bags.png"))
    return estimates


# -- reconstruction -------------------------------------------------------------


def run_reconstruct(out_dir, tree_path=None, basis_path=None, mixing_path=None,
                    gamma_path=None, mean_curve_path=None,
                    tree=None, basis=None, mixing=None, taxa=None, gammas=None,
                    mean_curve=None, targets="all-internal",
                    truth_basis_path=None, truth_mixing_path=None,
                    truth_curves=None, render=True, max_figures=6):
    """Posterior curves at target nodes; coverage when truth is available.

    Returns (posterior list, CoverageReport or None).
    """
    os.makedirs(out_dir, exist_ok=True)
    if tree is None:
        tree = io.read_tree_file(tree_path)
    if basis is None:
        basis = io.read_basis_csv(basis_path)
    if mixing is None:
        mixing, taxa = io.read_mixing_csv(mixing_path)
    if gammas is None:
        gammas = [e.gamma_hat for e in io.read_gamma_json(gamma_path)]
    if mean_curve is None:
        if mean_curve_path is not None:
            mean_curve = io.read_mean_curve_csv(mean_curve_path)
        else:
            mean_curve = np.zeros(basis.grid.shape[0])

    mixing = np.atleast_2d(np.asarray(mixing, dtype=float))
    if mixing.shape[0] != basis.k or len(gammas) != basis.k:
        raise ValueError("coefficient rows, basis rows and hyperparameter "
                         "triples must all agree")
    order = _row_order(list(taxa), tree.tip_labels, "coefficient table")
    aligned = mixing[:, order]

    target_ids = resolve_targets(tree, targets) if isinstance(targets, str) else list(targets)

    row_posts = [reconstruct_row(tree, aligned[i], gammas[i], target_ids)
                 for i in range(basis.k)]

    posteriors = []
    for j, node in enumerate(target_ids):
        pairs = [(float(rp.mean[j]), float(rp.variance[j])) for rp in row_posts]
        label = tree.labels[node]
        post = reconstruct_functions(basis, mean_curve, pairs, node=label,
                                     gammas=gammas if tree.is_tip(node) else None)
        posteriors.append(post)
        io.write_posterior_csv(post, os.path.join(out_dir, f"posterior_{label}.csv"))

    if truth_curves is None and truth_basis_path is not None and truth_mixing_path is not None:
        tb = io.read_basis_csv(truth_basis_path)
        tm_values, tm_taxa = io.read_mixing_csv(truth_mixing_path)
        truth_curves = {lab: tm_values[:, j].T @ tb.functions
                        for j, lab in enumerate(tm_taxa)}

    report = None
    if truth_curves is not None:
        covered = [p for p in posteriors if p.node in truth_curves]
        if covered:
            report = coverage_report(covered, truth_curves)
            io.write_coverage_json(report, os.path.join(out_dir, "coverage.json"))

    if render:
        chosen = posteriors[:max_figures]
        for post in chosen:
            truth = None if truth_curves is None else truth_curves.get(post.node)
            plots.save_posterior_figure(post, os.path.join(out_dir, f"posterior_{post.node}.png"),
                                        truth=truth)
    return posteriors, report


# -- randomized robustness runs ---------------------------------------------


def _draw_log_uniform(rng, lo, hi):
    if lo == hi:
        return float(lo)
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def robustness_records(seed=0, n_runs=64, n_tips=64, n_bags=1, bag_size=None,
                       restarts=8, ranges=None, gamma_fixed=None,
                       sampler=None, center_rows=False) -> list[dict]:
    """Simulate one coefficient row per run and re-estimate its parameters.

    Per run: a fresh random tree, hyperparameters drawn log-uniformly
    from ``ranges`` (or ``gamma_fixed`` verbatim), one heritable draw
    plus tip noise, then a bagged fit.  Records relative errors
    (estimate minus truth over truth, NaN where truth is zero) and the
    fitted signal class.  Failed runs are recorded, not raised.

    ``bag_size`` defaults to the whole tip set, which makes each fit a
    plain maximum likelihood estimate.  At these tree sizes subsampled
    bags lose too many short tip pairs and drag the noise estimate down;
    pass an explicit ``bag_size`` to study that regime.

    ``center_rows`` removes each row's tip mean before fitting.  That is
    how rows look when they come out of the curve decomposition (scores
    are centered), and it stops the fit from spending sigma_f on the
    sample mean of what is actually pure noise.  Leave it off to mirror
    fits on raw simulated rows; with long true length scales the row
    mean carries real signal and centering biases ell and sigma_f down.
    """
    ranges = dict(ROBUSTNESS_RANGES, **(ranges or {}))
    out = []
    for r in range(n_runs):
        tree = generate_random_tree(n_tips, sampler, seed=derive_seed(seed, "run", r, "tree"))
        ell_max = patristic_percentile(tree, 100.0)
        if gamma_fixed is None:
            rng = substream(seed, "run", r, "gamma")
            gamma = GammaVector(
                sigma_f=_draw_log_uniform(rng, *ranges["sigma_f"]),
                ell=_draw_log_uniform(rng, *ranges["ell_frac"]) * ell_max,
                sigma_n=_draw_log_uniform(rng, *ranges["sigma_n"]),
            )
        else:
            gamma = gamma_fixed

        heritable = simulate_phylo_ou(tree, gamma.sigma_f, gamma.ell,
                                      seed=derive_seed(seed, "run", r, "ou"))
        observed = add_tip_noise(heritable, tree, gamma.sigma_n,
                                 seed=derive_seed(seed, "run", r, "noise"))
        row = np.array([observed[int(i)] for i in tree.tips])
        if center_rows:
            row = row - row.mean()

        record = {
            "run": r,
            "n_tips": n_tips,
            "sigma_f_true": gamma.sigma_f,
            "ell_true": np.nan if gamma.ell is None else gamma.ell,
            "sigma_n_true": gamma.sigma_n,
            "ell_max": ell_max,
        }
        cfg = OptimizerConfig(restarts=restarts, seed=derive_seed(seed, "run", r, "fit"))
        size = bag_size or n_tips
        try:
            est = bagged_mle(tree, row, n_bags=n_bags, bag_size=min(size, n_tips), cfg=cfg)
        except NumericalError as exc:
            record.update({"status": f"failed: {exc}", "sigma_f_hat": np.nan,
                           "ell_hat": np.nan, "sigma_n_hat": np.nan,
                           "sigma_f_rel_err": np.nan, "ell_rel_err": np.nan,
                           "sigma_n_rel_err": np.nan, "classification": ""})
            out.append(record)
            continue
        g = est.gamma_hat
        cls = classify_phylo_signal(g, tree)

        def rel(est_v, true_v):
            return (est_v - true_v) / true_v if true_v > 0 else np.nan

        record.update({
            "status": "ok",
            "sigma_f_hat": g.sigma_f, "ell_hat": g.ell, "sigma_n_hat": g.sigma_n,
            "sigma_f_rel_err": rel(g.sigma_f, gamma.sigma_f),
            "ell_rel_err": np.nan if gamma.ell is None else rel(g.ell, gamma.ell),
            "sigma_n_rel_err": rel(g.sigma_n, gamma.sigma_n),
            "classification": cls.value,
        })
        out.append(record)
    return out


def run_robustness(out_dir, seed=0, n_runs=64, n_tips=64, n_bags=1, bag_size=None,
                   restarts=8, center_rows=False, render=True) -> pd.DataFrame:
    os.makedirs(out_dir, exist_ok=True)
    records = robustness_records(seed=seed, n_runs=n_runs, n_tips=n_tips,
                                 n_bags=n_bags, bag_size=bag_size, restarts=restarts,
                                 center_rows=center_rows)
    frame = pd.DataFrame.from_records(records)
    tmp = os.path.join(out_dir, "relative_errors.csv")
    frame.to_csv(tmp + ".part", index=False)
    os.replace(tmp + ".part", tmp)

    ok = frame[frame["status"] == "ok"]
    summary = {
        "seed": seed, "n_runs": n_runs, "n_tips": n_tips,
        "n_bags": n_bags, "bag_size": bag_size or n_tips, "restarts": restarts,
        "center_rows": center_rows,
        "ranges": {k: list(v) for k, v in ROBUSTNESS_RANGES.items()},
        "n_failed": int((frame["status"] != "ok").sum()),
        "median_rel_err": {
            "sigma_f": float(np.nanmedian(ok["sigma_f_rel_err"])) if len(ok) else np.nan,
            "ell": float(np.nanmedian(ok["ell_rel_err"])) if len(ok) else np.nan,
            "sigma_n": float(np.nanmedian(ok["sigma_n_rel_err"])) if len(ok) else np.nan,
        },
        "classification_counts": frame["classification"].value_counts().to_dict(),
    }
    io.write_json(summary, os.path.join(out_dir, "robustness_summary.json"))
    if render:
        plots.save_robustness_figure(frame, os.path.join(out_dir, "robustness.png"))
    return frame


# -- whole pipeline -------------------------------------------------------------


@dataclass
class PipelineResult:
    simulation: SimulationResult
    decomposition: IpcaResult
    estimates: list[GammaEstimate]
    posteriors: list[FunctionValuedPosterior]
    coverage: object


def run_pipeline(out_dir, seed=0, n_tips=128, grid_size=1024, policy="var:0.99",
                 n_bags=100, bag_size=100, restarts=8, targets="all-internal",
                 gammas=None, render=True) -> PipelineResult:
    """Simulate, decompose, estimate, reconstruct, and score coverage."""
    sim = run_simulate(out_dir, seed=seed, n_tips=n_tips, grid_size=grid_size,
                       gammas=gammas, render=render)
    dec = run_ipca(out_dir, dataset=sim.dataset, policy=policy,
                   seed=derive_seed(seed, "ica"), render=render)
    if render:
        # redo the comparison figure with the known truth alongside
        plots.save_decomposition_figure(dec.pca.components[:dec.k], dec.basis_hat,
                                        os.path.join(out_dir, "decomposition.png"),
                                        reference=sim.basis)
    ests = run_estimate(out_dir, tree=sim.tree, mixing=dec.mixing_hat, taxa=dec.taxa,
                        n_bags=n_bags, bag_size=bag_size, restarts=restarts,
                        seed=derive_seed(seed, "estimate"), render=render)
    truth_curves = {lab: sim.internal_mixing.values[:, j].T @ sim.basis.functions
                    for j, lab in enumerate(sim.internal_mixing.taxa)}
    posteriors, coverage = run_reconstruct(
        out_dir, tree=sim.tree, basis=dec.basis_hat, mixing=dec.mixing_hat,
        taxa=dec.taxa, gammas=[e.gamma_hat for e in ests], mean_curve=dec.mean_curve,
        targets=targets, truth_curves=truth_curves, render=render)
    return PipelineResult(simulation=sim, decomposition=dec, estimates=ests,
                          posteriors=posteriors, coverage=coverage)
