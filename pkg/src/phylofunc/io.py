"""Reading and writing the package's file formats.

Curves travel as CSV with a ``taxon`` (or ``name``) key column followed
by ``x_1..x_G`` value columns; coefficients as ``taxon`` followed by
``c_1..c_k``.  Grids are implicit: curves are always sampled on a
uniform grid over [0, 1].  Writes go through a temp file and an atomic
rename so concurrent runs in one directory never see partial files.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np
import pandas as pd

from .estimate import GammaEstimate, SignalClass
from .gp import GammaVector
from .reconstruct import CoverageReport, FunctionValuedPosterior
from .simulate import BasisSet, FunctionalDataset, MixingMatrix
from .trees import Phylogeny, parse_newick, write_newick


def default_grid(size: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


def _atomic_write_text(path, text: str):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_frame(frame: pd.DataFrame, path):
    tmp = f"{path}.tmp.{os.getpid()}"
    frame.to_csv(tmp, index=False)
    os.replace(tmp, path)


# -- trees ---------------------------------------------------------------


def write_tree_file(t: Phylogeny, path):
    _atomic_write_text(path, write_newick(t) + "\n")


def read_tree_file(path) -> Phylogeny:
    with open(path, encoding="utf8") as fh:
        return parse_newick(fh.read())


# -- curves and coefficients ----------------------------------------------


def write_dataset_csv(data: FunctionalDataset, path):
    frame = pd.DataFrame(data.traits,
                         columns=[f"x_{i + 1}" for i in range(data.grid.shape[0])])
    frame.insert(0, "taxon", data.taxa)
    _atomic_write_frame(frame, path)


def read_dataset_csv(path) -> FunctionalDataset:
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] != "taxon":
        raise ValueError(f"{path}: first column must be 'taxon'")
    values = frame.iloc[:, 1:].to_numpy(dtype=float)
    return FunctionalDataset(traits=values, taxa=[str(s) for s in frame["taxon"]],
                             grid=default_grid(values.shape[1]))


def write_basis_csv(basis: BasisSet, path):
    frame = pd.DataFrame(basis.functions,
                         columns=[f"x_{i + 1}" for i in range(basis.grid.shape[0])])
    frame.insert(0, "name", basis.names)
    _atomic_write_frame(frame, path)


def read_basis_csv(path) -> BasisSet:
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] != "name":
        raise ValueError(f"{path}: first column must be 'name'")
    values = frame.iloc[:, 1:].to_numpy(dtype=float)
    return BasisSet(functions=values, grid=default_grid(values.shape[1]),
                    names=[str(s) for s in frame["name"]])


def write_mixing_csv(values: np.ndarray, taxa: list[str], path):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    frame = pd.DataFrame(values.T, columns=[f"c_{i + 1}" for i in range(values.shape[0])])
    frame.insert(0, "taxon", taxa)
    _atomic_write_frame(frame, path)


def read_mixing_csv(path) -> tuple[np.ndarray, list[str]]:
    """Returns (rows-by-taxa coefficient matrix, taxon labels)."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] != "taxon":
        raise ValueError(f"{path}: first column must be 'taxon'")
    return frame.iloc[:, 1:].to_numpy(dtype=float).T, [str(s) for s in frame["taxon"]]


def write_mean_curve_csv(mean_curve: np.ndarray, path):
    grid = default_grid(len(mean_curve))
    frame = pd.DataFrame({"x": grid, "mean": np.asarray(mean_curve, dtype=float)})
    _atomic_write_frame(frame, path)


def read_mean_curve_csv(path) -> np.ndarray:
    frame = pd.read_csv(path, float_precision="round_trip")
    return frame["mean"].to_numpy(dtype=float)


# -- hyperparameter estimates ----------------------------------------------


def _gamma_to_json(g: GammaVector) -> dict:
    return {"sigma_f": g.sigma_f, "ell": g.ell, "sigma_n": g.sigma_n}


def _gamma_from_json(d: dict) -> GammaVector:
    return GammaVector(sigma_f=float(d["sigma_f"]),
                       ell=None if d.get("ell") is None else float(d["ell"]),
                       sigma_n=float(d["sigma_n"]))


def write_gamma_json(estimates: list[GammaEstimate], path, extra: dict | None = None):
    rows = []
    for i, est in enumerate(estimates):
        rows.append({
            "row": i + 1,
            "gamma_hat": _gamma_to_json(est.gamma_hat),
            "bag_sd": est.bag_sd,
            "n_bags": est.n_bags,
            "bag_size": est.bag_size,
            "log_lik_full": est.log_lik_full,
            "classification": None if est.classification is None else est.classification.value,
            "seed": est.seed,
        })
    doc = {"rows": rows}
    if extra:
        doc.update(extra)
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_gamma_json(path) -> list[GammaEstimate]:
    with open(path, encoding="utf8") as fh:
        doc = json.load(fh)
    out = []
    for row in doc["rows"]:
        cls = row.get("classification")
        out.append(GammaEstimate(
            gamma_hat=_gamma_from_json(row["gamma_hat"]),
            bag_sd={k: float(v) for k, v in row["bag_sd"].items()},
            per_bag=[],
            n_bags=int(row["n_bags"]),
            bag_size=int(row["bag_size"]),
            log_lik_full=float(row["log_lik_full"]),
            classification=None if cls is None else SignalClass(cls),
            seed=int(row.get("seed", 0)),
        ))
    return out


# -- posteriors and reports -------------------------------------------------


def write_posterior_csv(post: FunctionValuedPosterior, path):
    nonphylo = post.nonphylo_var if post.nonphylo_var is not None else np.zeros_like(post.phylo_var)
    frame = pd.DataFrame({
        "x": post.grid,
        "mean": post.mean,
        "phylo_sd": np.sqrt(np.clip(post.phylo_var, 0.0, None)),
        "nonphylo_sd": np.sqrt(np.clip(nonphylo, 0.0, None)),
    })
    _atomic_write_frame(frame, path)


def read_posterior_csv(path, node: str = "") -> FunctionValuedPosterior:
    frame = pd.read_csv(path, float_precision="round_trip")
    return FunctionValuedPosterior(
        node=node,
        grid=frame["x"].to_numpy(dtype=float),
        mean=frame["mean"].to_numpy(dtype=float),
        phylo_var=frame["phylo_sd"].to_numpy(dtype=float) ** 2,
        nonphylo_var=frame["nonphylo_sd"].to_numpy(dtype=float) ** 2,
    )


def write_coverage_json(report: CoverageReport, path):
    _atomic_write_text(path, json.dumps(asdict(report), indent=2) + "\n")


def write_json(doc: dict, path):
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_json(path) -> dict:
    with open(path, encoding="utf8") as fh:
        return json.load(fh)
