"""Command line interface.

Exit codes: 0 on success, 1 on usage errors (bad flags, malformed or
inconsistent inputs), 2 on numerical failures (ill conditioned kernels,
optimizer non-convergence, degenerate data).
"""

from __future__ import annotations

import argparse
import sys

from . import io, workflows
from .errors import NewickParseError, NumericalError
from .gp import GammaVector
from .trees import ConstantLength, EmpiricalLengths, LogNormalLengths


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; this package reserves 2 for numerics
    def error(self, message):
        raise _UsageError(message)


def _add_common(p, out_required=True):
    p.add_argument("--out", required=out_required, default="." if not out_required else None,
                   metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--config", metavar="FILE", default=None,
                   help="JSON file of defaults; flags win over the file")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phylofunc",
                     description="simulate, decompose and infer function-valued "
                                 "traits evolving on a phylogeny")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="random tree, coefficients and curves",
                       description="Write a simulated dataset: tree, true basis, "
                       "true coefficients for tips and internal nodes, and the "
                       "observed curves.")
    _add_common(p)
    p.add_argument("--tips", type=int, default=None, help="number of tips (default 128)")
    p.add_argument("--grid", type=int, default=None, help="grid size (default 1024)")
    p.add_argument("--lengths", default=None, metavar="SPEC",
                   help="branch length sampler: lognormal[:MU:SIGMA], "
                        "constant:VALUE, or file:PATH")

    p = sub.add_parser("ipca", help="recover basis and coefficients from curves")
    _add_common(p)
    p.add_argument("--data", required=True, metavar="CSV", help="curve table")
    p.add_argument("--policy", default=None,
                   help="dimension policy, var:<fraction> or fixed:<k> (default var:0.99)")
    p.add_argument("--truth-basis", default=None, metavar="CSV",
                   help="reference basis for a recovery report")

    p = sub.add_parser("estimate", help="bagged hyperparameter fits per row")
    _add_common(p)
    p.add_argument("--tree", required=True, metavar="NWK")
    p.add_argument("--mixing", required=True, metavar="CSV", help="coefficient table")
    p.add_argument("--bags", type=int, default=None, help="bags per row (default 100)")
    p.add_argument("--bag-size", type=int, default=None,
                   help="tips per bag (default 100, capped at the tree size)")
    p.add_argument("--restarts", type=int, default=None, help="optimizer restarts (default 8)")
    p.add_argument("--ratio", default=None,
                   help="pin sigma_f^2/sigma_n^2: one value for all rows or a "
                        "comma list with 'free' for unconstrained rows")

    p = sub.add_parser("reconstruct", help="posterior curves at chosen nodes")
    _add_common(p)
    p.add_argument("--tree", required=True, metavar="NWK")
    p.add_argument("--basis", required=True, metavar="CSV", help="basis curves")
    p.add_argument("--mixing", required=True, metavar="CSV", help="tip coefficients")
    p.add_argument("--gamma", required=True, metavar="JSON", help="hyperparameter fits")
    p.add_argument("--mean-curve", default=None, metavar="CSV",
                   help="mean curve to add back (default zero)")
    p.add_argument("--targets", default=None,
                   help="root, all-internal, all-tips, or comma separated labels "
                        "(default all-internal)")
    p.add_argument("--truth-basis", default=None, metavar="CSV")
    p.add_argument("--truth-mixing", default=None, metavar="CSV",
                   help="true coefficients at target nodes, for a coverage report")

    p = sub.add_parser("robustness", help="randomized recovery experiment")
    _add_common(p)
    p.add_argument("--runs", type=int, default=None, help="number of runs (default 64)")
    p.add_argument("--tips", type=int, default=None, help="tips per run (default 64)")
    p.add_argument("--bags", type=int, default=None, help="bags per run (default 1, the whole tree)")
    p.add_argument("--bag-size", type=int, default=None,
                   help="tips per bag (default: all of them)")
    p.add_argument("--restarts", type=int, default=None)

    p = sub.add_parser("pipeline", help="simulate through reconstruct in one pass")
    _add_common(p)
    p.add_argument("--tips", type=int, default=None)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--policy", default=None)
    p.add_argument("--bags", type=int, default=None)
    p.add_argument("--bag-size", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--targets", default=None)

    return parser


def _load_config(path):
    if path is None:
        return {}
    doc = io.read_json(path)
    if not isinstance(doc, dict):
        raise _UsageError(f"config {path} must hold a JSON object")
    return doc


def _pick(args_value, config, key, default):
    if args_value is not None:
        return args_value
    return config.get(key, default)


def _sampler_from_spec(spec):
    if spec is None:
        return None
    parts = str(spec).split(":")
    kind = parts[0].lower()
    try:
        if kind == "lognormal":
            if len(parts) == 1:
                return LogNormalLengths()
            return LogNormalLengths(mu=float(parts[1]), sigma=float(parts[2]))
        if kind == "constant":
            return ConstantLength(float(parts[1]))
        if kind == "file":
            return EmpiricalLengths(parts[1])
    except (IndexError, ValueError) as exc:
        raise _UsageError(f"bad --lengths {spec!r}: {exc}") from None
    raise _UsageError(f"bad --lengths {spec!r}")


def _gammas_from_config(config):
    rows = config.get("gammas")
    if rows is None:
        return None
    out = []
    for row in rows:
        try:
            out.append(GammaVector(sigma_f=float(row["sigma_f"]),
                                   ell=None if row.get("ell") is None else float(row["ell"]),
                                   sigma_n=float(row["sigma_n"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise _UsageError(f"bad gamma entry {row!r}: {exc}") from None
    return out


def _parse_ratios(text, n_rows):
    if text is None:
        return None
    parts = [p.strip().lower() for p in str(text).split(",")]
    if len(parts) == 1:
        parts = parts * n_rows
    if len(parts) != n_rows:
        raise _UsageError(f"--ratio needs 1 or {n_rows} entries, got {len(parts)}")
    out = []
    for p in parts:
        if p in ("free", "none", ""):
            out.append(None)
            continue
        try:
            val = float(p)
        except ValueError:
            raise _UsageError(f"bad ratio entry {p!r}") from None
        if not val > 0:
            raise _UsageError(f"ratio must be positive, got {p!r}")
        out.append(val)
    return out


def _dispatch(args) -> int:
    config = _load_config(args.config)
    seed = int(_pick(args.seed, config, "seed", 0))
    render = not args.no_plots and config.get("plots", True)

    if args.command == "simulate":
        workflows.run_simulate(
            args.out, seed=seed,
            n_tips=int(_pick(args.tips, config, "tips", 128)),
            grid_size=int(_pick(args.grid, config, "grid", 1024)),
            gammas=_gammas_from_config(config),
            sampler=_sampler_from_spec(_pick(args.lengths, config, "lengths", None)),
            render=render)
        return 0

    if args.command == "ipca":
        workflows.run_ipca(
            args.out, data_path=args.data,
            policy=str(_pick(args.policy, config, "policy", "var:0.99")),
            seed=seed, truth_basis_path=args.truth_basis, render=render)
        return 0

    if args.command == "estimate":
        mixing, taxa = io.read_mixing_csv(args.mixing)
        tree = io.read_tree_file(args.tree)
        ratios = _parse_ratios(_pick(args.ratio, config, "ratio", None), mixing.shape[0])
        workflows.run_estimate(
            args.out, tree=tree, mixing=mixing, taxa=taxa,
            n_bags=int(_pick(args.bags, config, "bags", 100)),
            bag_size=int(_pick(args.bag_size, config, "bag_size", 100)),
            restarts=int(_pick(args.restarts, config, "restarts", 8)),
            seed=seed, ratios=ratios, render=render)
        return 0

    if args.command == "reconstruct":
        workflows.run_reconstruct(
            args.out, tree_path=args.tree, basis_path=args.basis,
            mixing_path=args.mixing, gamma_path=args.gamma,
            mean_curve_path=args.mean_curve,
            targets=str(_pick(args.targets, config, "targets", "all-internal")),
            truth_basis_path=args.truth_basis, truth_mixing_path=args.truth_mixing,
            render=render)
        return 0

    if args.command == "robustness":
        workflows.run_robustness(
            args.out, seed=seed,
            n_runs=int(_pick(args.runs, config, "runs", 64)),
            n_tips=int(_pick(args.tips, config, "tips", 64)),
            n_bags=int(_pick(args.bags, config, "bags", 1)),
            bag_size=_pick(args.bag_size, config, "bag_size", None),
            restarts=int(_pick(args.restarts, config, "restarts", 8)),
            render=render)
        return 0

    if args.command == "pipeline":
        workflows.run_pipeline(
            args.out, seed=seed,
            n_tips=int(_pick(args.tips, config, "tips", 128)),
            grid_size=int(_pick(args.grid, config, "grid", 1024)),
            policy=str(_pick(args.policy, config, "policy", "var:0.99")),
            n_bags=int(_pick(args.bags, config, "bags", 100)),
            bag_size=int(_pick(args.bag_size, config, "bag_size", 100)),
            restarts=int(_pick(args.restarts, config, "restarts", 8)),
            targets=str(_pick(args.targets, config, "targets", "all-internal")),
            gammas=_gammas_from_config(config),
            render=render)
        return 0

    raise _UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NewickParseError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
