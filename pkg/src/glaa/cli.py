"""Command-line front end: ``glaa {fit,tune,simulate,gla}``.

Exit codes: 0 success, 2 usage error (raised before any file is read),
3 input parse error, 4 dimension mismatch, 5 numerical failure (e.g. a
singular covariance), 1 anything else.  Errors print one line to stderr:
``glaa: error[<kind>]: <message>``.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .baselines import ula_estimate, ula_tensor  # noqa: F401  (re-exported for scripts)
from .estimator import (
    Dataset,
    GlaaConfig,
    SingularCovarianceError,
    center,
    fit,
    gla_tensor,
    sample_delta,
)
from .io import ParseError, read_matrix, tensor_document, write_csv, write_document
from .simulation import (
    TABLE_COLUMNS,
    ScenarioSpec,
    aggregate,
    check_design,
    run_replication,
)
from .tuning import TuningGrid, init_eta_from_quantile, tune, tuned_fit

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_PARSE, EXIT_DIM, EXIT_NUMERIC = 0, 1, 2, 3, 4, 5

log = logging.getLogger("glaa")


class DimensionError(ValueError):
    pass


# argument types; failures become usage errors before files are touched

def _triple(kind, conv, check, what):
    def parse(text):
        try:
            vals = tuple(conv(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected three comma-separated {what}, got {text!r}")
        if len(vals) != 3 or not all(check(v) for v in vals):
            raise argparse.ArgumentTypeError(f"expected three comma-separated {what}, got {text!r}")
        return vals
    parse.__name__ = kind
    return parse


ranks_arg = _triple("ranks", int, lambda v: v >= 1, "positive integers")
thresholds_arg = _triple("thresholds", float, lambda v: np.isfinite(v) and v >= 0, "nonnegative reals")


def _positive(conv):
    def parse(text):
        try:
            v = conv(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _candidates(text):
    """``a,b;c;d,e`` -> one candidate list per mode."""
    parts = text.split(";")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("candidates need three ';'-separated lists")
    try:
        out = [[float(v) for v in p.split(",") if v.strip()] for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad candidate list {text!r}")
    if any(not c or min(c) < 0 for c in out):
        raise argparse.ArgumentTypeError("each mode needs nonnegative candidates")
    return out


def _rho(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rho {text!r}")
    return vals


def build_parser():
    parser = argparse.ArgumentParser(prog="glaa", description="Generalized liquid association analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--x", required=True)
        p.add_argument("--y", required=True)
        p.add_argument("--z", required=True)
        p.add_argument("--log", action="store_true", help="log-transform every variable first")
        p.add_argument("--standardize", action="store_true", help="scale columns to unit variance")
        p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit at given thresholds")
    data_args(p)
    p.add_argument("--ranks", type=ranks_arg, required=True)
    p.add_argument("--eta", type=thresholds_arg, help="initialization thresholds")
    p.add_argument("--eta-tilde", type=thresholds_arg, default=(0.0, 0.0, 0.0))
    p.add_argument("--init-keep", type=_fraction, default=0.25,
                   help="fraction of rows kept at initialization when --eta is absent")
    p.add_argument("--max-iter", type=_positive(int), default=100)
    p.add_argument("--tol", type=_positive(float), default=1e-6)

    p = sub.add_parser("tune", help="choose iteration thresholds on held-out data")
    data_args(p)
    p.add_argument("--ranks", type=ranks_arg, required=True)
    p.add_argument("--grid-size", type=_positive(int), default=7)
    p.add_argument("--candidates", type=_candidates, help="explicit grid 'a,b;c;d'")
    p.add_argument("--split-frac", type=_fraction, default=0.8)
    p.add_argument("--n-splits", type=_positive(int), default=3)
    p.add_argument("--init-keep", type=_fraction, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--refit", action="store_true", help="also refit on all data")
    p.add_argument("--max-iter", type=_positive(int), default=100)
    p.add_argument("--tol", type=_positive(float), default=1e-6)

    p = sub.add_parser("simulate", help="replicate a simulation scenario")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--n", type=_positive(int))
    p.add_argument("--p1", type=_positive(int))
    p.add_argument("--p2", type=_positive(int))
    p.add_argument("--p3", type=_positive(int))
    p.add_argument("--f", choices=("sign", "sigmoid"), default="sign")
    p.add_argument("--rho", type=_rho, default=(0.95, 0.85))
    p.add_argument("--xi", type=_positive(float), default=1.0)
    p.add_argument("--reps", type=_positive(int), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=_positive(int), default=7)
    p.add_argument("--n-splits", type=_positive(int), default=3)
    p.add_argument("--split-frac", type=_fraction, default=0.8)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gla", help="write the GLA tensor")
    data_args(p)
    p.add_argument("--ridge", type=float)
    return parser


# helpers

def load_dataset(args):
    mats = [read_matrix(getattr(args, name)) for name in ("x", "y", "z")]
    rows = [m.shape[0] for m in mats]
    if len(set(rows)) != 1:
        raise DimensionError(f"row counts differ: x={rows[0]}, y={rows[1]}, z={rows[2]}")
    if args.log:
        for name, m in zip("xyz", mats):
            if np.any(m <= 0):
                raise ParseError(f"--log needs positive values; {name} has entries <= 0")
        mats = [np.log(m) for m in mats]
    data = center(Dataset(*mats))
    if args.standardize:
        scaled = []
        for name, m in zip("xyz", (data.x, data.y, data.z)):
            sd = m.std(axis=0, ddof=1)
            if np.any(sd == 0):
                raise DimensionError(f"--standardize: {name} has a constant column")
            scaled.append(m / sd)
        data = Dataset(*scaled, centered=True)
    return data


def _check_ranks(ranks, dims):
    for k, (r, p) in enumerate(zip(ranks, dims), start=1):
        if r > p:
            raise DimensionError(f"rank r{k}={r} exceeds dimension p{k}={p}")


def fit_document(res, data):
    g1, g2 = res.gamma[0], res.gamma[1]
    return {
        "loadings": [g.tolist() for g in res.gamma],
        "active": [[int(i) + 1 for i in a] for a in res.active],
        "initial_active": [[int(i) + 1 for i in a] for a in res.initial_active],
        "singular_values": [list(map(float, s)) for s in res.singular_values],
        "iterations": res.iterations,
        "converged": res.converged,
        "objective": res.objective,
        "fallbacks": res.fallbacks,
        "scores": {"x": (data.x @ g1).tolist(), "y": (data.y @ g2).tolist()},
    }


def _config_doc(cfg):
    return {"ranks": list(cfg.ranks), "eta": list(cfg.eta), "eta_tilde": list(cfg.eta_tilde),
            "max_iter": cfg.max_iter, "tol": cfg.tol}


# commands

def cmd_fit(args):
    data = load_dataset(args)
    _check_ranks(args.ranks, data.dims)
    delta = sample_delta(data)
    eta = args.eta if args.eta is not None else init_eta_from_quantile(delta, args.init_keep)
    cfg = GlaaConfig(ranks=args.ranks, eta=eta, eta_tilde=args.eta_tilde,
                     max_iter=args.max_iter, tol=args.tol)
    cfg.check_dims(delta.shape)
    res = fit(delta, cfg)
    doc = {"command": "fit", "version": __version__, "n": data.n, "dims": list(data.dims),
           "config": _config_doc(cfg)}
    doc.update(fit_document(res, data))
    write_document(args.out, doc)
    return EXIT_OK


def cmd_tune(args):
    data = load_dataset(args)
    _check_ranks(args.ranks, data.dims)
    GlaaConfig(ranks=args.ranks).check_dims(data.dims)
    grid = TuningGrid(eta_tilde_candidates=args.candidates, split_fraction=args.split_frac,
                      seed=args.seed, init_keep_fraction=args.init_keep,
                      grid_size=args.grid_size, n_splits=args.n_splits,
                      max_iter=args.max_iter, tol=args.tol)
    if args.split_frac >= 1:
        raise DimensionError("--split-frac must be below 1 for tuning")
    if args.refit:
        res, result = tuned_fit(data, args.ranks, grid)
    else:
        res, result = None, tune(data, args.ranks, grid)
    doc = {
        "command": "tune", "version": __version__, "n": data.n, "dims": list(data.dims),
        "seed": args.seed, "split_fraction": args.split_frac, "n_splits": args.n_splits,
        "best_eta_tilde": list(result.best_eta_tilde),
        "best_loss": result.best_loss,
        "init_eta": list(result.chosen_init_eta),
        "candidates": result.candidates,
        "loss_table": [{"eta_tilde": list(c), "loss": l} for c, l in result.loss_table],
        "degenerate": [list(c) for c in result.degenerate],
        "failures": [{"eta_tilde": list(f["eta_tilde"]), "error": f["error"]} for f in result.failures],
    }
    if res is not None:
        doc["refit_eta_tilde"] = list(result.refit_eta_tilde)
        doc["refit"] = fit_document(res, data)
    write_document(args.out, doc)
    return EXIT_OK


def _scenario(args):
    overrides = {"seed": args.seed, "f_kind": args.f, "rho": args.rho, "xi": args.xi}
    if args.n is not None:
        overrides["n"] = args.n
    base = ScenarioSpec.preset(args.scenario)
    p = list(base.p_dims)
    for k, name in enumerate(("p1", "p2", "p3")):
        if getattr(args, name) is not None:
            p[k] = getattr(args, name)
    if tuple(p) != base.p_dims:
        overrides["p_dims"] = tuple(p)
    return ScenarioSpec.preset(args.scenario, **overrides)


def cmd_simulate(args):
    try:
        spec = _scenario(args)
        check_design(spec)
    except ValueError as exc:
        raise DimensionError(f"invalid scenario: {exc}") from None
    if args.split_frac >= 1:
        raise DimensionError("--split-frac must be below 1 for tuning")
    grid = TuningGrid(grid_size=args.grid_size, n_splits=args.n_splits,
                      split_fraction=args.split_frac)
    os.makedirs(args.out, exist_ok=True)
    per_rep = {"glaa": [], "ula": []}
    records = []
    for rep in range(args.reps):
        out = run_replication(spec, rep, grid)
        for method in ("glaa", "ula"):
            row = out[method].row()
            per_rep[method].append(row)
            rec = {"rep": rep, "method": method}
            rec.update(row)
            rec["iterations"] = out["fit"].iterations if method == "glaa" else ""
            records.append(rec)
        log.info("rep %d: glaa d=%.3f ula d=%.3f", rep, out["glaa"].d_avg, out["ula"].d_avg)
    metric_cols = list(records[0].keys())
    metric_cols.remove("iterations")
    write_csv(os.path.join(args.out, "metrics.csv"), metric_cols + ["iterations"], records)

    summary = []
    for method in ("glaa", "ula"):
        agg = aggregate(per_rep[method])
        agg["method"] = method
        summary.append(agg)
    header = ["method", "reps"]
    for col in TABLE_COLUMNS:
        header += [col, f"{col}_se"]
    header.append("se_undefined")
    write_csv(os.path.join(args.out, "summary.csv"), header, summary)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_table(summary, spec))
    return EXIT_OK


def format_table(summary, spec):
    """Plain-text table in ``mean (se)`` form, one row per method."""
    cols = ["TPR-1", "FPR-1", "TPR-2", "FPR-2", "D"]
    lines = [f"scenario n={spec.n} p={spec.p_dims} f={spec.f_kind} seed={spec.seed}",
             "method  " + "  ".join(f"{c:>15}" for c in cols)]
    for agg in summary:
        cells = [f"{agg[c]:.3f} ({agg[c + '_se']:.3f})" for c in TABLE_COLUMNS]
        lines.append(f"{agg['method'].upper():<8}" + "  ".join(f"{c:>15}" for c in cells))
    if any(a["se_undefined"] for a in summary):
        lines.append("* one replication: standard errors undefined, shown as 0")
    return "\n".join(lines) + "\n"


def cmd_gla(args):
    data = load_dataset(args)
    delta = sample_delta(data)
    sigma_z = data.z.T @ data.z / data.n
    if args.ridge is not None and args.ridge < 0:
        raise DimensionError("--ridge must be nonnegative")
    phi = gla_tensor(delta, sigma_z, ridge=args.ridge, auto_ridge=False)
    doc = {"command": "gla", "version": __version__, "n": data.n,
           "ridge": args.ridge if args.ridge is not None else 0.0}
    doc.update(tensor_document(phi))
    write_document(args.out, doc)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "simulate": cmd_simulate, "gla": cmd_gla}


def _fail(kind, msg, code):
    first = str(msg).splitlines()[0] if str(msg) else kind
    print(f"glaa: error[{kind}]: {first}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ParseError as exc:
        return _fail("parse", exc, EXIT_PARSE)
    except DimensionError as exc:
        return _fail("dimension", exc, EXIT_DIM)
    except SingularCovarianceError as exc:
        return _fail("singular", f"{exc}; rerun with --ridge EPS", EXIT_NUMERIC)
    except np.linalg.LinAlgError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _fail("dimension", exc, EXIT_DIM)
    except OSError as exc:
        return _fail("io", exc, EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
