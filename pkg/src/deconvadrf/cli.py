"""Command-line surface.

Commands: estimate, ci, tune, simulate, replicate-phi, report.  Every output
file is paired with a provenance JSON holding the resolved configuration,
seed, error model, and smoothing parameters, so any run can be repeated
bit-identically.  Exit codes: 0 success, 2 input error, 3 configuration or
tuning error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import (AllWeightsZero, DeconvAdrfError, InputDataError,
                     NoiseExceedsSignal, TooManySkipped)
from .estimator import ObservedSample, mu_hat, naive_mu
from .gel import get_criterion
from .inference import ci_pointwise
from .kernels import (ErrorModel, estimate_cf_from_replicates,
                      read_replicate_pairs, write_cf_csv)
from .simlab import MODELS, run_monte_carlo
from .tuning import SimexConfig, SmoothingParams, two_step_tune

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def read_sample_csv(path):
    """CSV with mandatory headers s, y, x1..xr; returns (s, x, y)."""
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise CliError(f"cannot open input: {exc}", EXIT_INPUT)
    with f:
        reader = csv.reader(f)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise CliError("input CSV is empty", EXIT_INPUT)
        for col in ("s", "y"):
            if col not in header:
                raise CliError(f"input CSV missing column '{col}'", EXIT_INPUT)
        x_cols = []
        i = 1
        while f"x{i}" in header:
            x_cols.append(header.index(f"x{i}"))
            i += 1
        if not x_cols:
            raise CliError("input CSV missing covariate column 'x1'",
                           EXIT_INPUT)
        si, yi = header.index("s"), header.index("y")
        s, y, x = [], [], []
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                s.append(float(row[si]))
                y.append(float(row[yi]))
                x.append([float(row[j]) for j in x_cols])
            except (ValueError, IndexError):
                raise CliError(f"malformed data row at line {ln}", EXIT_INPUT)
    if len(s) < 20:
        raise CliError(f"need at least 20 data rows, got {len(s)}", EXIT_INPUT)
    return np.asarray(s), np.asarray(x), np.asarray(y)


def resolve_error_model(args, s: np.ndarray) -> ErrorModel:
    """Build the declared error model; exactly one source must be given."""
    sources = [args.error_variance is not None, args.error_ratio is not None,
               getattr(args, "error_descriptor", None) is not None]
    if getattr(args, "error_descriptor", None) is not None:
        if args.error_kind is not None or sum(sources) > 1:
            raise CliError("--error-descriptor excludes other error flags",
                           EXIT_CONFIG)
        return load_error_descriptor(args.error_descriptor)
    kind = args.error_kind
    if kind is None:
        raise CliError("an error model must be declared (--error-kind or "
                       "--error-descriptor)", EXIT_CONFIG)
    if kind == "none":
        if sum(sources) > 0:
            raise CliError("--error-kind none takes no variance flags",
                           EXIT_CONFIG)
        return ErrorModel.none()
    if sum(sources) != 1:
        raise CliError("declare exactly one of --error-variance or "
                       "--error-ratio", EXIT_CONFIG)
    if args.error_variance is not None:
        variance = args.error_variance
    else:
        if not (0.0 < args.error_ratio < 1.0):
            raise CliError("--error-ratio must lie in (0, 1)", EXIT_CONFIG)
        variance = args.error_ratio * float(np.var(s, ddof=1))
    if variance <= 0:
        raise CliError("error variance must be > 0", EXIT_CONFIG)
    if kind == "laplace":
        return ErrorModel.laplace(variance)
    return ErrorModel.gaussian(variance)


def load_error_descriptor(path) -> ErrorModel:
    try:
        with open(path) as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read error descriptor: {exc}", EXIT_INPUT)
    if d.get("kind") != "replicate":
        raise CliError("error descriptor must have kind 'replicate'",
                       EXIT_INPUT)
    cf_path = d.get("cf_csv")
    if cf_path and not os.path.isabs(cf_path):
        cf_path = os.path.join(os.path.dirname(os.path.abspath(path)), cf_path)
    try:
        with open(cf_path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
    except (OSError, TypeError, ValueError, IndexError) as exc:
        raise CliError(f"cannot read tabulated CF: {exc}", EXIT_INPUT)
    arr = np.asarray(rows)
    return ErrorModel(ErrorModel.REPLICATE, float(d["variance"]),
                      w_grid=arr[:, 0], phi_grid=arr[:, 1],
                      floor_onset=d.get("floor_onset"))


def default_grid_from_s(s: np.ndarray, n_points: int) -> np.ndarray:
    lo, hi = np.quantile(s, [0.05, 0.95])
    return np.linspace(lo, hi, n_points)


def write_provenance(path, args, extra: dict) -> None:
    # threads never influences results, so it is excluded to keep outputs
    # byte-identical across worker-pool sizes
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "threads") and not callable(v)}
    doc = {"tool": "deconvadrf", "version": __version__, "config": config}
    doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _tuned_params(sample, args) -> SmoothingParams:
    if args.k is not None and args.h0 is not None and args.h is not None:
        return SmoothingParams(K=args.k, h0=args.h0, h=args.h,
                               provenance="manual")
    if any(v is not None for v in (args.k, args.h0, args.h)):
        raise CliError("give all of --k/--h0/--h or none", EXIT_CONFIG)
    cfg = SimexConfig(seed=args.seed)
    try:
        return two_step_tune(sample, get_criterion(args.criterion),
                             args.basis, cfg)
    except (NoiseExceedsSignal, AllWeightsZero, ValueError) as exc:
        raise CliError(f"tuning failed: {exc}", EXIT_CONFIG)


def cmd_estimate(args) -> int:
    s, x, y = read_sample_csv(args.input)
    error = resolve_error_model(args, s)
    try:
        sample = ObservedSample(s, x, y, error)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    params = _tuned_params(sample, args)
    grid = default_grid_from_s(s, args.grid_n)
    criterion = get_criterion(args.criterion)
    try:
        if args.naive:
            curve = naive_mu(sample, criterion, grid, params=params,
                             basis_family=args.basis)
        else:
            curve = mu_hat(sample, params, criterion, grid,
                           basis_family=args.basis)
    except DeconvAdrfError as exc:
        raise CliError(f"estimation failed: {exc}", EXIT_NUMERIC)
    os.makedirs(args.output_dir, exist_ok=True)
    out = os.path.join(args.output_dir, "curve.csv")
    curve.to_csv(out)
    write_provenance(os.path.join(args.output_dir, "curve.json"), args,
                     {"error_model": error.to_dict(),
                      "params": params.to_dict(),
                      "curve": curve.provenance()})
    print(out)
    return EXIT_OK


def cmd_ci(args) -> int:
    if not (0.0 < args.alpha < 1.0):
        raise CliError("--alpha must lie in (0, 1)", EXIT_INPUT)
    s, x, y = read_sample_csv(args.input)
    error = resolve_error_model(args, s)
    try:
        sample = ObservedSample(s, x, y, error)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    params = _tuned_params(sample, args)
    grid = default_grid_from_s(s, args.grid_n)
    try:
        band = ci_pointwise(sample, params, get_criterion(args.criterion),
                            grid, alpha=args.alpha, basis_family=args.basis)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    except DeconvAdrfError as exc:
        raise CliError(f"inference failed: {exc}", EXIT_NUMERIC)
    os.makedirs(args.output_dir, exist_ok=True)
    out = os.path.join(args.output_dir, "ci.csv")
    band.to_csv(out)
    warnings = []
    if band.degenerate:
        warnings.append({"degenerate_variance":
                         [int(i) for i in band.degenerate]})
    write_provenance(os.path.join(args.output_dir, "ci.json"), args,
                     {"error_model": error.to_dict(),
                      "params": params.to_dict(),
                      "alpha": band.alpha,
                      "undersmooth_factor": band.undersmooth_factor,
                      "skipped": [int(i) for i in band.skipped],
                      "warnings": warnings})
    print(out)
    return EXIT_OK


def cmd_tune(args) -> int:
    s, x, y = read_sample_csv(args.input)
    error = resolve_error_model(args, s)
    try:
        sample = ObservedSample(s, x, y, error)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    cfg = SimexConfig(seed=args.seed)
    try:
        params = two_step_tune(sample, get_criterion(args.criterion),
                               args.basis, cfg)
    except (NoiseExceedsSignal, AllWeightsZero, ValueError) as exc:
        raise CliError(f"tuning failed: {exc}", EXIT_CONFIG)
    os.makedirs(args.output_dir, exist_ok=True)
    out = os.path.join(args.output_dir, "params.json")
    write_provenance(out, args, {"error_model": error.to_dict(),
                                 "params": params.to_dict()})
    print(out)
    return EXIT_OK


PRESETS = {
    "fig1": {"models": [1, 2], "sizes": [500], "reps": 200,
             "error_kind": "laplace",
             "estimators": ["cm-tuned", "nv-tuned"]},
}


def cmd_simulate(args) -> int:
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise CliError(f"unknown preset {args.preset!r}", EXIT_CONFIG)
        p = PRESETS[args.preset]
        models, sizes = p["models"], p["sizes"]
        reps, estimators = p["reps"], p["estimators"]
        error_kind = p["error_kind"]
    else:
        models = [int(m) for m in args.models.split(",")]
        sizes = [int(n) for n in args.sizes.split(",")]
        reps = args.reps
        estimators = args.estimators.split(",")
        error_kind = args.error_kind or "laplace"
    for mid in models:
        if mid not in MODELS:
            raise CliError(f"invalid model id {mid}", EXIT_CONFIG)
    try:
        report = run_monte_carlo(models, estimators, reps, sizes,
                                 error_kind=error_kind,
                                 criterion=args.criterion, seed=args.seed,
                                 grid_points=args.grid_n)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    os.makedirs(args.output_dir, exist_ok=True)
    json_path = os.path.join(args.output_dir, "report.json")
    with open(json_path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    report.to_csv(os.path.join(args.output_dir, "report.csv"))
    write_provenance(os.path.join(args.output_dir, "simulate.json"), args,
                     {"report_config": report.config})
    print(json_path)
    return EXIT_OK


def cmd_replicate_phi(args) -> int:
    from .errors import InsufficientReplicates
    try:
        pairs = read_replicate_pairs(args.input)
        model = estimate_cf_from_replicates(pairs)
    except (InputDataError, InsufficientReplicates) as exc:
        raise CliError(str(exc), EXIT_INPUT)
    except DeconvAdrfError as exc:
        raise CliError(str(exc), EXIT_NUMERIC)
    os.makedirs(args.output_dir, exist_ok=True)
    cf_path = os.path.join(args.output_dir, "phi_u.csv")
    write_cf_csv(model, cf_path)
    desc_path = os.path.join(args.output_dir, "error_model.json")
    with open(desc_path, "w") as f:
        json.dump({"kind": "replicate", "variance": model.variance,
                   "floor_onset": model.floor_onset,
                   "cf_csv": os.path.basename(cf_path)},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    write_provenance(os.path.join(args.output_dir, "replicate_phi.json"),
                     args, {"n_pairs": int(pairs.shape[0]),
                            "error_model": model.to_dict()})
    print(desc_path)
    return EXIT_OK


def cmd_report(args) -> int:
    """Condense a simulation report JSON into a plot-ready summary CSV."""
    try:
        with open(args.input) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read report: {exc}", EXIT_INPUT)
    summary = doc.get("summary")
    if not isinstance(summary, list):
        raise CliError("report JSON has no summary section", EXIT_INPUT)
    os.makedirs(args.output_dir, exist_ok=True)
    out = os.path.join(args.output_dir, "summary.csv")
    cols = ["model", "estimator", "n", "reps", "failures",
            "ise_q1", "ise_median", "ise_q3"]
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in summary:
            w.writerow(["" if row.get(c) is None
                        else (repr(row[c]) if isinstance(row[c], float)
                              else row[c]) for c in cols])
    print(out)
    return EXIT_OK


def _add_common(p, with_error=True):
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--criterion", choices=["et", "el", "cue", "ilog"],
                   default="et")
    p.add_argument("--basis", choices=["power", "bspline"], default="power")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker pool size; results are identical for any value")
    p.add_argument("--grid-n", type=int, default=201)
    if with_error:
        p.add_argument("--error-kind",
                       choices=["laplace", "gaussian", "none"])
        p.add_argument("--error-variance", type=float)
        p.add_argument("--error-ratio", type=float,
                       help="error variance as a fraction of var(S)")
        p.add_argument("--error-descriptor",
                       help="error-model JSON produced by replicate-phi")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="deconvadrf",
        description="Dose-response estimation under treatment "
                    "measurement error")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the dose-response curve")
    _add_common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--h0", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--naive", action="store_true",
                   help="error-ignoring comparator")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ci", help="pointwise confidence band")
    _add_common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--h0", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("tune", help="select smoothing parameters only")
    _add_common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--models", default="1")
    p.add_argument("--sizes", default="250")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--estimators", default="cm-tuned,nv-tuned")
    p.add_argument("--error-kind", choices=["laplace", "gaussian", "none"])
    p.add_argument("--criterion", choices=["et", "el", "cue", "ilog"],
                   default="et")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--grid-n", type=int, default=201)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate-phi",
                       help="estimate the error characteristic function "
                            "from replicate measurements")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_replicate_phi)

    p = sub.add_parser("report", help="summarise a simulation report")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; keep that for missing/bad flags
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TooManySkipped as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DeconvAdrfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
