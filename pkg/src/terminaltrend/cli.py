"""Command-line front end.

Subcommands: ``fit``, ``qaly``, ``simulate`` and ``observed-means``.  Every
subcommand writes ``manifest.json`` next to its outputs; its ``argv`` entry,
run from its ``cwd``, re-runs the command.  Exit codes: 0 success, 1 bad input or failure,
2 fit completed but flagged as not converged.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import DataValidationError, apply_efron_adjustment, load_dataset, observed_means
from .estimator import FitOptions, FitResult, curve_ci, fit, select_knots
from .likelihood import LikelihoodError
from .qaly import FACIT_PAL_MAX, qaly_table
from .simulation import DEFAULT_GRID, SCENARIOS, SimConfig, run_monte_carlo, scenario_config

log = logging.getLogger("terminaltrend")

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2
FLOAT_FMT = "%.15g"


class CliError(Exception):
    """Input problem reported with exit code 1."""


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv: list[str], seed=None, input_path=None,
                   config_path=None, extra=None) -> dict:
    man = {
        "command": command, "argv": list(argv), "cwd": str(Path.cwd()), "seed": seed,
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "output_dir": str(out.resolve()),
        "input_path": None if input_path is None else str(Path(input_path).resolve()),
        "input_sha256": None if input_path is None else _sha256(input_path),
        "config_path": None if config_path is None else str(Path(config_path).resolve()),
    }
    man.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(man, indent=2))
    return man


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN..MAX, got {text!r}") from None
    if not 2 <= lo <= hi:
        raise argparse.ArgumentTypeError("need 2 <= MIN <= MAX")
    return lo, hi


def _parse_grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP:STEP, got {text!r}") from None
    if step <= 0 or stop < start or start < 0:
        raise argparse.ArgumentTypeError("grid needs 0 <= START <= STOP and STEP > 0")
    return np.arange(start, stop + step * 1e-9, step)


def _load(path, efron=True):
    try:
        ds = load_dataset(path)
    except FileNotFoundError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except DataValidationError as exc:
        raise CliError(str(exc)) from None
    return apply_efron_adjustment(ds) if efron else ds


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# fit

def _cumhaz_frame(result: FitResult) -> pd.DataFrame:
    ds = result.dataset
    xbar = np.mean([s.x_surv for s in ds.subjects], axis=0)
    alpha = result.u_hat[result.layout.alpha]
    bh = result.hazard
    rows = []
    for arm in (0, 1):
        scale = np.exp(arm * alpha[0] + xbar @ alpha[1:])
        rows.append(pd.DataFrame({"arm": arm, "time": bh.death_times,
                                  "cumhaz": scale * bh.cumulative}))
    return pd.concat(rows, ignore_index=True)


def cmd_fit(args, argv) -> int:
    out = _out_dir(args.out)
    if args.no_efron:
        ds = _load(args.data, efron=False)
        # pretend the adjustment happened so the likelihood reports the real obstacle
        ds = dataclasses.replace(ds, efron_applied=True)
    else:
        ds = _load(args.data)
    options = FitOptions()
    sweep = None
    try:
        if args.select_knots:
            sel = select_knots(ds, *args.select_knots, criterion=args.criterion, options=options)
            result = sel.fits[sel.k1]
            sweep = sel.table
        else:
            result = fit(ds, args.k1, options)
    except LikelihoodError as exc:
        raise CliError(f"likelihood undefined: {exc}") from None
    result.summary().to_csv(out / "params.csv", index=False, float_format=FLOAT_FMT)
    if result.converged:
        curve_ci(result, args.grid, "mu").to_frame().to_csv(
            out / "curves_mu.csv", index=False, float_format=FLOAT_FMT)
        curve_ci(result, args.grid, "A").to_frame().to_csv(
            out / "curves_trt.csv", index=False, float_format=FLOAT_FMT)
    _cumhaz_frame(result).to_csv(out / "cumhaz.csv", index=False, float_format=FLOAT_FMT)
    info = result.to_dict()
    info["data_path"] = str(Path(args.data).resolve())
    info["criterion"] = args.criterion if args.select_knots else None
    info["sweep"] = None if sweep is None else json.loads(sweep.to_json(orient="records"))
    (out / "fit.json").write_text(json.dumps(info, indent=2))
    write_manifest(out, "fit", argv, seed=args.seed, input_path=args.data)
    if not result.converged:
        print(f"warning: fit did not converge (|grad| = {result.grad_norm:.3g})", file=sys.stderr)
        return EXIT_NONCONVERGED
    print(f"k1={result.k1} loglik={result.loglik:.6f} AIC={result.aic:.4f} BIC={result.bic:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# qaly

def cmd_qaly(args, argv) -> int:
    fit_dir = Path(args.fit)
    try:
        info = json.loads((fit_dir / "fit.json").read_text())
    except FileNotFoundError:
        raise CliError(f"no fit.json in {fit_dir}") from None
    if not info["converged"]:
        print("error: the stored fit did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    ds = _load(info["data_path"])
    try:
        result = FitResult.from_dict(info, ds)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for h in args.horizon:
        if not h > 0:
            raise CliError(f"horizon must be positive, got {h}")
    table = qaly_table(result, args.horizon, args.scale)
    out = _out_dir(args.out)
    table.to_csv(out / "qaly.csv", index=False, float_format=FLOAT_FMT)
    write_manifest(out, "qaly", argv, input_path=info["data_path"],
                   extra={"fit_dir": str(fit_dir.resolve())})
    for row in table.itertuples():
        print(f"horizon {row.horizon:g}  arm {row.arm:>3}  {row.formatted}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args, argv) -> int:
    base = SimConfig.from_json(args.config) if args.config else SimConfig()
    if args.seed is not None:
        base = dataclasses.replace(base, seed=args.seed)
    cfg = scenario_config(args.scenario, base)
    out = _out_dir(args.out)
    rep = run_monte_carlo(cfg, args.reps, tuple(args.k_range), out_dir=out,
                          resume=False, workers=args.threads)
    rep.write(out)
    write_manifest(out, "simulate", argv, seed=cfg.seed, config_path=args.config,
                   extra={"scenario": args.scenario, "sim_config": cfg.to_dict()})
    s = rep.summary()
    print(f"{rep.n_ok}/{rep.n_reps} replicates ok; censoring "
          f"{s['censoring']['overall']:.3f}/{s['censoring']['group3']:.3f}/"
          f"{s['censoring']['cbld']:.3f} (overall/group 3/CBLD)")
    if not rep.valid:
        print("error: more than 10% of replicates failed; report flagged invalid", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ---------------------------------------------------------------------------
# observed means

def cmd_observed_means(args, argv) -> int:
    ds = _load(args.data, efron=False)
    df = observed_means(ds, args.visits, args.window)
    out = _out_dir(args.out)
    df.to_csv(out / "observed_means.csv", index=False, float_format=FLOAT_FMT)
    write_manifest(out, "observed-means", argv, input_path=args.data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terminaltrend", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the joint model to a long-format CSV")
    f.add_argument("--data", required=True)
    g = f.add_mutually_exclusive_group(required=True)
    g.add_argument("--k1", type=int, help="spline basis dimension")
    g.add_argument("--select-knots", type=_parse_range, metavar="MIN..MAX")
    f.add_argument("--criterion", choices=("aic", "bic"), default="aic")
    f.add_argument("--out", required=True)
    f.add_argument("--no-efron", action="store_true",
                   help="skip the last-observation-as-death adjustment (fails when needed)")
    f.add_argument("--grid", type=_parse_grid, default=DEFAULT_GRID,
                   metavar="START:STOP:STEP", help="retrospective-time grid for curve exports")
    f.add_argument("--seed", type=int, default=None, help="recorded only; fitting is deterministic")
    f.add_argument("--threads", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("qaly", help="mean QALY from a fit directory")
    q.add_argument("--fit", required=True)
    q.add_argument("--horizon", type=float, action="append", required=True,
                   help="horizon in months; repeat for several")
    q.add_argument("--scale", type=float, default=FACIT_PAL_MAX,
                   help="outcome scale maximum used as the utility denominator")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_qaly)

    s = sub.add_parser("simulate", help="Monte Carlo study")
    s.add_argument("--config", default=None, help="SimConfig JSON")
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", default="default")
    s.add_argument("--k-range", type=_parse_range, default=(2, 11), metavar="MIN..MAX")
    s.add_argument("--threads", type=int, default=1, help="worker processes")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("observed-means", help="raw outcome means by arm around visits")
    o.add_argument("--data", required=True)
    o.add_argument("--visits", type=lambda t: [float(v) for v in t.split(",")], required=True)
    o.add_argument("--window", type=float, required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_observed_means)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors are input errors; 2 is reserved for non-convergence
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate" and args.scenario not in SCENARIOS:
        print(f"error: unknown scenario {args.scenario!r}; choose from "
              f"{', '.join(SCENARIOS)}", file=sys.stderr)
        return EXIT_ERROR
    if getattr(args, "reps", 1) < 1 or getattr(args, "threads", 1) < 1:
        print("error: --reps and --threads must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
