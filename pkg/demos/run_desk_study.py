"""
Desk-scale Monte Carlo study
============================

Regenerates the persisted runs read by the acceptance suite:

* ``runs/desk_default``: 200 trials of 250 subjects per arm under the default
  censoring, knots chosen by AIC over 2..11;
* ``runs/cbld15``: 50 trials with the censoring cap lowered until 15% of
  subjects are censored beyond the last observed death.

Runs resume from ``replicates.jsonl``, so an interrupted study picks up where
it stopped.  Usage::

    python3 demos/run_desk_study.py [--workers N] [--only desk|cbld15]
"""
import argparse
import json
import logging
from pathlib import Path

from terminaltrend.simulation import SimConfig, run_monte_carlo, scenario_config

ROOT = Path(__file__).resolve().parents[1] / "runs"

parser = argparse.ArgumentParser(description=__doc__.split("\n")[1])
parser.add_argument("--workers", type=int, default=1)
parser.add_argument("--only", choices=("desk", "cbld15"), default=None)
args = parser.parse_args()
logging.basicConfig(level=logging.WARNING)


def progress(index, rec):
    status = rec.get("error", f"k_aic={rec.get('k_aic')}")
    print(f"  replicate {index:3d}: {status}", flush=True)


studies = {"desk": ("desk_default", SimConfig(), 200),
           "cbld15": ("cbld15", scenario_config("cbld15"), 50)}
for key, (name, cfg, n_reps) in studies.items():
    if args.only and key != args.only:
        continue
    print(f"{name}: {n_reps} replicates, censoring cap {cfg.censor_cap:.3f}")
    rep = run_monte_carlo(cfg, n_reps, out_dir=ROOT / name, progress=progress,
                          workers=args.workers)
    rep.write(ROOT / name)
    print(json.dumps(rep.summary(), indent=2, default=float))
    print(rep.table1.round(4).to_string(index=False))
