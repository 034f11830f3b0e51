"""Trial data containers, CSV ingestion and the four-way subject partition."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

__all__ = [
    "DataValidationError", "Subject", "Dataset", "GroupPartition",
    "load_dataset", "write_dataset", "apply_efron_adjustment", "partition_groups",
    "retrospective_times", "observed_means",
]


class DataValidationError(ValueError):
    """Raised when an input file fails validation; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(eq=False)
class Subject:
    """One trial participant.

    ``meas_times`` are prospective (months since enrollment) and sorted;
    ``z`` holds one row of random-effect covariates per measurement.
    """

    id: str
    arm: int
    obs_time: float
    event: bool
    x_long: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_surv: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meas_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meas_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: np.ndarray | None = None

    def __post_init__(self):
        self.x_long = np.atleast_1d(np.asarray(self.x_long, dtype=float))
        self.x_surv = np.atleast_1d(np.asarray(self.x_surv, dtype=float))
        t = np.atleast_1d(np.asarray(self.meas_times, dtype=float))
        y = np.atleast_1d(np.asarray(self.meas_values, dtype=float))
        if t.shape != y.shape:
            raise ValueError(f"subject {self.id}: {t.size} times but {y.size} values")
        if self.z is None:
            z = np.ones((t.size, 1))
        else:
            z = np.asarray(self.z, dtype=float)
            if z.ndim != 2:
                z = z.reshape(t.size, -1) if t.size else np.zeros((0, 1))
            if z.shape[0] != t.size:
                raise ValueError(f"subject {self.id}: z needs one row per measurement")
        order = np.argsort(t, kind="stable")
        self.meas_times, self.meas_values, self.z = t[order], y[order], z[order]
        if self.arm not in (0, 1):
            raise ValueError(f"subject {self.id}: arm must be 0 or 1, got {self.arm}")
        if not self.obs_time > 0:
            raise ValueError(f"subject {self.id}: obs_time must be positive")
        if t.size and (t[0] < 0 or self.meas_times[-1] > self.obs_time):
            raise ValueError(f"subject {self.id}: measurement times must lie in [0, obs_time]")
        self.arm = int(self.arm)
        self.event = bool(self.event)
        self.obs_time = float(self.obs_time)

    @property
    def n_meas(self) -> int:
        return self.meas_times.size

    def same_as(self, other: "Subject") -> bool:
        return (self.id == other.id and self.arm == other.arm
                and self.obs_time == other.obs_time and self.event == other.event
                and np.array_equal(self.x_long, other.x_long)
                and np.array_equal(self.x_surv, other.x_surv)
                and np.array_equal(self.meas_times, other.meas_times)
                and np.array_equal(self.meas_values, other.meas_values)
                and np.array_equal(self.z, other.z))


@dataclass(frozen=True)
class Dataset:
    subjects: tuple[Subject, ...]
    efron_applied: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")
        if self.subjects:
            dims = {(s.x_long.size, s.x_surv.size, s.z.shape[1]) for s in self.subjects}
            if len(dims) > 1:
                raise ValueError(f"inconsistent covariate dimensions across subjects: {dims}")

    def __len__(self):
        return len(self.subjects)

    @property
    def P(self) -> int:
        return self.subjects[0].x_long.size

    @property
    def Q(self) -> int:
        return self.subjects[0].x_surv.size

    @property
    def L(self) -> int:
        return self.subjects[0].z.shape[1]

    def subset(self, ids) -> "Dataset":
        keep = set(ids)
        return replace(self, subjects=tuple(s for s in self.subjects if s.id in keep))


@dataclass(frozen=True)
class GroupPartition:
    """Subject ids by likelihood group.

    g1: observed death with measurements; g2: observed death without;
    g3: censored with measurements; g4: censored without.
    """

    g1: tuple[str, ...]
    g2: tuple[str, ...]
    g3: tuple[str, ...]
    g4: tuple[str, ...]

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return len(self.g1), len(self.g2), len(self.g3), len(self.g4)


# ---------------------------------------------------------------------------
# CSV ingestion

_REQUIRED = ("id", "arm", "obs_time", "event", "y", "t_meas")


def _numbered(header, prefix):
    pat = re.compile(rf"^{prefix}(\d+)$")
    cols = [(int(m.group(1)), h) for h in header if (m := pat.match(h))]
    return [h for _, h in sorted(cols)]


def load_dataset(path, schema: dict | None = None) -> Dataset:
    """Read a long-format CSV into a :class:`Dataset`.

    Each subject has one survival row (``y`` and ``t_meas`` empty) and one row
    per measurement.  Longitudinal covariates are columns ``x1..xP``, survival
    covariates ``xs1..xsQ`` and random-effect covariates ``z1..zL``; without
    ``z`` columns a random intercept is used.  ``schema`` maps canonical column
    names to the names used in the file.

    All validation problems are collected and raised together as a
    :class:`DataValidationError` whose messages carry 1-based file line numbers.
    """
    path = Path(path)
    rename = {v: k for k, v in (schema or {}).items()}
    errors = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataValidationError([f"{path}: empty file"])
        header = [rename.get(h.strip(), h.strip()) for h in reader.fieldnames]
        missing = [c for c in _REQUIRED if c not in header]
        if missing:
            raise DataValidationError([f"missing required column '{c}'" for c in missing])
        rows = [(i + 2, {header[j]: (v or "").strip() for j, v in enumerate(r.values())})
                for i, r in enumerate(reader)]
    xcols, xscols, zcols = _numbered(header, "x"), _numbered(header, "xs"), _numbered(header, "z")

    def num(row, line, col, required=True):
        raw = row.get(col, "")
        if raw == "":
            if required:
                errors.append(f"line {line}: column '{col}' is empty")
            return math.nan
        try:
            val = float(raw)
        except ValueError:
            errors.append(f"line {line}: column '{col}' is not numeric: {raw!r}")
            return math.nan
        if not math.isfinite(val):
            errors.append(f"line {line}: column '{col}' is not finite")
        return val

    surv, meas = {}, {}
    for line, row in rows:
        sid = row["id"]
        if sid == "":
            errors.append(f"line {line}: empty id")
            continue
        if row["y"] == "" and row["t_meas"] == "":
            if sid in surv:
                errors.append(f"line {line}: second survival row for id {sid}")
                continue
            ev = num(row, line, "event")
            arm = num(row, line, "arm")
            if ev == ev and ev not in (0.0, 1.0):
                errors.append(f"line {line}: event must be 0 or 1")
            if arm == arm and arm not in (0.0, 1.0):
                errors.append(f"line {line}: arm must be 0 or 1")
            surv[sid] = dict(
                line=line, arm=arm, event=ev, obs_time=num(row, line, "obs_time"),
                x=[num(row, line, c) for c in xcols], xs=[num(row, line, c) for c in xscols])
        else:
            t, y = num(row, line, "t_meas"), num(row, line, "y")
            z = [num(row, line, c) for c in zcols] if zcols else [1.0]
            meas.setdefault(sid, []).append((line, t, y, z))

    subjects = []
    for sid, m in meas.items():
        if sid not in surv:
            errors.append(f"line {m[0][0]}: id {sid} has measurements but no survival row")
    for sid, s in surv.items():
        ms = meas.get(sid, [])
        seen = {}
        for line, t, _, _ in ms:
            if t in seen:
                errors.append(f"line {line}: duplicate measurement time {t} for id {sid} "
                              f"(also line {seen[t]})")
            seen[t] = line
            if t == t and s["obs_time"] == s["obs_time"] and t > s["obs_time"]:
                errors.append(f"line {line}: measurement time {t} exceeds obs_time "
                              f"{s['obs_time']} for id {sid}")
            if t < 0:
                errors.append(f"line {line}: negative measurement time for id {sid}")
        if s["obs_time"] == s["obs_time"] and s["obs_time"] <= 0:
            errors.append(f"line {s['line']}: obs_time must be positive")
        if errors:
            continue
        subjects.append(Subject(
            id=sid, arm=int(s["arm"]), obs_time=s["obs_time"], event=bool(s["event"]),
            x_long=s["x"], x_surv=s["xs"],
            meas_times=[t for _, t, _, _ in ms], meas_values=[y for _, _, y, _ in ms],
            z=np.array([z for *_, z in ms], dtype=float).reshape(len(ms), -1) if ms
            else np.zeros((0, max(len(zcols), 1)))))
    if errors:
        raise DataValidationError(errors)
    return Dataset(tuple(subjects), meta={"source": str(path),
                                          "x_columns": xcols, "xs_columns": xscols,
                                          "z_columns": zcols})


def write_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` in the long CSV format read by :func:`load_dataset`."""
    P, Q, L = ds.P, ds.Q, ds.L
    header = (["id", "arm", "obs_time", "event", "y", "t_meas"]
              + [f"x{j + 1}" for j in range(P)] + [f"xs{j + 1}" for j in range(Q)]
              + [f"z{j + 1}" for j in range(L)])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in ds.subjects:
            base = [s.id, s.arm, repr(s.obs_time), int(s.event)]
            covs = [repr(float(v)) for v in s.x_long] + [repr(float(v)) for v in s.x_surv]
            w.writerow(base + ["", ""] + covs + [""] * L)
            for t, y, z in zip(s.meas_times, s.meas_values, s.z):
                w.writerow(base + [repr(float(y)), repr(float(t))] + covs
                           + [repr(float(v)) for v in z])


# ---------------------------------------------------------------------------
# Adjustments and partitions

def apply_efron_adjustment(ds: Dataset) -> Dataset:
    """Treat the largest observed time as a death, whatever its censoring status.

    Every subject tied at the maximum ``obs_time`` becomes an event.  The
    operation is idempotent.
    """
    if not ds.subjects:
        raise ValueError("dataset is empty")
    t_max = max(s.obs_time for s in ds.subjects)
    subjects = tuple(replace(s, event=True) if s.obs_time == t_max and not s.event else s
                     for s in ds.subjects)
    return replace(ds, subjects=subjects, efron_applied=True)


def partition_groups(ds: Dataset) -> GroupPartition:
    if not ds.efron_applied:
        raise ValueError("apply_efron_adjustment must be called before partition_groups")
    groups = ([], [], [], [])
    for s in ds.subjects:
        groups[(0 if s.event else 2) + (0 if s.n_meas else 1)].append(s.id)
    return GroupPartition(*(tuple(g) for g in groups))


def retrospective_times(s: Subject, death_time: float) -> tuple[np.ndarray, np.ndarray]:
    """Times counted backward from ``death_time`` paired with the outcomes.

    The latest prospective measurement comes first, so element 0 is the
    measurement closest to death.  Returns ``(tstar, y)``.
    """
    if s.n_meas and death_time < s.meas_times[-1]:
        raise ValueError(f"subject {s.id}: death time {death_time} precedes a measurement "
                         f"at {s.meas_times[-1]}")
    return death_time - s.meas_times[::-1], s.meas_values[::-1]


def observed_means(ds: Dataset, visit_grid, window: float, level: float = 0.95):
    """Per-visit observed outcome means with normal-approximation CIs by arm.

    For each grid time, measurements within ``window`` months of the visit are
    averaged (one per subject, the closest) over subjects still under
    observation.  Cells without data get ``nan`` rather than zero; cells with
    a single subject get a degenerate interval and ``n == 1``.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    zq = norm.ppf(0.5 + level / 2)
    rows = []
    for arm in (0, 1):
        subs = [s for s in ds.subjects if s.arm == arm]
        for v in visit_grid:
            vals = []
            for s in subs:
                if s.obs_time < v - window or not s.n_meas:
                    continue
                d = np.abs(s.meas_times - v)
                j = int(np.argmin(d))
                if d[j] <= window:
                    vals.append(s.meas_values[j])
            n = len(vals)
            mean = float(np.mean(vals)) if n else math.nan
            se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else (0.0 if n else math.nan)
            rows.append(dict(arm=arm, visit=float(v), n=n, mean=mean, se=se,
                             lo95=mean - zq * se, hi95=mean + zq * se))
    return pd.DataFrame(rows)
