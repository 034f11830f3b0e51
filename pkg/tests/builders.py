"""Small dataset constructors shared by the test modules."""
import numpy as np

from terminaltrend.data import Dataset, Subject, apply_efron_adjustment


def subj(sid, arm, T, event, times=(), values=None, x=(0.0,), xs=(0.0,), z=None):
    times = np.asarray(times, dtype=float)
    if values is None:
        values = 100.0 - times
    return Subject(id=sid, arm=arm, obs_time=float(T), event=bool(event), x_long=x, x_surv=xs,
                   meas_times=times, meas_values=np.asarray(values, dtype=float),
                   z=np.ones((times.size, 1)) if z is None else z)


def dataset(*subjects, efron=True):
    ds = Dataset(tuple(subjects))
    return apply_efron_adjustment(ds) if efron else ds


def random_dataset(seed, n=40, censor=True, with_meas=0.8, P=1, Q=1, tie_round=None,
                   n_meas_max=5, group3=True):
    """Mixed dataset with every group present; optional rounding creates ties.

    ``group3=False`` strips the measurements of censored subjects.
    """
    rng = np.random.default_rng(seed)
    subjects = []
    for i in range(n):
        arm = int(i % 2)
        x = rng.normal(size=P)
        xs = rng.normal(size=Q)
        D = rng.exponential(8.0 * np.exp(-0.3 * arm - 0.2 * xs[0]))
        C = rng.uniform(2, 25) if censor else np.inf
        T = max(min(D, C), 0.05)
        if tie_round:
            T = max(np.round(T / tie_round) * tie_round, tie_round)
        event = bool(D <= C)
        k = rng.integers(1, n_meas_max + 1) if rng.random() < with_meas else 0
        if not (event or group3):
            k = 0
        times = np.sort(rng.uniform(0, T, size=k)) if k else np.zeros(0)
        tstar = (D - times) if event else (T + 3.0 - times)
        y = 50 + 10 * np.log1p(tstar) + 2 * arm + 3 * x[0] + rng.normal(0, 2) \
            + rng.normal(0, 1.5, size=k)
        subjects.append(subj(f"r{i:03d}", arm, T, event, times, y, tuple(x), tuple(xs)))
    return dataset(*subjects)
