"""Mean quality-adjusted survival under a fitted joint model.

The mean QALY up to a horizon is the expected area under the utility curve
until death or the horizon, whichever comes first.  Under the fitted model the
death-time distribution is discrete on the observed death times, so

    E = sum_m P_m * integral_0^{min(horizon, d_m)} q(d_m - t) dt,

where ``P_m`` are the model's death masses at plug-in covariates and ``q`` is
the fitted mean outcome (on the retrospective scale) divided by the scale
maximum.  Inner integrals are computed exactly from the spline pieces.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._numdiff import central_gradient
from .estimator import Z95, FitResult
from .likelihood import HazardProfile, ParamLayout
from .splines import SplineBasis

__all__ = ["QalyEstimate", "QalyModel", "mean_qaly", "qaly_se_delta", "qaly_diff",
           "qaly_table", "format_ci"]

log = logging.getLogger(__name__)

FACIT_PAL_MAX = 184.0


@dataclass
class QalyEstimate:
    horizon: float
    arm: int | str
    covariate_values: dict
    estimate: float
    se: float = np.nan
    lo95: float = np.nan
    hi95: float = np.nan
    warnings: list = field(default_factory=list)

    def formatted(self, digits: int = 2) -> str:
        return format_ci(self.estimate, self.lo95, self.hi95, digits)


def format_ci(est, lo, hi, digits=2) -> str:
    """Render ``8.45 (8.04, 8.86)`` style cells."""
    return f"{est:.{digits}f} ({lo:.{digits}f}, {hi:.{digits}f})"


class QalyModel:
    """QALY functional of the unconstrained parameter vector for one fit.

    ``x_long`` and ``x_surv`` are the plug-in covariate values; by default the
    pooled sample means.
    """

    def __init__(self, result: FitResult, x_long=None, x_surv=None, utility_scale=1.0):
        if result.dataset is None:
            raise ValueError("the fit result must carry its dataset")
        if not utility_scale > 0:
            raise ValueError("utility_scale must be positive")
        ds = result.dataset
        self.result = result
        self.layout: ParamLayout = result.layout
        self.basis = SplineBasis(result.knots)
        self.profile = HazardProfile(ds)
        self.x_long = (np.mean([s.x_long for s in ds.subjects], axis=0) if x_long is None
                       else np.asarray(x_long, dtype=float)).reshape(self.layout.P)
        self.x_surv = (np.mean([s.x_surv for s in ds.subjects], axis=0) if x_surv is None
                       else np.asarray(x_surv, dtype=float)).reshape(self.layout.Q)
        self.scale = float(utility_scale)
        self._cache = {}

    def _integrals(self, horizon):
        if horizon not in self._cache:
            d = self.profile.d
            span = np.minimum(horizon, d)
            self._cache[horizon] = (span, self.basis.integrate_many(d - span, d))
        return self._cache[horizon]

    def masses(self, u, arm) -> np.ndarray:
        lay = self.layout
        alpha = u[lay.alpha]
        bh = self.profile(alpha)
        eta = arm * alpha[0] + self.x_surv @ alpha[1:]
        return np.exp(eta - np.exp(eta) * bh.cumulative) * bh.jumps

    def value(self, u, arm, horizon) -> float:
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        lay = self.layout
        span, IB = self._integrals(horizon)
        coef = u[lay.beta_mu] + arm * u[lay.beta_A]
        inner = IB @ coef + (self.x_long @ u[lay.psi]) * span
        return float(self.masses(u, arm) @ inner / self.scale)

    def contrast(self, u, horizon) -> float:
        return self.value(u, 1, horizon) - self.value(u, 0, horizon)

    def delta_se(self, fun, u) -> float:
        cov = self.result.covariance
        if cov is None or not self.result.covariance_ok:
            return np.nan
        g = central_gradient(fun, u)
        return float(np.sqrt(max(g @ cov @ g, 0.0)))


def _check(result: FitResult, horizon):
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not result.converged:
        raise ValueError("QALY estimates need a converged fit")


def mean_qaly(result: FitResult, arm: int, horizon: float, utility_scale: float = 1.0,
              x_long=None, x_surv=None, model: QalyModel | None = None) -> QalyEstimate:
    """Point estimate of mean QALY (in the time unit of the data) for one arm."""
    _check(result, horizon)
    model = model or QalyModel(result, x_long, x_surv, utility_scale)
    est = model.value(result.u_hat, arm, horizon)
    notes = _range_warnings(model, arm, horizon)
    return QalyEstimate(horizon, arm, _covs(model), est, warnings=notes)


def qaly_se_delta(result: FitResult, arm: int, horizon: float, utility_scale: float = 1.0,
                  x_long=None, x_surv=None, model: QalyModel | None = None) -> QalyEstimate:
    """Mean QALY with a delta-method standard error and Wald interval."""
    model = model or QalyModel(result, x_long, x_surv, utility_scale)
    q = mean_qaly(result, arm, horizon, model=model)
    q.se = model.delta_se(lambda v: model.value(v, arm, horizon), result.u_hat)
    if not np.isfinite(q.se):
        q.warnings.append("covariance unavailable or singular; standard error not computed")
    q.lo95, q.hi95 = q.estimate - Z95 * q.se, q.estimate + Z95 * q.se
    return q


def qaly_diff(result: FitResult, horizon: float, utility_scale: float = 1.0,
              x_long=None, x_surv=None, model: QalyModel | None = None) -> QalyEstimate:
    """Treated minus control mean QALY at common plug-in covariates."""
    _check(result, horizon)
    model = model or QalyModel(result, x_long, x_surv, utility_scale)
    est = model.contrast(result.u_hat, horizon)
    se = model.delta_se(lambda v: model.contrast(v, horizon), result.u_hat)
    return QalyEstimate(horizon, "1-0", _covs(model), est, se, est - Z95 * se, est + Z95 * se)


def _covs(model: QalyModel) -> dict:
    return {"x_long": model.x_long.tolist(), "x_surv": model.x_surv.tolist()}


def _range_warnings(model: QalyModel, arm, horizon):
    # fitted utilities are not clipped; flag values outside [0, 1]
    lay = model.layout
    u = model.result.u_hat
    d = model.profile.d
    grid = np.linspace(0, d.max(), 200)
    util = (model.basis(grid) @ (u[lay.beta_mu] + arm * u[lay.beta_A])
            + model.x_long @ u[lay.psi]) / model.scale
    if util.min() < 0 or util.max() > 1:
        msg = (f"fitted utility for arm {arm} leaves [0, 1] "
               f"(range {util.min():.3g} to {util.max():.3g}); values are not clipped")
        log.warning(msg)
        return [msg]
    return []


def qaly_table(result: FitResult, horizons, utility_scale: float = 1.0,
               x_long=None, x_surv=None) -> pd.DataFrame:
    """Per-arm estimates and the arm contrast at each horizon."""
    model = QalyModel(result, x_long, x_surv, utility_scale)
    rows = []
    for h in horizons:
        for arm in (1, 0):
            q = qaly_se_delta(result, arm, h, model=model)
            rows.append(dict(arm=str(arm), horizon=h, estimate=q.estimate, se=q.se,
                             lo95=q.lo95, hi95=q.hi95, formatted=q.formatted()))
        q = qaly_diff(result, h, model=model)
        rows.append(dict(arm="1-0", horizon=h, estimate=q.estimate, se=q.se,
                         lo95=q.lo95, hi95=q.hi95, formatted=q.formatted()))
    return pd.DataFrame(rows)
