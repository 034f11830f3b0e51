"""Maximum likelihood fitting of the joint model, curve intervals and knot selection."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from ._numdiff import hessian_from_gradient
from .data import Dataset
from .likelihood import (BreslowHazard, HazardProfile, JointLikelihood, LikelihoodError,
                         ParamLayout, ThetaParams)
from .naive import CoxFit, NaiveFit, decedent_times, fit_cox_partial, fit_naive
from .splines import KnotVector, SplineBasis, place_knots

__all__ = ["FitOptions", "FitResult", "CurveEstimate", "KnotSelection",
           "pack_unconstrained", "unpack_unconstrained", "fit", "curve_ci", "select_knots"]

log = logging.getLogger(__name__)

Z95 = 1.96


def pack_unconstrained(theta: ThetaParams) -> np.ndarray:
    return theta.pack()


def unpack_unconstrained(u, layout: ParamLayout) -> ThetaParams:
    return ThetaParams.unpack(u, layout)


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``gtol`` bounds the sup-norm of the gradient on the unconstrained scale and
    ``ftol`` the relative change of the log-likelihood between iterations.
    """

    max_iter: int = 500
    gtol: float = 1e-5
    ftol: float = 1e-8
    hessian: bool = True
    hessian_step: float = 1e-4
    newton_polish: int = 5


@dataclass
class FitResult:
    theta_hat: ThetaParams
    u_hat: np.ndarray
    covariance: np.ndarray | None
    loglik: float
    k1: int
    knots: KnotVector
    converged: bool
    iterations: int
    layout: ParamLayout
    n_subjects: int
    hazard: BreslowHazard
    grad_norm: float = math.nan
    covariance_ok: bool = False
    message: str = ""
    naive: NaiveFit | None = field(default=None, repr=False)
    dataset: Dataset | None = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        return self.layout.n_params

    @property
    def aic(self) -> float:
        return -2 * self.loglik + 2 * self.n_params

    @property
    def bic(self) -> float:
        return -2 * self.loglik + math.log(self.n_subjects) * self.n_params

    @property
    def basis(self) -> SplineBasis:
        return SplineBasis(self.knots)

    @property
    def se(self) -> np.ndarray:
        if self.covariance is None:
            return np.full(self.n_params, np.nan)
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def summary(self) -> pd.DataFrame:
        """Estimates with Wald statistics on the reporting scale.

        Spline coefficients and regression parameters are reported as fitted;
        variance parameters are reported as standard deviations with
        delta-method standard errors.
        """
        from scipy.stats import norm

        lay = self.layout
        se = self.se
        rows = []
        names = lay.names()
        skip = set(range(lay.chol.start, lay.chol.stop)) | {lay.log_tau}
        for j, name in enumerate(names):
            if j in skip:
                continue
            rows.append((name, self.u_hat[j], se[j]))
        for k, (name, val, grad) in enumerate(self._sd_params()):
            var = np.nan if self.covariance is None else float(grad @ self.covariance @ grad)
            rows.append((name, val, math.sqrt(max(var, 0.0))))
        df = pd.DataFrame(rows, columns=["parameter", "estimate", "se"])
        df["z"] = df["estimate"] / df["se"]
        df["p"] = 2 * norm.sf(np.abs(df["z"]))
        df["lo95"] = df["estimate"] - Z95 * df["se"]
        df["hi95"] = df["estimate"] + Z95 * df["se"]
        return df

    def _sd_params(self):
        """Random-effect SDs (sqrt of Sigma's diagonal) and tau, with gradients in u."""
        lay = self.layout
        out = []
        rows, cols = np.tril_indices(lay.L)
        Lc = self.theta_hat.sigma_chol
        for a in range(lay.L):
            var = float(Lc[a] @ Lc[a])
            sd = math.sqrt(var)
            g = np.zeros(lay.n_params)
            for idx, (r, c) in enumerate(zip(rows, cols)):
                if r != a:
                    continue
                dval = Lc[r, c] / sd if sd > 0 else 0.0
                if r == c:
                    dval *= Lc[r, c]
                g[lay.chol.start + idx] = dval
            out.append(("sigma" if lay.L == 1 else f"sigma_{a + 1}", sd, g))
        g = np.zeros(lay.n_params)
        g[lay.log_tau] = self.theta_hat.tau
        out.append(("tau", self.theta_hat.tau, g))
        return out

    def to_dict(self) -> dict:
        return {
            "loglik": self.loglik, "aic": self.aic, "bic": self.bic, "k1": self.k1,
            "n_params": self.n_params, "n_subjects": self.n_subjects,
            "converged": self.converged, "iterations": self.iterations,
            "grad_norm": self.grad_norm, "covariance_ok": self.covariance_ok,
            "message": self.message, "knots": self.knots.to_dict(),
            "layout": self.layout.to_dict(), "parameter_names": self.layout.names(),
            "u_hat": self.u_hat.tolist(),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, ds: Dataset) -> "FitResult":
        """Rebuild a result written by :meth:`to_dict` for the dataset it was fitted to."""
        lay = ParamLayout(**d["layout"])
        if (lay.P, lay.Q, lay.L) != (ds.P, ds.Q, ds.L):
            raise ValueError("dataset dimensions do not match the stored fit")
        if d["n_subjects"] != len(ds):
            raise ValueError("dataset size does not match the stored fit")
        u = np.asarray(d["u_hat"], dtype=float)
        cov = None if d["covariance"] is None else np.asarray(d["covariance"], dtype=float)
        return cls(theta_hat=ThetaParams.unpack(u, lay), u_hat=u, covariance=cov,
                   loglik=d["loglik"], k1=d["k1"], knots=KnotVector.from_dict(d["knots"]),
                   converged=d["converged"], iterations=d["iterations"], layout=lay,
                   n_subjects=d["n_subjects"], hazard=HazardProfile(ds)(u[lay.alpha]),
                   grad_norm=d["grad_norm"], covariance_ok=d["covariance_ok"],
                   message=d["message"], dataset=ds)


@dataclass
class CurveEstimate:
    grid: np.ndarray
    value: np.ndarray
    se: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    warnings: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"grid": self.grid, "est": self.value, "se": self.se,
                             "lo95": self.lo95, "hi95": self.hi95})


def _knots_for(ds: Dataset, k1: int) -> KnotVector:
    return place_knots(decedent_times(ds), k1)


def fit(ds: Dataset, k1: int | KnotVector, options: FitOptions | None = None,
        cox: CoxFit | None = None, naive: NaiveFit | None = None,
        start: np.ndarray | None = None) -> FitResult:
    """Maximize the joint log-likelihood.

    The optimizer is BFGS on the unconstrained scale, started at the naive
    estimates and preconditioned by their covariance.  When
    ``options.hessian`` is set the result is polished with Newton steps and
    the covariance is the inverse of the negated central-difference Hessian.
    Non-convergence is reported in the result, not raised.
    """
    options = options or FitOptions()
    if not ds.efron_applied:
        raise ValueError("dataset must be adjusted with apply_efron_adjustment before fitting")
    knots = k1 if isinstance(k1, KnotVector) else _knots_for(ds, int(k1))
    basis = SplineBasis(knots)
    jl = JointLikelihood(ds, basis)
    lay = jl.layout
    if naive is None:
        naive = fit_naive(ds, knots, cox)
    u0 = naive.start_vector() if start is None else np.asarray(start, dtype=float).copy()

    P0 = np.zeros((lay.n_params, lay.n_params))
    P0[lay.long, lay.long] = naive.cov_long
    P0[lay.alpha, lay.alpha] = naive.cov_surv
    try:
        S = np.linalg.cholesky(0.5 * (P0 + P0.T))
    except np.linalg.LinAlgError:
        S = np.diag(np.sqrt(np.clip(np.abs(np.diag(P0)), 1e-8, None)))

    def neg(z):
        try:
            v, g = jl.value_and_grad(u0 + S @ z)
        except (LikelihoodError, FloatingPointError, np.linalg.LinAlgError):
            return np.inf, np.full(z.size, np.nan)
        return -v, -(S.T @ g)

    history = []

    def track(zk):
        history.append(zk.copy())

    with np.errstate(over="ignore", invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(neg, np.zeros(lay.n_params), jac=True, method="BFGS", callback=track,
                       options={"gtol": options.gtol * 1e-2, "maxiter": options.max_iter})
    u = u0 + S @ res.x
    val, g = jl.value_and_grad(u)
    prev = -neg(history[-2])[0] if len(history) >= 2 else -neg(np.zeros(lay.n_params))[0]
    rel_change = abs(val - prev) / max(1.0, abs(val))
    iterations = int(res.nit)

    # BFGS stalls once function differences reach rounding level; quasi-Newton
    # steps with its own inverse-Hessian estimate still shrink the gradient.
    Hz = np.asarray(res.hess_inv)
    for _ in range(options.newton_polish):
        if np.max(np.abs(g)) < options.gtol:
            break
        u_new = u + S @ (Hz @ (S.T @ g))
        try:
            v_new, g_new = jl.value_and_grad(u_new)
        except LikelihoodError:
            break
        if (np.max(np.abs(g_new)) >= np.max(np.abs(g))
                or v_new < val - 1e-12 * max(1.0, abs(val))):
            break
        rel_change = abs(v_new - val) / max(1.0, abs(v_new))
        u, val, g = u_new, v_new, g_new
        iterations += 1

    cov, cov_ok = None, False
    if options.hessian:
        grad_fn = lambda v: jl.value_and_grad(v)[1]
        H = hessian_from_gradient(grad_fn, u, options.hessian_step)
        for _ in range(options.newton_polish):
            if np.max(np.abs(g)) < options.gtol:
                break
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-4:
                try:
                    v_new, g_new = jl.value_and_grad(u - t * step)
                except LikelihoodError:
                    v_new = -np.inf
                if v_new >= val - 1e-10 * max(1.0, abs(val)):
                    break
                t /= 2
            else:
                break
            rel_change = abs(v_new - val) / max(1.0, abs(v_new))
            u, val, g = u - t * step, v_new, g_new
            iterations += 1
            H = hessian_from_gradient(grad_fn, u, options.hessian_step)
        try:
            cov = np.linalg.inv(-H)
            cov = 0.5 * (cov + cov.T)
            cov_ok = bool(np.all(np.linalg.eigvalsh(-H) > 0))
        except np.linalg.LinAlgError:
            cov = None
        if not cov_ok:
            log.warning("negated Hessian is not positive definite at the optimum")

    gnorm = float(np.max(np.abs(g)))
    converged = bool(gnorm < options.gtol and rel_change < options.ftol)
    if not converged:
        log.info("fit with k1=%d not converged: |grad|=%.2e rel change=%.2e (%s)",
                 knots.k1, gnorm, rel_change, res.message)
    theta = ThetaParams.unpack(u, lay)
    return FitResult(theta_hat=theta, u_hat=u, covariance=cov, loglik=float(val), k1=knots.k1,
                     knots=knots, converged=converged, iterations=iterations, layout=lay,
                     n_subjects=len(ds), hazard=jl.hazard(u[lay.alpha]), grad_norm=gnorm,
                     covariance_ok=cov_ok, message=str(res.message), naive=naive, dataset=ds)


def _curve_from(u_or_beta_cov, basis, lay, grid, which, cov):
    B = basis(grid).reshape(len(grid), -1)
    D = np.zeros((len(grid), lay.n_params))
    if which in ("mu", "mu+A"):
        D[:, lay.beta_mu] = B
    if which in ("A", "mu+A"):
        D[:, lay.beta_A] = B
    value = D @ u_or_beta_cov
    if cov is None:
        se = np.full(len(grid), np.nan)
    else:
        se = np.sqrt(np.clip(np.einsum("gi,ij,gj->g", D, cov, D), 0, None))
    return value, se


def curve_ci(result: FitResult, grid, which: str = "mu") -> CurveEstimate:
    """Pointwise Wald intervals for the control trend (``"mu"``), the treatment
    effect (``"A"``) or the treated-arm trend (``"mu+A"``)."""
    if which not in ("mu", "A", "mu+A"):
        raise ValueError(f"which must be 'mu', 'A' or 'mu+A', got {which!r}")
    if not result.converged:
        raise ValueError("curve intervals need a converged fit")
    grid = np.asarray(grid, dtype=float)
    value, se = _curve_from(result.u_hat, result.basis, result.layout, grid, which,
                            result.covariance)
    notes = []
    if grid.size and grid.max() > 2 * result.knots.boundary_hi:
        notes.append(f"grid extends beyond twice the last knot ({result.knots.boundary_hi:.3g}); "
                     "values there are linear extrapolations")
    return CurveEstimate(grid, value, se, value - Z95 * se, value + Z95 * se, notes)


def naive_curve_ci(naive: NaiveFit, grid, which: str = "mu") -> CurveEstimate:
    """Pointwise intervals from the decedents-only mixed model."""
    lmm = naive.lmm
    lay = lmm.layout
    n_long = lay.log_tau + 1
    cov = np.zeros((lay.n_params, lay.n_params))
    cov[:n_long, :n_long] = lmm.cov
    u = np.zeros(lay.n_params)
    u[:n_long] = lmm.u
    grid = np.asarray(grid, dtype=float)
    value, se = _curve_from(u, SplineBasis(lmm.knots), lay, grid, which, cov)
    return CurveEstimate(grid, value, se, value - Z95 * se, value + Z95 * se)


@dataclass
class KnotSelection:
    k1: int
    criterion: str
    table: pd.DataFrame
    fits: dict[int, FitResult]

    def best(self, criterion: str) -> int:
        return _argmin_k(self.table, criterion)


def _argmin_k(table: pd.DataFrame, criterion: str) -> int:
    ok = table[table["error"].isna()]
    if ok.empty:
        raise RuntimeError("every candidate fit failed")
    vals = ok[criterion.lower()].to_numpy()
    ks = ok["k1"].to_numpy()
    best = vals.min()
    return int(ks[vals == best].min())


def select_knots(ds: Dataset, k_min: int = 2, k_max: int = 11, criterion: str = "aic",
                 options: FitOptions | None = None) -> KnotSelection:
    """Fit every basis dimension in ``[k_min, k_max]`` and keep the best by AIC or BIC.

    Ties go to the smaller dimension.  Failed fits are recorded in the table
    and excluded.  The sweep fits skip the Hessian; the chosen dimension is
    refitted with it when ``options.hessian`` is set.
    """
    criterion = criterion.lower()
    if criterion not in ("aic", "bic"):
        raise ValueError("criterion must be 'aic' or 'bic'")
    if not 2 <= k_min <= k_max:
        raise ValueError("need 2 <= k_min <= k_max")
    options = options or FitOptions()
    sweep = FitOptions(**{**options.__dict__, "hessian": False})
    cox = fit_cox_partial(ds)
    rows, fits = [], {}
    for k in range(k_min, k_max + 1):
        try:
            r = fit(ds, k, sweep, cox=cox)
            fits[k] = r
            rows.append(dict(k1=k, loglik=r.loglik, n_params=r.n_params, aic=r.aic, bic=r.bic,
                             converged=r.converged, error=None))
        except (ValueError, LikelihoodError, np.linalg.LinAlgError) as exc:
            log.info("k1=%d failed: %s", k, exc)
            rows.append(dict(k1=k, loglik=np.nan, n_params=np.nan, aic=np.nan, bic=np.nan,
                             converged=False, error=str(exc)))
    table = pd.DataFrame(rows)
    k_best = _argmin_k(table, criterion)
    if options.hessian:
        prev = fits[k_best]
        best = fit(ds, prev.knots, options, naive=prev.naive, start=prev.u_hat)
        fits[k_best] = best
        row = table.index[table["k1"] == k_best][0]
        table.loc[row, ["loglik", "aic", "bic", "converged"]] = (
            best.loglik, best.aic, best.bic, best.converged)
    return KnotSelection(k_best, criterion, table, fits)
