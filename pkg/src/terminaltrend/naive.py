"""Reference estimators: decedents-only mixed model and Cox partial likelihood.

These are the comparator of the simulation study and supply starting values
for the joint fit.  The mixed model uses only subjects with an observed death
and at least one measurement, whose retrospective times are known exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._numdiff import hessian_from_gradient
from .data import Dataset, retrospective_times
from .likelihood import JointLikelihood, ParamLayout, _chol_from
from .splines import KnotVector, SplineBasis

__all__ = ["CoxFit", "LMMFit", "NaiveFit", "fit_cox_partial", "fit_naive_lmm", "fit_naive",
           "cox_partial_loglik"]

log = logging.getLogger(__name__)


@dataclass
class CoxFit:
    alpha_hat: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    iterations: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass
class LMMFit:
    """Decedents-only mixed model fit; ``u`` is on the joint model's scale."""

    layout: ParamLayout
    knots: KnotVector
    u: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    identifiable: bool = True
    n_subjects: int = 0

    @property
    def beta_hat(self) -> np.ndarray:
        return self.u[self.layout.beta_mu.start:self.layout.beta_A.stop]

    @property
    def psi_hat(self) -> np.ndarray:
        return self.u[self.layout.psi]

    @property
    def sigma_chol(self) -> np.ndarray:
        return _chol_from(self.u[self.layout.chol], self.layout.L)

    @property
    def sigma_hat(self) -> np.ndarray:
        Lc = self.sigma_chol
        return Lc @ Lc.T

    @property
    def tau_hat(self) -> float:
        return float(np.exp(self.u[self.layout.log_tau]))


@dataclass
class NaiveFit:
    lmm: LMMFit
    cox: CoxFit
    extra: dict = field(default_factory=dict)

    @property
    def beta_hat(self):
        return self.lmm.beta_hat

    @property
    def psi_hat(self):
        return self.lmm.psi_hat

    @property
    def psi_se(self):
        return np.sqrt(np.clip(np.diag(self.lmm.cov)[self.lmm.layout.psi], 0, None))

    @property
    def sigma_hat(self):
        return self.lmm.sigma_hat

    @property
    def tau_hat(self):
        return self.lmm.tau_hat

    @property
    def alpha_hat(self):
        return self.cox.alpha_hat

    @property
    def cov_long(self):
        return self.lmm.cov

    @property
    def cov_surv(self):
        return self.cox.cov

    @property
    def loglik_long(self):
        return self.lmm.loglik

    @property
    def loglik_surv(self):
        return self.cox.loglik

    def start_vector(self) -> np.ndarray:
        """Joint-model starting values: mixed-model block then Cox block."""
        return np.concatenate([self.lmm.u, self.cox.alpha_hat])


# ---------------------------------------------------------------------------
# Cox partial likelihood (Breslow ties)

def _cox_arrays(ds: Dataset):
    T = np.array([s.obs_time for s in ds.subjects])
    E = np.array([s.event for s in ds.subjects])
    X = np.array([[s.arm, *s.x_surv] for s in ds.subjects], dtype=float)
    d, counts = np.unique(T[E], return_counts=True)
    order = np.argsort(T, kind="stable")
    start = np.searchsorted(T[order], d, side="left")
    xsum = np.zeros((d.size, X.shape[1]))
    np.add.at(xsum, np.searchsorted(d, T[E]), X[E])
    return X, order, start, counts, xsum


def _cox_terms(alpha, X, order, start, counts, xsum, want_hess=True):
    eta = X @ alpha
    shift = eta.max()
    e = np.exp(eta - shift)[order]
    Xo = X[order]
    S0 = np.cumsum(e[::-1])[::-1][start]
    S1 = np.cumsum((e[:, None] * Xo)[::-1], axis=0)[::-1][start]
    ll = float(np.sum(xsum @ alpha) - np.sum(counts * (np.log(S0) + shift)))
    xbar = S1 / S0[:, None]
    grad = (xsum - counts[:, None] * xbar).sum(0)
    if not want_hess:
        return ll, grad, None
    S2 = np.cumsum((e[:, None, None] * Xo[:, :, None] * Xo[:, None, :])[::-1], axis=0)[::-1][start]
    info = np.einsum("m,mij->ij", counts, S2 / S0[:, None, None]
                     - xbar[:, :, None] * xbar[:, None, :])
    return ll, grad, info


def cox_partial_loglik(alpha, ds: Dataset) -> float:
    """Breslow-ties log partial likelihood at ``alpha = (alpha_A, alpha_X)``."""
    arrays = _cox_arrays(ds)
    return _cox_terms(np.asarray(alpha, dtype=float), *arrays, want_hess=False)[0]


def fit_cox_partial(ds: Dataset, max_iter: int = 100, tol: float = 1e-10,
                    max_abs: float = 50.0) -> CoxFit:
    """Newton-Raphson maximization of the Breslow partial likelihood.

    Step halving keeps every iterate ascending.  Coefficients running past
    ``max_abs`` indicate a monotone likelihood and are reported as
    non-converged rather than raised.
    """
    if not any(s.event for s in ds.subjects):
        raise ValueError("no observed deaths")
    arrays = _cox_arrays(ds)
    alpha = np.zeros(arrays[0].shape[1])
    ll, grad, info = _cox_terms(alpha, *arrays)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = alpha + t * step
            ll_new, g_new, i_new = _cox_terms(cand, *arrays)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t /= 2
        change = np.max(np.abs(cand - alpha))
        alpha, ll, grad, info = cand, ll_new, g_new, i_new
        if np.max(np.abs(alpha)) > max_abs:
            break
        if change < tol or np.max(np.abs(grad)) < tol:
            converged = True
            break
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.full_like(info, np.nan)
        converged = False
    if not converged:
        log.warning("Cox partial likelihood did not converge (possible monotone likelihood)")
    return CoxFit(alpha, cov, ll, converged, it)


# ---------------------------------------------------------------------------
# Decedents-only linear mixed model

def decedent_times(ds: Dataset) -> np.ndarray:
    """Pooled retrospective measurement times of subjects with an observed death."""
    out = [retrospective_times(s, s.obs_time)[0] for s in ds.subjects if s.event and s.n_meas]
    return np.concatenate(out) if out else np.zeros(0)


class _ProfiledLMM:
    """Gaussian log-likelihood with the mean coefficients profiled out by GLS."""

    def __init__(self, subjects, basis: SplineBasis):
        XtX, XtZ, Xty, Zty, yty, ZtZ, n = [], [], [], [], [], [], []
        for s in subjects:
            tstar, y = retrospective_times(s, s.obs_time)
            B = basis(tstar).reshape(tstar.size, -1)
            X = np.hstack([B, s.arm * B, np.tile(s.x_long, (tstar.size, 1))])
            Z = s.z[::-1]
            XtX.append(X.T @ X)
            XtZ.append(X.T @ Z)
            Xty.append(X.T @ y)
            Zty.append(Z.T @ y)
            yty.append(y @ y)
            ZtZ.append(Z.T @ Z)
            n.append(tstar.size)
        self.XtX, self.XtZ, self.Xty = np.array(XtX), np.array(XtZ), np.array(Xty)
        self.Zty, self.yty, self.ZtZ = np.array(Zty), np.array(yty), np.array(ZtZ)
        self.n = np.array(n, dtype=float)
        self.L = self.ZtZ.shape[1]

    def _pieces(self, phi):
        L = self.L
        Lc = _chol_from(phi[:-1], L)
        tau2 = float(np.exp(2 * phi[-1]))
        M = np.eye(L) + np.einsum("ji,sjk,kl->sil", Lc, self.ZtZ, Lc) / tau2
        Minv = np.linalg.inv(M)
        _, logdetM = np.linalg.slogdet(M)
        # K = L Minv L^T / tau2 so that V^-1 = (I - Z K Z^T) / tau2
        K = np.einsum("ij,sjk,lk->sil", Lc, Minv, Lc) / tau2
        return tau2, K, logdetM

    def gls(self, phi):
        tau2, K, logdetM = self._pieces(phi)
        A = (self.XtX - np.einsum("sia,sab,sjb->sij", self.XtZ, K, self.XtZ)).sum(0) / tau2
        b = (self.Xty - np.einsum("sia,sab,sb->si", self.XtZ, K, self.Zty)).sum(0) / tau2
        beta = np.linalg.solve(A, b)
        return beta, A, tau2, K, logdetM

    def profile_loglik(self, phi):
        beta, _, tau2, K, logdetM = self.gls(phi)
        rr = self.yty - 2 * self.Xty @ beta + np.einsum("i,sij,j->s", beta, self.XtX, beta)
        Zr = self.Zty - np.einsum("sia,i->sa", self.XtZ, beta)
        q = (rr - np.einsum("sa,sab,sb->s", Zr, K, Zr)) / tau2
        return float(-0.5 * np.sum(self.n * (np.log(2 * np.pi) + np.log(tau2)) + logdetM + q))


def fit_naive_lmm(ds: Dataset, knots: KnotVector | int) -> LMMFit:
    """Maximum likelihood mixed model on decedents with measurements.

    ``knots`` may be a :class:`KnotVector` or a basis dimension, in which case
    knots are placed at quantiles of the decedents' retrospective times.
    Standard errors come from the negated central-difference Hessian of the
    full (unprofiled) log-likelihood.
    """
    from .splines import place_knots

    g1 = [s for s in ds.subjects if s.event and s.n_meas]
    if not g1:
        raise ValueError("no decedents with measurements")
    if isinstance(knots, (int, np.integer)):
        knots = place_knots(decedent_times(ds), int(knots))
    basis = SplineBasis(knots)
    layout = ParamLayout(knots.k1, ds.P, ds.L, ds.Q)
    n_obs = sum(s.n_meas for s in g1)
    if n_obs < layout.n_beta + layout.n_chol + 1:
        raise ValueError(f"{len(g1)} decedents with {n_obs} measurements cannot identify "
                         f"{layout.n_beta + layout.n_chol + 1} longitudinal parameters")
    prof = _ProfiledLMM(g1, basis)
    # moment-based start: split the OLS residual variance evenly
    beta0 = np.linalg.lstsq(prof.XtX.sum(0), prof.Xty.sum(0), rcond=None)[0]
    rss = prof.yty.sum() - 2 * prof.Xty.sum(0) @ beta0 + beta0 @ prof.XtX.sum(0) @ beta0
    s0 = 0.5 * np.log(max(rss / prof.n.sum(), 1e-8) / 2)
    phi0 = np.zeros(layout.n_chol + 1)
    diag = np.flatnonzero(np.tril_indices(layout.L)[0] == np.tril_indices(layout.L)[1])
    phi0[diag] = s0
    phi0[-1] = s0
    res = minimize(lambda p: -prof.profile_loglik(p), phi0, method="BFGS",
                   options={"gtol": 1e-8, "maxiter": 500})
    phi = res.x
    beta = prof.gls(phi)[0]
    u = np.concatenate([beta, phi])

    sub = Dataset(tuple(g1), efron_applied=True)
    jl = JointLikelihood(sub, basis)
    nq = 1 + ds.Q
    full = lambda v: np.concatenate([v, np.zeros(nq)])
    grad_long = lambda v: jl.value_and_grad(full(v))[1][layout.long]
    # one Newton polish on the full parameterization
    H = hessian_from_gradient(grad_long, u)
    try:
        u = u - np.linalg.solve(H, grad_long(u))
        H = hessian_from_gradient(grad_long, u)
    except np.linalg.LinAlgError:
        pass
    loglik = jl.components(full(u))["l1_long"]
    identifiable = True
    try:
        cov = np.linalg.inv(-H)
        cov = 0.5 * (cov + cov.T)
        if (np.any(np.diag(cov) < 0) or np.linalg.cond(-H) > 1e12):
            identifiable = False
    except np.linalg.LinAlgError:
        cov = np.full_like(H, np.nan)
        identifiable = False
    if not identifiable:
        log.warning("decedent mixed model is not identifiable (singular information)")
    converged = bool(res.success or np.max(np.abs(grad_long(u))) < 1e-4)
    return LMMFit(layout, knots, u, cov, float(loglik), converged, identifiable, len(g1))


def fit_naive(ds: Dataset, knots: KnotVector | int, cox: CoxFit | None = None) -> NaiveFit:
    """Both naive components.  Pass ``cox`` to reuse a partial-likelihood fit."""
    return NaiveFit(fit_naive_lmm(ds, knots), cox if cox is not None else fit_cox_partial(ds))
