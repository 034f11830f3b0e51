"""Joint log-likelihood of terminal-trend outcomes and right-censored survival.

The cumulative baseline hazard is profiled out as a step function with jumps
at the observed death times.  Subjects fall into four groups (see
:func:`terminaltrend.data.partition_groups`); censored subjects with
measurements contribute a finite mixture over the candidate death times after
their censoring time, with masses rescaled so they sum to the model survivor
probability at the censoring time.

Two evaluation paths are provided.  The per-group functions
(:func:`loglik_observed_death`, :func:`loglik_group3_weighted`, ...) loop over
subjects and factor each covariance matrix directly; they are the readable
reference.  :class:`JointLikelihood` precompiles a dataset and basis into flat
arrays and evaluates the same quantity, with its analytic gradient, in a few
vectorized passes; the optimizer uses it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .data import Dataset, Subject, retrospective_times
from .splines import SplineBasis

__all__ = [
    "LikelihoodError", "ParamLayout", "ThetaParams", "BreslowHazard", "SubjectGaussian",
    "breslow_jumps", "subject_gaussian", "loglik_observed_death", "group3_weight",
    "loglik_group3_weighted", "loglik_group4", "total_loglik", "JointLikelihood",
    "HazardProfile",
]

_LOG2PI = np.log(2 * np.pi)


class LikelihoodError(ArithmeticError):
    """The likelihood is undefined or numerically degenerate at the given point."""


# ---------------------------------------------------------------------------
# Parameters

@dataclass(frozen=True)
class ParamLayout:
    """Dimensions of the model and positions in the unconstrained vector.

    The vector is ``[beta_mu (k1), beta_A (k1), psi (P), chol(Sigma)
    (L(L+1)/2, log diagonal), log tau, alpha_A, alpha_X (Q)]``.
    """

    k1: int
    P: int
    L: int
    Q: int

    @property
    def n_beta(self) -> int:
        return 2 * self.k1 + self.P

    @property
    def n_chol(self) -> int:
        return self.L * (self.L + 1) // 2

    @property
    def n_params(self) -> int:
        return 2 * self.k1 + self.P + self.n_chol + 1 + self.Q + 1

    @property
    def beta(self) -> slice:
        return slice(0, self.n_beta)

    @property
    def beta_mu(self) -> slice:
        return slice(0, self.k1)

    @property
    def beta_A(self) -> slice:
        return slice(self.k1, 2 * self.k1)

    @property
    def psi(self) -> slice:
        return slice(2 * self.k1, self.n_beta)

    @property
    def chol(self) -> slice:
        return slice(self.n_beta, self.n_beta + self.n_chol)

    @property
    def log_tau(self) -> int:
        return self.n_beta + self.n_chol

    @property
    def alpha(self) -> slice:
        return slice(self.log_tau + 1, self.n_params)

    @property
    def long(self) -> slice:
        """Longitudinal block: beta, chol(Sigma) and log tau."""
        return slice(0, self.log_tau + 1)

    def names(self) -> list[str]:
        out = [f"beta_mu[{j + 1}]" for j in range(self.k1)]
        out += [f"beta_A[{j + 1}]" for j in range(self.k1)]
        out += [f"psi_{j + 1}" for j in range(self.P)]
        out += [f"log_chol[{a + 1},{b + 1}]" if a == b else f"chol[{a + 1},{b + 1}]"
                for a, b in zip(*np.tril_indices(self.L))]
        out += ["log_tau", "alpha_A"] + [f"alpha_{j + 1}" for j in range(self.Q)]
        return out

    def to_dict(self) -> dict:
        return {"k1": self.k1, "P": self.P, "L": self.L, "Q": self.Q}


@dataclass
class ThetaParams:
    """Constrained view of the model parameters."""

    alpha_A: float
    alpha_X: np.ndarray
    beta: np.ndarray
    sigma_chol: np.ndarray
    tau: float
    k1: int

    def __post_init__(self):
        self.alpha_X = np.atleast_1d(np.asarray(self.alpha_X, dtype=float))
        self.beta = np.asarray(self.beta, dtype=float)
        self.sigma_chol = np.atleast_2d(np.asarray(self.sigma_chol, dtype=float))
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(self.k1, self.beta.size - 2 * self.k1,
                           self.sigma_chol.shape[0], self.alpha_X.size)

    @property
    def beta_mu(self) -> np.ndarray:
        return self.beta[:self.k1]

    @property
    def beta_A(self) -> np.ndarray:
        return self.beta[self.k1:2 * self.k1]

    @property
    def psi(self) -> np.ndarray:
        return self.beta[2 * self.k1:]

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([[self.alpha_A], self.alpha_X])

    @property
    def Sigma(self) -> np.ndarray:
        return self.sigma_chol @ self.sigma_chol.T

    def pack(self) -> np.ndarray:
        lay = self.layout
        u = np.empty(lay.n_params)
        u[lay.beta] = self.beta
        rows, cols = np.tril_indices(lay.L)
        ent = self.sigma_chol[rows, cols].copy()
        diag = rows == cols
        with np.errstate(divide="ignore"):
            ent[diag] = np.log(ent[diag])
        u[lay.chol] = ent
        u[lay.log_tau] = np.log(self.tau)
        u[lay.alpha] = self.alpha
        if not np.all(np.isfinite(u)):
            raise ValueError("parameters have no finite unconstrained representation "
                             "(zero diagonal in sigma_chol?)")
        return u

    @classmethod
    def unpack(cls, u, layout: ParamLayout) -> "ThetaParams":
        u = np.asarray(u, dtype=float)
        if u.shape != (layout.n_params,):
            raise ValueError(f"expected {layout.n_params} parameters, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("unconstrained vector has non-finite entries")
        return cls(alpha_A=u[layout.alpha][0], alpha_X=u[layout.alpha][1:],
                   beta=u[layout.beta].copy(), sigma_chol=_chol_from(u[layout.chol], layout.L),
                   tau=float(np.exp(u[layout.log_tau])), k1=layout.k1)


def _chol_from(ent, L) -> np.ndarray:
    out = np.zeros((L, L))
    rows, cols = np.tril_indices(L)
    vals = np.array(ent, dtype=float)
    diag = rows == cols
    vals[diag] = np.exp(vals[diag])
    out[rows, cols] = vals
    return out


# ---------------------------------------------------------------------------
# Profiled baseline hazard

@dataclass(frozen=True)
class BreslowHazard:
    """Step cumulative baseline hazard with jumps at the distinct death times."""

    death_times: np.ndarray
    jumps: np.ndarray
    counts: np.ndarray = field(repr=False)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.jumps)

    def cumhaz(self, t) -> np.ndarray:
        """Right-continuous step value: the sum of jumps at death times ``<= t``."""
        k = np.searchsorted(self.death_times, np.asarray(t, dtype=float), side="right")
        cum = np.concatenate([[0.0], self.cumulative])
        return cum[k]

    def jump_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.death_times, t)
        k = np.minimum(k, self.death_times.size - 1)
        hit = self.death_times[k] == t
        return np.where(hit, self.jumps[k], 0.0)


def _linear_predictor(s: Subject, alpha_A, alpha_X) -> float:
    return s.arm * alpha_A + float(np.dot(s.x_surv, np.atleast_1d(alpha_X)))


def breslow_jumps(alpha_A, alpha_X, ds: Dataset) -> BreslowHazard:
    """Profiled baseline hazard at fixed regression coefficients.

    The jump at each distinct death time is the number of deaths there over
    the risk-set sum of ``exp(eta)``; subjects whose observed time equals the
    death time are in the risk set.
    """
    T = np.array([s.obs_time for s in ds.subjects])
    E = np.array([s.event for s in ds.subjects])
    if not E.any():
        raise ValueError("no observed deaths")
    eta = np.array([_linear_predictor(s, alpha_A, alpha_X) for s in ds.subjects])
    d, counts = np.unique(T[E], return_counts=True)
    risk = np.array([np.exp(eta[T >= dm]).sum() for dm in d])
    return BreslowHazard(d, counts / risk, counts)


# ---------------------------------------------------------------------------
# Reference per-subject likelihood terms

@dataclass(frozen=True)
class SubjectGaussian:
    mu: np.ndarray
    V: np.ndarray

    def logpdf(self, y) -> float:
        try:
            c = cho_factor(self.V, lower=True)
        except np.linalg.LinAlgError as exc:
            raise LikelihoodError("covariance matrix is not positive definite") from exc
        r = np.asarray(y) - self.mu
        logdet = 2 * np.log(np.diag(c[0])).sum()
        return -0.5 * (r.size * _LOG2PI + logdet + r @ cho_solve(c, r))


def subject_gaussian(s: Subject, death_time: float, theta: ThetaParams,
                     basis: SplineBasis) -> SubjectGaussian:
    """Marginal mean and covariance of a subject's outcomes given a death time.

    Rows follow :func:`retrospective_times`: closest-to-death first.
    """
    tstar, _ = retrospective_times(s, death_time)
    B = basis(tstar).reshape(tstar.size, -1)
    mu = B @ theta.beta_mu + s.arm * (B @ theta.beta_A) + s.x_long @ theta.psi
    Z = s.z[::-1]
    V = theta.tau ** 2 * np.eye(tstar.size) + Z @ theta.Sigma @ Z.T
    return SubjectGaussian(mu, V)


def _by_id(ds: Dataset):
    return {s.id: s for s in ds.subjects}


def loglik_observed_death(ids, theta: ThetaParams, bh: BreslowHazard,
                          basis: SplineBasis, ds: Dataset) -> float:
    """Groups 1 and 2: outcome density (if measured) plus the death-time term."""
    subs = _by_id(ds)
    total = 0.0
    for sid in ids:
        s = subs[sid]
        if not s.event:
            raise ValueError(f"subject {sid} is censored")
        if s.n_meas:
            g = subject_gaussian(s, s.obs_time, theta, basis)
            total += g.logpdf(s.meas_values[::-1])
        eta = _linear_predictor(s, theta.alpha_A, theta.alpha_X)
        total += (np.log(bh.jump_at(s.obs_time)) + eta
                  - np.exp(eta) * bh.cumhaz(s.obs_time))
    return float(total)


def _death_masses(s: Subject, theta: ThetaParams, bh: BreslowHazard):
    eta = _linear_predictor(s, theta.alpha_A, theta.alpha_X)
    cand = bh.death_times > s.obs_time
    if not cand.any():
        raise LikelihoodError(
            f"subject {s.id} is censored beyond the last observed death; "
            "apply the last-observation-as-death adjustment")
    log_p = eta - np.exp(eta) * bh.cumulative[cand] + np.log(bh.jumps[cand])
    log_surv = -np.exp(eta) * float(bh.cumhaz(s.obs_time))
    return cand, log_p, log_surv


def group3_weight(s: Subject, theta: ThetaParams, bh: BreslowHazard) -> float:
    """Factor rescaling the death masses after ``C_i`` to the survivor probability."""
    _, log_p, log_surv = _death_masses(s, theta, bh)
    return float(np.exp(log_surv - logsumexp(log_p)))


def loglik_group3_weighted(ids, theta: ThetaParams, bh: BreslowHazard,
                           basis: SplineBasis, ds: Dataset) -> float:
    """Censored subjects with measurements: weighted mixture over candidate deaths."""
    subs = _by_id(ds)
    total = 0.0
    for sid in ids:
        s = subs[sid]
        cand, log_p, log_surv = _death_masses(s, theta, bh)
        log_w = log_surv - logsumexp(log_p)
        y = s.meas_values[::-1]
        comp = np.array([subject_gaussian(s, dm, theta, basis).logpdf(y)
                         for dm in bh.death_times[cand]])
        a = comp + log_p + log_w
        if not np.isfinite(a.max()):
            raise LikelihoodError(f"all mixture components vanish for subject {sid}")
        total += logsumexp(a)
    return float(total)


def loglik_group4(ids, theta: ThetaParams, bh: BreslowHazard, ds: Dataset) -> float:
    subs = _by_id(ds)
    total = 0.0
    for sid in ids:
        s = subs[sid]
        eta = _linear_predictor(s, theta.alpha_A, theta.alpha_X)
        total -= np.exp(eta) * float(bh.cumhaz(s.obs_time))
    return float(total)


def total_loglik(theta: ThetaParams, ds: Dataset, basis: SplineBasis) -> float:
    """Sum of the four group contributions, recomputing the hazard from ``theta``."""
    from .data import partition_groups

    part = partition_groups(ds)
    bh = breslow_jumps(theta.alpha_A, theta.alpha_X, ds)
    return (loglik_observed_death(part.g1 + part.g2, theta, bh, basis, ds)
            + loglik_group3_weighted(part.g3, theta, bh, basis, ds)
            + loglik_group4(part.g4, theta, bh, ds))


# ---------------------------------------------------------------------------
# Compiled evaluator

def _segsum(a, starts):
    return np.add.reduceat(a, starts, axis=0)


class _Blocks:
    """Gaussian blocks sharing per-subject covariance structure.

    A block is one vector of outcomes evaluated at one death time.  Rows of
    all blocks are stacked; ``owner`` maps each block to its subject slot.
    """

    def __init__(self, B, y, arm, xpsi_idx, Z, row_starts, owner, n_sub, ZtZ, nmeas):
        self.B = B
        self.y = y
        self.arm = arm
        self.row_sub = xpsi_idx
        self.Z = Z
        self.starts = row_starts
        self.owner = owner
        self.ZtZ = ZtZ[:n_sub]
        self.n = nmeas
        self.n_rows = np.diff(np.append(row_starts, len(y)))

    def evaluate(self, bm, ba, xpsi, Lc, tau, want_grad):
        fitted = self.B @ np.column_stack([bm, ba])
        r = self.y - fitted[:, 0] - self.arm * fitted[:, 1] - xpsi[self.row_sub]
        tau2 = tau * tau
        Lz = Lc.shape[0]
        A = np.einsum("ji,sjk,kl->sil", Lc, self.ZtZ, Lc) / tau2
        M = A + np.eye(Lz)
        sign, logdetM = np.linalg.slogdet(M)
        if np.any(sign <= 0):
            raise LikelihoodError("covariance matrix is not positive definite")
        Minv = np.linalg.inv(M)
        w = _segsum(self.Z * r[:, None], self.starts)
        lw = w @ Lc / tau
        c = np.einsum("bij,bj->bi", Minv[self.owner], lw)
        q = (_segsum(r * r, self.starts) - np.einsum("bi,bi->b", lw, c)) / tau2
        n = self.n[self.owner]
        logf = -0.5 * (n * (_LOG2PI + np.log(tau2)) + logdetM[self.owner] + q)
        if not want_grad:
            return logf, None
        Lcb = c @ Lc.T / tau
        rows_blk = np.repeat(np.arange(len(self.starts)), self.n_rows)
        vinv_r = (r - np.einsum("rl,rl->r", self.Z, Lcb[rows_blk])) / tau2
        v = (w - np.einsum("bij,bj->bi", self.ZtZ[self.owner], Lcb)) / tau2
        sq = _segsum(vinv_r * vinv_r, self.starts)
        ZtZL = self.ZtZ @ Lc
        ZVZ = (self.ZtZ - np.einsum("sil,slm,sjm->sij", ZtZL, Minv, ZtZL) / tau2) / tau2
        trV = (self.n - Lz + np.trace(Minv, axis1=1, axis2=2)) / tau2
        return logf, dict(vinv_r=vinv_r, v=v, sq=sq, ZVZ=ZVZ, trV=trV, rows_blk=rows_blk)


class JointLikelihood:
    """Vectorized joint log-likelihood on the unconstrained parameter scale.

    Parameters
    ----------
    ds : Dataset
        Trial data.  Group-3 subjects must have at least one observed death
        after their censoring time, which the last-observation-as-death
        adjustment guarantees.
    basis : SplineBasis
        Shared basis for the control-arm trend and the treatment effect.
    """

    def __init__(self, ds: Dataset, basis: SplineBasis):
        subs = ds.subjects
        if not subs:
            raise ValueError("empty dataset")
        self.basis = basis
        self.layout = ParamLayout(basis.k1, ds.P, ds.L, ds.Q)
        self.N = len(subs)
        self.T = np.array([s.obs_time for s in subs])
        self.event = np.array([s.event for s in subs])
        if not self.event.any():
            raise ValueError("no observed deaths")
        self.Xs = np.array([[s.arm, *s.x_surv] for s in subs], dtype=float)
        self.Xl = np.array([s.x_long for s in subs], dtype=float).reshape(self.N, -1)
        self.arm = np.array([s.arm for s in subs], dtype=float)
        self.d, self.counts = np.unique(self.T[self.event], return_counts=True)
        self.M = self.d.size
        order = np.argsort(self.T, kind="stable")
        self._order = order
        self._risk_start = np.searchsorted(self.T[order], self.d, side="left")
        self._kT = np.searchsorted(self.d, self.T, side="right") - 1
        has_meas = np.array([s.n_meas > 0 for s in subs])
        self.g1 = np.flatnonzero(self.event & has_meas)
        self.g3 = np.flatnonzero(~self.event & has_meas)
        self.g4 = np.flatnonzero(~self.event & ~has_meas)
        self.ev = np.flatnonzero(self.event)
        for i in self.g3:
            if self._kT[i] >= self.M - 1:
                raise LikelihoodError(
                    f"subject {subs[i].id} is censored beyond the last observed death; "
                    "the group-3 contribution is undefined without the "
                    "last-observation-as-death adjustment")
        self._b1 = self._compile([subs[i] for i in self.g1], self.g1,
                                 [[self._kT[i]] for i in self.g1])
        cand = [list(range(self._kT[i] + 1, self.M)) for i in self.g3]
        self._b3 = self._compile([subs[i] for i in self.g3], self.g3, cand) if len(self.g3) else None
        if self._b3 is not None:
            self._pair_m = np.concatenate(cand)
            self._pair_sub = np.repeat(np.arange(len(self.g3)), [len(c) for c in cand])
            self._pair_starts = np.concatenate([[0], np.cumsum([len(c) for c in cand])[:-1]])

    def _compile(self, subs, idx, cand):
        Bs, ys, arms, rsub, Zs, starts, owner = [], [], [], [], [], [], []
        ZtZ, nmeas = [], []
        pos = 0
        for slot, (s, ms) in enumerate(zip(subs, cand)):
            Z = s.z[::-1]
            ZtZ.append(Z.T @ Z)
            nmeas.append(s.n_meas)
            tstar = np.concatenate([retrospective_times(s, self.d[m])[0] for m in ms])
            Bs.append(self.basis(tstar).reshape(tstar.size, -1))
            ys.append(np.tile(s.meas_values[::-1], len(ms)))
            Zs.append(np.tile(Z, (len(ms), 1)))
            arms.append(np.full(tstar.size, float(s.arm)))
            rsub.append(np.full(tstar.size, idx[slot]))
            for _ in ms:
                starts.append(pos)
                owner.append(slot)
                pos += s.n_meas
        if not subs:
            return None
        return _Blocks(np.vstack(Bs), np.concatenate(ys), np.concatenate(arms),
                       np.concatenate(rsub), np.vstack(Zs), np.array(starts),
                       np.array(owner), len(subs), np.array(ZtZ), np.array(nmeas, dtype=float))

    # -- survival pieces ---------------------------------------------------
    def hazard(self, alpha) -> BreslowHazard:
        S0, _ = self._risk_sums(np.asarray(alpha, dtype=float), False)
        return BreslowHazard(self.d.copy(), self.counts / S0, self.counts)

    def _risk_sums(self, alpha, want_grad):
        e = np.exp(self.Xs @ alpha)
        es = e[self._order]
        S0 = np.cumsum(es[::-1])[::-1][self._risk_start]
        if not want_grad:
            return S0, None
        S1 = np.cumsum((es[:, None] * self.Xs[self._order])[::-1], axis=0)[::-1][self._risk_start]
        return S0, S1

    # -- evaluation ----------------------------------------------------------
    def __call__(self, u) -> float:
        return self.evaluate(u, want_grad=False)[0]

    def value_and_grad(self, u):
        return self.evaluate(u, want_grad=True)

    def components(self, u) -> dict:
        return self.evaluate(u, want_grad=False, parts=True)[2]

    def evaluate(self, u, want_grad=True, parts=False):
        lay = self.layout
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise LikelihoodError("non-finite parameters")
        bm, ba, psi = u[lay.beta_mu], u[lay.beta_A], u[lay.psi]
        Lc = _chol_from(u[lay.chol], lay.L)
        tau = float(np.exp(u[lay.log_tau]))
        if not tau > 0 or not np.isfinite(tau):
            raise LikelihoodError("residual standard deviation underflowed")
        alpha = u[lay.alpha]
        eta = self.Xs @ alpha
        e = np.exp(eta)
        S0, S1 = self._risk_sums(alpha, want_grad)
        jump = self.counts / S0
        cum = np.cumsum(jump)
        cum0 = np.concatenate([[0.0], cum])
        LamT = cum0[self._kT + 1]
        xpsi = self.Xl @ psi

        ev = self.ev
        surv_ev = np.log(jump[self._kT[ev]]) + eta[ev] - e[ev] * LamT[ev]
        l4 = -np.sum(e[self.g4] * LamT[self.g4])
        l_long1 = 0.0
        grad = np.zeros(lay.n_params) if want_grad else None
        if want_grad:
            xbar = S1 / S0[:, None]
            dcum = np.cumsum(-jump[:, None] * xbar, axis=0)
            dcum0 = np.vstack([np.zeros((1, xbar.shape[1])), dcum])
            dLamT = dcum0[self._kT + 1]
            ga = (-xbar[self._kT[ev]] + self.Xs[ev] * (1 - e[ev] * LamT[ev])[:, None]
                  - e[ev][:, None] * dLamT[ev]).sum(0)
            g4 = self.g4
            ga -= (self.Xs[g4] * (e[g4] * LamT[g4])[:, None] + e[g4][:, None] * dLamT[g4]).sum(0)
            gL = np.zeros((lay.L, lay.L))
            glt = 0.0

        if self._b1 is not None:
            b = self._b1
            logf, aux = b.evaluate(bm, ba, xpsi, Lc, tau, want_grad)
            l_long1 = logf.sum()
            if want_grad:
                self._accumulate(grad, gL, aux, b, np.ones(len(logf)), tau, Lc)
                glt += tau * tau * (aux["sq"].sum() - aux["trV"].sum())

        l3 = 0.0
        if self._b3 is not None:
            b = self._b3
            logf, aux = b.evaluate(bm, ba, xpsi, Lc, tau, want_grad)
            i3 = self.g3[self._pair_sub]
            m = self._pair_m
            log_p = eta[i3] - e[i3] * cum[m] + np.log(jump[m])
            log_surv = -e[self.g3] * LamT[self.g3]
            lse_p = _seg_logsumexp(log_p, self._pair_starts)
            a = logf + log_p + (log_surv - lse_p)[self._pair_sub]
            lse_a = _seg_logsumexp(a, self._pair_starts)
            if not np.all(np.isfinite(lse_a)):
                raise LikelihoodError("all mixture components vanish for a censored subject")
            l3 = lse_a.sum()
            if want_grad:
                wt = np.exp(a - lse_a[self._pair_sub])
                pi = np.exp(log_p - lse_p[self._pair_sub])
                self._accumulate(grad, gL, aux, b, wt, tau, Lc)
                trV = aux["trV"][b.owner]
                glt += tau * tau * np.sum(wt * (aux["sq"] - trV))
                dlogp = (self.Xs[i3] * (1 - e[i3] * cum[m])[:, None]
                         - e[i3][:, None] * dcum[m] - xbar[m])
                ga += ((wt - pi)[:, None] * dlogp).sum(0)
                g3 = self.g3
                ga -= (self.Xs[g3] * (e[g3] * LamT[g3])[:, None]
                       + e[g3][:, None] * dLamT[g3]).sum(0)

        value = float(l_long1 + surv_ev.sum() + l3 + l4)
        if not np.isfinite(value):
            raise LikelihoodError("log-likelihood is not finite")
        if want_grad:
            grad[lay.alpha] = ga
            G = 2 * gL @ Lc
            rows, cols = np.tril_indices(lay.L)
            gch = G[rows, cols]
            diag = rows == cols
            gch[diag] *= Lc[rows[diag], cols[diag]]
            grad[lay.chol] = gch
            grad[lay.log_tau] = glt
        out = (value, grad)
        if parts:
            out = out + ({"l1_long": float(l_long1), "l12_surv": float(surv_ev.sum()),
                          "wl3": float(l3), "l4": float(l4)},)
        return out

    def _accumulate(self, grad, gL, aux, b, wt, tau, Lc):
        lay = self.layout
        rho = wt[aux["rows_blk"]] * aux["vinv_r"]
        grad[lay.beta_mu] += b.B.T @ rho
        grad[lay.beta_A] += b.B.T @ (b.arm * rho)
        grad[lay.psi] += self.Xl.T @ np.bincount(b.row_sub, weights=rho, minlength=self.N)
        v = aux["v"]
        gL += 0.5 * (np.einsum("b,bi,bj->ij", wt, v, v)
                     - np.einsum("b,bij->ij", wt, aux["ZVZ"][b.owner]))


def _seg_logsumexp(a, starts):
    mx = np.maximum.reduceat(a, starts)
    counts = np.diff(np.append(starts, len(a)))
    mx_r = np.repeat(mx, counts)
    safe = np.where(np.isfinite(mx_r), mx_r, 0.0)
    return np.log(np.add.reduceat(np.exp(a - safe), starts)) + np.where(np.isfinite(mx), mx, 0.0)


class HazardProfile:
    """Fast repeated evaluation of :func:`breslow_jumps` on one dataset."""

    def __init__(self, ds: Dataset):
        self.T = np.array([s.obs_time for s in ds.subjects])
        E = np.array([s.event for s in ds.subjects])
        if not E.any():
            raise ValueError("no observed deaths")
        self.X = np.array([[s.arm, *s.x_surv] for s in ds.subjects], dtype=float)
        self.d, self.counts = np.unique(self.T[E], return_counts=True)
        self._order = np.argsort(self.T, kind="stable")
        self._start = np.searchsorted(self.T[self._order], self.d, side="left")

    def __call__(self, alpha) -> BreslowHazard:
        e = np.exp(self.X @ np.asarray(alpha, dtype=float))[self._order]
        S0 = np.cumsum(e[::-1])[::-1][self._start]
        return BreslowHazard(self.d, self.counts / S0, self.counts)
