"""Natural cubic regression splines on the retrospective time scale.

The basis is built from a clamped cubic B-spline basis whose second
derivative is forced to zero at both boundary knots by a fixed linear
transform (the null space of the boundary constraints).  Beyond the boundary
knots every basis function continues as a straight line, so fitted curves
extrapolate linearly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

__all__ = ["KnotVector", "SplineBasis", "place_knots", "eval_basis", "integrate_basis"]

_DEGREE = 3


@dataclass(frozen=True)
class KnotVector:
    """Boundary and interior knots of a natural cubic spline basis.

    A basis of dimension ``k1`` uses ``k1 - 2`` interior knots.
    """

    boundary_lo: float
    boundary_hi: float
    interior: tuple[float, ...] = ()

    def __post_init__(self):
        knots = np.array([self.boundary_lo, *self.interior, self.boundary_hi], dtype=float)
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ValueError(f"knots must be strictly increasing, got {knots.tolist()}")
        object.__setattr__(self, "interior", tuple(float(k) for k in self.interior))

    @property
    def k1(self) -> int:
        return len(self.interior) + 2

    @property
    def all_knots(self) -> np.ndarray:
        return np.array([self.boundary_lo, *self.interior, self.boundary_hi])

    def to_dict(self) -> dict:
        return {"boundary_lo": self.boundary_lo, "boundary_hi": self.boundary_hi,
                "interior": list(self.interior)}

    @classmethod
    def from_dict(cls, d: dict) -> "KnotVector":
        return cls(float(d["boundary_lo"]), float(d["boundary_hi"]), tuple(d["interior"]))


def place_knots(times, k1: int) -> KnotVector:
    """Place ``k1`` knots at equally spaced sample quantiles of ``times``.

    The boundary knots are the sample minimum and maximum; interior knot ``j``
    sits at quantile level ``j / (k1 - 1)``.

    Raises
    ------
    ValueError
        If ``k1 < 2``, if there are fewer than ``k1`` distinct times, or if two
        quantiles coincide (the collapsed knot vector would be rank deficient).
    """
    if k1 < 2:
        raise ValueError(f"k1 must be at least 2, got {k1}")
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0 or not np.all(np.isfinite(times)):
        raise ValueError("times must be a nonempty array of finite values")
    n_distinct = np.unique(times).size
    if n_distinct < k1:
        raise ValueError(f"need at least {k1} distinct times for k1={k1}, got {n_distinct}")
    levels = np.arange(1, k1 - 1) / (k1 - 1)
    interior = np.quantile(times, levels) if levels.size else np.empty(0)
    lo, hi = float(times.min()), float(times.max())
    knots = np.concatenate([[lo], interior, [hi]])
    collapsed = np.unique(knots)
    if collapsed.size < knots.size:
        raise ValueError(
            f"duplicate quantile knots for k1={k1}: {knots.tolist()} collapse to "
            f"{collapsed.size - 2} interior knots, need {k1 - 2}")
    return KnotVector(lo, hi, tuple(interior))


class SplineBasis:
    """Natural cubic spline basis of dimension ``k1`` over a :class:`KnotVector`.

    Calling the basis on an array of retrospective times returns an
    ``(n, k1)`` design matrix.  The span contains all linear functions.
    """

    def __init__(self, knots: KnotVector):
        self.knots = knots
        lo, hi = knots.boundary_lo, knots.boundary_hi
        self._t = np.concatenate([[lo] * (_DEGREE + 1), knots.interior, [hi] * (_DEGREE + 1)])
        n_raw = len(self._t) - _DEGREE - 1
        self._raw = BSpline(self._t, np.eye(n_raw), _DEGREE, extrapolate=False)
        d2 = self._raw.derivative(2)
        constraints = np.vstack([_at(d2, lo), _at(d2, hi)])
        q, _ = np.linalg.qr(constraints.T, mode="complete")
        self.transform = q[:, 2:]
        d1 = self._raw.derivative(1)
        self._value_lo = (_at(self._raw, lo) @ self.transform)[0]
        self._value_hi = (_at(self._raw, hi) @ self.transform)[0]
        self._slope_lo = (_at(d1, lo) @ self.transform)[0]
        self._slope_hi = (_at(d1, hi) @ self.transform)[0]

    @property
    def k1(self) -> int:
        return self.knots.k1

    @cached_property
    def _antideriv(self) -> BSpline:
        return self._raw.antiderivative()

    def __call__(self, tstar) -> np.ndarray:
        t = np.asarray(tstar, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t).ravel()
        if not np.all(np.isfinite(t)):
            raise ValueError("retrospective times must be finite")
        lo, hi = self.knots.boundary_lo, self.knots.boundary_hi
        inside = np.clip(t, lo, hi)
        out = _at(self._raw, inside) @ self.transform
        below = t < lo
        above = t > hi
        if below.any():
            out[below] = self._value_lo + np.outer(t[below] - lo, self._slope_lo)
        if above.any():
            out[above] = self._value_hi + np.outer(t[above] - hi, self._slope_hi)
        return out[0] if scalar else out

    def integrate(self, a: float, b: float) -> np.ndarray:
        """Exact integral of every basis function over ``[a, b]``."""
        if a > b:
            raise ValueError(f"lower limit {a} exceeds upper limit {b}")
        return self.integrate_many([a], [b])[0]

    def integrate_many(self, a, b) -> np.ndarray:
        """Row-wise exact integrals over the intervals ``[a[i], b[i]]``.

        Cubic pieces are integrated through the B-spline antiderivative and the
        linear extensions beyond the boundary knots in closed form.
        """
        a = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
        b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
        if np.any(a > b):
            raise ValueError("lower limit exceeds upper limit")
        lo, hi = self.knots.boundary_lo, self.knots.boundary_hi
        # linear segment left of the first knot
        u = np.minimum(a, lo) - lo
        v = np.minimum(b, lo) - lo
        total = np.outer(v - u, self._value_lo) + np.outer((v * v - u * u) / 2, self._slope_lo)
        # linear segment right of the last knot
        u = np.maximum(a, hi) - hi
        v = np.maximum(b, hi) - hi
        total += np.outer(v - u, self._value_hi) + np.outer((v * v - u * u) / 2, self._slope_hi)
        ia = np.clip(a, lo, hi)
        ib = np.clip(b, lo, hi)
        F = self._antideriv
        total += (_at(F, ib) - _at(F, ia)) @ self.transform
        return total


def _at(spl: BSpline, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.asarray(spl(x)).reshape(len(x), -1)


def eval_basis(knots: KnotVector, tstar) -> np.ndarray:
    """Evaluate the ``k1`` natural spline basis functions at ``tstar``."""
    return SplineBasis(knots)(tstar)


def integrate_basis(knots: KnotVector, a: float, b: float) -> np.ndarray:
    """Integral of each basis function over ``[a, b]``."""
    return SplineBasis(knots).integrate(a, b)
