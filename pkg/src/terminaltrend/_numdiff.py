"""Central finite differences with relative step sizes."""
from __future__ import annotations

import numpy as np


def _steps(x, rel):
    return rel * np.maximum(1.0, np.abs(x))


def central_gradient(f, x, rel_step=1e-6):
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2 * h[j])
    return g


def central_jacobian(fun, x, rel_step=1e-6):
    """Jacobian of a vector-valued ``fun``; rows are outputs."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h[j]))
    return np.column_stack(cols)


def hessian_from_gradient(grad, x, rel_step=1e-4):
    """Symmetrized central-difference Jacobian of an analytic gradient."""
    H = central_jacobian(grad, x, rel_step)
    return 0.5 * (H + H.T)


def hessian_from_function(f, x, rel_step=1e-4):
    """Four-point central-difference Hessian from function values only."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    n = x.size
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                 + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H
