"""Independent reference computations shared by the test modules."""
import math

import numpy as np
from scipy.optimize import minimize


def dense_lmm_oracle(ds, basis):
    """ML fit of the random-intercept model on all subjects with dense matrices."""
    Xs, ys = [], []
    for s in ds.subjects:
        if not s.n_meas:
            continue
        B = basis(s.obs_time - s.meas_times).reshape(s.n_meas, -1)
        Xs.append(np.hstack([B, s.arm * B, np.tile(s.x_long, (s.n_meas, 1))]))
        ys.append(s.meas_values)

    def profile(v):
        sig2, tau2 = np.exp(2 * v)
        XVX, XVy, parts = 0.0, 0.0, []
        for X, y in zip(Xs, ys):
            V = sig2 * np.ones((y.size, y.size)) + tau2 * np.eye(y.size)
            Vi = np.linalg.inv(V)
            XVX = XVX + X.T @ Vi @ X
            XVy = XVy + X.T @ Vi @ y
            parts.append((np.linalg.slogdet(V)[1], Vi))
        beta = np.linalg.solve(XVX, XVy)
        ll = 0.0
        for (X, y), (logdet, Vi) in zip(zip(Xs, ys), parts):
            r = y - X @ beta
            ll -= 0.5 * (y.size * math.log(2 * math.pi) + logdet + r @ Vi @ r)
        return ll, beta

    res = minimize(lambda v: -profile(v)[0], np.zeros(2), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    ll, beta = profile(res.x)
    return beta, np.exp(res.x), ll
