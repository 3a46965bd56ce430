"""JIT-compiled internals of the ARMA maximum-likelihood fit.

Everything here works on the differenced, possibly demeaned series. The
likelihood is the exact Gaussian one, evaluated by a Kalman filter on the
usual ARMA state form (state dimension max(p, q+1), exact stationary
initialization) with the innovation variance concentrated out. Optimization
is Nelder-Mead over unconstrained parameters: partial autocorrelations mapped
through tanh keep the AR and MA polynomials strictly stationary/invertible.

Kept free of Python-object work so candidate fits can run under nogil.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
BIG = 1e100
# tanh saturates to exactly 1.0 in float64 for arguments above ~19, which
# would put a root exactly on the unit circle and make the stationary
# covariance system singular; cap the PACF strictly inside (-1, 1)
PACF_CAP = 1.0 - 1e-10


@njit(cache=True, nogil=True)
def pacf_to_stationary(r: np.ndarray) -> np.ndarray:
    """Unconstrained reals -> coefficients of a stationary AR polynomial.

    tanh maps each real to a partial autocorrelation in (-1, 1); the
    Levinson-Durbin recursion turns those into AR coefficients.
    """
    k = r.shape[0]
    phi = np.zeros(k)
    tmp = np.zeros(k)
    for j in range(k):
        a = math.tanh(r[j])
        if a > PACF_CAP:
            a = PACF_CAP
        elif a < -PACF_CAP:
            a = -PACF_CAP
        for i in range(j):
            tmp[i] = phi[i] - a * phi[j - 1 - i]
        for i in range(j):
            phi[i] = tmp[i]
        phi[j] = a
    return phi


@njit(cache=True, nogil=True)
def _state_setup(phi: np.ndarray, theta: np.ndarray):
    """Padded AR column and MA-loading vector of the state form."""
    p = phi.shape[0]
    q = theta.shape[0]
    m = max(p, q + 1)
    phi_pad = np.zeros(m)
    for i in range(p):
        phi_pad[i] = phi[i]
    rvec = np.zeros(m)
    rvec[0] = 1.0
    for i in range(q):
        rvec[i + 1] = theta[i]
    return phi_pad, rvec


@njit(cache=True, nogil=True)
def _stationary_cov(phi_pad: np.ndarray, rvec: np.ndarray) -> np.ndarray:
    """Solve P = T P T' + R R' for the stationary state covariance.

    T is the companion matrix with first column phi_pad, so
    (T P T')_{ij} = phi_i phi_j P_00 + phi_i P_{0,j+1} + phi_j P_{0,i+1}
    + P_{i+1,j+1} (terms with an index past the edge drop out). The system is
    assembled over the lower triangle of P only, at most five coefficients
    per equation.
    """
    m = phi_pad.shape[0]
    if m == 1:
        denom = 1.0 - phi_pad[0] * phi_pad[0]
        out = np.empty((1, 1))
        out[0, 0] = rvec[0] * rvec[0] / denom
        return out

    allzero = True
    for i in range(m):
        if phi_pad[i] != 0.0:
            allzero = False
            break
    p0 = np.zeros((m, m))
    if allzero:
        # pure moving average: T is a shift, the recursion terminates
        for i in range(m - 1, -1, -1):
            for j in range(i, -1, -1):
                v = rvec[i] * rvec[j]
                if i + 1 < m and j + 1 < m:
                    v += p0[i + 1, j + 1]
                p0[i, j] = v
                p0[j, i] = v
        return p0

    s = m * (m + 1) // 2
    pos = np.empty((m, m), dtype=np.int64)
    c = 0
    for i in range(m):
        for j in range(i + 1):
            pos[i, j] = c
            pos[j, i] = c
            c += 1
    a = np.zeros((s, s))
    b = np.empty(s)
    for i in range(m):
        for j in range(i + 1):
            row = pos[i, j]
            a[row, row] += 1.0
            a[row, pos[0, 0]] -= phi_pad[i] * phi_pad[j]
            if j + 1 < m:
                a[row, pos[0, j + 1]] -= phi_pad[i]
            if i + 1 < m:
                a[row, pos[0, i + 1]] -= phi_pad[j]
            if i + 1 < m and j + 1 < m:
                a[row, pos[i + 1, j + 1]] -= 1.0
            b[row] = rvec[i] * rvec[j]
    try:
        sol = np.linalg.solve(a, b)
    except Exception:
        # roots so close to the unit circle that the system is numerically
        # singular; the caller treats a non-finite covariance as a rejected
        # parameter point
        return np.full((m, m), np.nan)
    for i in range(m):
        for j in range(i + 1):
            v = sol[pos[i, j]]
            p0[i, j] = v
            p0[j, i] = v
    return p0


@njit(cache=True, nogil=True)
def filter_pass(w: np.ndarray, phi_pad: np.ndarray, rvec: np.ndarray):
    """Prediction-error Kalman pass with unit innovation variance.

    Returns (innovations v, scaled prediction variances F, one-step-ahead
    state after the last observation, ok flag).
    """
    m = phi_pad.shape[0]
    n = w.shape[0]
    v = np.empty(n)
    f = np.empty(n)
    a = np.zeros(m)
    a_new = np.empty(m)
    p = _stationary_cov(phi_pad, rvec)
    ok = True
    for i in range(m):
        for j in range(m):
            if not math.isfinite(p[i, j]):
                ok = False
    if not ok:
        return v, f, a, False
    tp = np.empty((m, m))
    pn = np.empty((m, m))
    kg = np.empty(m)
    for t in range(n):
        ft = p[0, 0]
        if not (ft > 1e-13) or not math.isfinite(ft):
            return v, f, a, False
        vt = w[t] - a[0]
        v[t] = vt
        f[t] = ft
        # tp = T @ p, exploiting T's companion structure
        for i in range(m):
            base = phi_pad[i]
            for j in range(m):
                acc = base * p[0, j]
                if i + 1 < m:
                    acc += p[i + 1, j]
                tp[i, j] = acc
        for i in range(m):
            kg[i] = tp[i, 0] / ft
        a0 = a[0]
        for i in range(m):
            acc = phi_pad[i] * a0 + kg[i] * vt
            if i + 1 < m:
                acc += a[i + 1]
            a_new[i] = acc
        for i in range(m):
            a[i] = a_new[i]
        # pn = tp @ T' + R R' - F K K'
        for i in range(m):
            for j in range(m):
                acc = phi_pad[j] * tp[i, 0]
                if j + 1 < m:
                    acc += tp[i, j + 1]
                pn[i, j] = acc + rvec[i] * rvec[j] - ft * kg[i] * kg[j]
        for i in range(m):
            p[i, i] = pn[i, i]
            for j in range(i + 1, m):
                val = 0.5 * (pn[i, j] + pn[j, i])
                p[i, j] = val
                p[j, i] = val
    return v, f, a, True


@njit(cache=True, nogil=True)
def negloglik(x: np.ndarray, w: np.ndarray, p: int, q: int, with_mean: bool) -> float:
    """Negative concentrated log-likelihood at unconstrained parameters x."""
    phi = pacf_to_stationary(x[:p]) if p > 0 else np.zeros(0)
    theta = -pacf_to_stationary(x[p:p + q]) if q > 0 else np.zeros(0)
    mu = x[p + q] if with_mean else 0.0
    n = w.shape[0]
    wc = np.empty(n)
    for t in range(n):
        wc[t] = w[t] - mu
    phi_pad, rvec = _state_setup(phi, theta)
    v, f, _, ok = filter_pass(wc, phi_pad, rvec)
    if not ok:
        return BIG
    ssq = 0.0
    slf = 0.0
    for t in range(n):
        ssq += v[t] * v[t] / f[t]
        slf += math.log(f[t])
    if not (ssq > 0.0) or not math.isfinite(ssq):
        return BIG
    sigma2 = ssq / n
    ll = -0.5 * (n * LOG_2PI + n * math.log(sigma2) + slf + n)
    if not math.isfinite(ll):
        return BIG
    return -ll


@njit(cache=True, nogil=True)
def nelder_mead(
    w: np.ndarray,
    p: int,
    q: int,
    with_mean: bool,
    x0: np.ndarray,
    steps: np.ndarray,
    max_iter: int,
    ftol: float,
):
    """Minimize negloglik from x0; returns (x_best, f_best, converged)."""
    k = x0.shape[0]
    npts = k + 1
    sim = np.empty((npts, k))
    fv = np.empty(npts)
    for i in range(npts):
        for j in range(k):
            sim[i, j] = x0[j]
        if i > 0:
            sim[i, i - 1] += steps[i - 1]
        fv[i] = negloglik(sim[i], w, p, q, with_mean)
    cen = np.empty(k)
    xr = np.empty(k)
    xe = np.empty(k)
    xc = np.empty(k)
    converged = False
    for _ in range(max_iter):
        order = np.argsort(fv)
        sim = sim[order].copy()
        fv = fv[order].copy()
        if fv[-1] - fv[0] <= ftol * (1.0 + abs(fv[0])):
            converged = True
            break
        for j in range(k):
            s = 0.0
            for i in range(npts - 1):
                s += sim[i, j]
            cen[j] = s / (npts - 1)
        for j in range(k):
            xr[j] = cen[j] + (cen[j] - sim[-1, j])
        fr = negloglik(xr, w, p, q, with_mean)
        if fr < fv[0]:
            for j in range(k):
                xe[j] = cen[j] + 2.0 * (cen[j] - sim[-1, j])
            fe = negloglik(xe, w, p, q, with_mean)
            if fe < fr:
                for j in range(k):
                    sim[-1, j] = xe[j]
                fv[-1] = fe
            else:
                for j in range(k):
                    sim[-1, j] = xr[j]
                fv[-1] = fr
        elif fr < fv[-2]:
            for j in range(k):
                sim[-1, j] = xr[j]
            fv[-1] = fr
        else:
            if fr < fv[-1]:
                for j in range(k):
                    xc[j] = cen[j] + 0.5 * (xr[j] - cen[j])
                fc = negloglik(xc, w, p, q, with_mean)
                if fc <= fr:
                    for j in range(k):
                        sim[-1, j] = xc[j]
                    fv[-1] = fc
                else:
                    for i in range(1, npts):
                        for j in range(k):
                            sim[i, j] = sim[0, j] + 0.5 * (sim[i, j] - sim[0, j])
                        fv[i] = negloglik(sim[i], w, p, q, with_mean)
            else:
                for j in range(k):
                    xc[j] = cen[j] - 0.5 * (cen[j] - sim[-1, j])
                fc = negloglik(xc, w, p, q, with_mean)
                if fc < fv[-1]:
                    for j in range(k):
                        sim[-1, j] = xc[j]
                    fv[-1] = fc
                else:
                    for i in range(1, npts):
                        for j in range(k):
                            sim[i, j] = sim[0, j] + 0.5 * (sim[i, j] - sim[0, j])
                        fv[i] = negloglik(sim[i], w, p, q, with_mean)
    best = 0
    for i in range(1, npts):
        if fv[i] < fv[best]:
            best = i
    return sim[best].copy(), fv[best], converged
