"""Univariate ARIMA engine: KPSS differencing test, exact-ML fitting, AICc
order search, and h-step forecasts with variances.

The model for a series x with differencing order d is, in terms of the
d-times differenced series w,

    (1 - ar_1 B - ... - ar_p B^p) w_t = alpha + (1 + ma_1 B + ... + ma_q B^q) eps_t

with iid Gaussian eps of variance sigma^2. The likelihood is exact (Kalman
evaluation with stationary initialization); the optimizer works in an
unconstrained parameterization so fitted models are always stationary and
invertible, which is re-checked on the polynomial roots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _arma_kernels as _k
from .errors import (
    AllCandidatesFailed,
    NonConvergence,
    NonInvertible,
    SeriesTooShort,
    ValidationError,
)

KPSS_CRITICAL_5PCT = 0.463
ROOT_GUARD = 1.0 + 1e-6
_VARIANCE_FLOOR = 1e-24


@dataclass(frozen=True)
class KpssResult:
    statistic: float
    lags: int
    critical_value_5pct: float
    reject: bool


@dataclass(frozen=True)
class ArimaModel:
    """Fitted ARIMA(p,d,q): coefficients, fit quality, and bookkeeping."""

    p: int
    d: int
    q: int
    intercept: float
    ar_coefficients: tuple[float, ...]
    ma_coefficients: tuple[float, ...]
    innovation_variance: float
    log_likelihood: float
    aicc: float
    fitted_on: int
    with_intercept: bool

    @property
    def diff_mean(self) -> float:
        """Mean of the differenced series implied by the intercept."""
        return self.intercept / (1.0 - sum(self.ar_coefficients))

    @property
    def n_params(self) -> int:
        """AICc parameter count: coefficients, intercept flag, variance."""
        return self.p + self.q + (1 if self.with_intercept else 0) + 1


def _check_series(x, min_len: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size < min_len:
        raise SeriesTooShort(f"{what} needs length >= {min_len}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} must be finite")
    return arr


# -- stationarity testing ------------------------------------------------------

def kpss_level_test(x) -> KpssResult:
    """Level-stationarity KPSS test at the 5% asymptotic critical value.

    Bartlett-kernel long-run variance with lags = floor(4 (n/100)^(1/4)).
    A constant series has statistic 0 by convention.
    """
    arr = _check_series(x, 8, "kpss_level_test")
    n = arr.size
    e = arr - arr.mean()
    lags = int(math.floor(4.0 * (n / 100.0) ** 0.25))
    s2 = float(e @ e) / n
    for l in range(1, lags + 1):
        gamma = float(e[l:] @ e[:-l]) / n
        s2 += 2.0 * (1.0 - l / (lags + 1.0)) * gamma
    partial = np.cumsum(e)
    num = float(partial @ partial) / (n * n)
    stat = 0.0 if s2 <= 0.0 else num / s2
    return KpssResult(
        statistic=stat,
        lags=lags,
        critical_value_5pct=KPSS_CRITICAL_5PCT,
        reject=stat > KPSS_CRITICAL_5PCT,
    )


def select_d(x, d_max: int = 2) -> int:
    """Smallest d <= d_max whose d-times differenced series passes KPSS."""
    arr = _check_series(x, 8 + d_max, "select_d")
    for d in range(d_max + 1):
        w = np.diff(arr, n=d) if d else arr
        if not kpss_level_test(w).reject:
            return d
    return d_max


# -- differencing --------------------------------------------------------------

def difference(x, d: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if d < 0:
        raise ValidationError("d must be nonnegative")
    if arr.size <= d:
        raise SeriesTooShort(f"cannot difference length {arr.size} series {d} times")
    return np.diff(arr, n=d) if d else arr.copy()


def undifference(w, head) -> np.ndarray:
    """Invert `difference`: `head` holds the d dropped leading values."""
    w = np.asarray(w, dtype=float).ravel()
    head = np.asarray(head, dtype=float).ravel()
    out = w
    for level in range(len(head) - 1, -1, -1):
        anchor = head[level]
        # anchor is the first value of the series differenced `level` times
        rebuilt = np.empty(out.size + 1)
        rebuilt[0] = anchor
        rebuilt[1:] = anchor + np.cumsum(out)
        out = rebuilt
    return out


def difference_heads(x, d: int) -> np.ndarray:
    """First values of each successive difference, for exact reconstruction."""
    arr = np.asarray(x, dtype=float).ravel()
    heads = np.empty(d)
    cur = arr
    for level in range(d):
        heads[level] = cur[0]
        cur = np.diff(cur)
    return heads


# -- fitting -------------------------------------------------------------------

def _unpack(x: np.ndarray, p: int, q: int, with_mean: bool):
    phi = _k.pacf_to_stationary(np.ascontiguousarray(x[:p])) if p else np.zeros(0)
    theta = -_k.pacf_to_stationary(np.ascontiguousarray(x[p:p + q])) if q else np.zeros(0)
    mu = float(x[p + q]) if with_mean else 0.0
    return phi, theta, mu


def _check_roots(coeffs: np.ndarray, kind: str) -> None:
    # polynomial 1 - sum c_i z^i (AR) or 1 + sum c_i z^i (MA)
    if coeffs.size == 0:
        return
    sign = -1.0 if kind == "ar" else 1.0
    poly = np.concatenate([[1.0], sign * coeffs])[::-1]
    roots = np.roots(poly)
    if roots.size and np.min(np.abs(roots)) <= ROOT_GUARD:
        raise NonInvertible(f"{kind} root inside the guard band |z| > {ROOT_GUARD}")


def _filtered(w: np.ndarray, phi: np.ndarray, theta: np.ndarray, mu: float):
    phi_pad, rvec = _k._state_setup(np.ascontiguousarray(phi), np.ascontiguousarray(theta))
    v, f, a_pred, ok = _k.filter_pass(np.ascontiguousarray(w - mu), phi_pad, rvec)
    if not ok:
        raise NonConvergence("state filter degenerated at the fitted parameters")
    return v, f, a_pred


def fit_arima(x, p: int, d: int, q: int, with_intercept: bool) -> ArimaModel:
    """Exact-ML fit of ARIMA(p,d,q), optionally with an intercept.

    AICc uses k = p + q + intercept + 1 parameters and effective length
    n - d; it is +inf when the correction denominator is not positive.
    """
    if min(p, d, q) < 0 or p > 5 or q > 5 or d > 2:
        raise ValidationError("orders must satisfy 0 <= p,q <= 5 and 0 <= d <= 2")
    arr = _check_series(x, d + p + q + 3, "fit_arima")
    n = arr.size
    if n - d <= p + q + 2:
        raise SeriesTooShort(f"need n - d > p + q + 2, got n={n}, (p,d,q)=({p},{d},{q})")
    w = np.diff(arr, n=d) if d else arr
    nw = w.size

    n_free = p + q + (1 if with_intercept else 0)
    if n_free == 0:
        phi = np.zeros(0)
        theta = np.zeros(0)
        mu = 0.0
    else:
        x0 = np.zeros(n_free)
        steps = np.full(n_free, 0.5)
        if with_intercept:
            x0[p + q] = float(np.mean(w))
            scale = float(np.std(w))
            steps[p + q] = 0.5 * scale if scale > 0 else 1e-4
        max_iter = 400 + 250 * n_free
        xb, fb, converged = _k.nelder_mead(
            np.ascontiguousarray(w), p, q, with_intercept, x0, steps, max_iter, 1e-10
        )
        if fb >= _k.BIG:
            raise NonConvergence(f"likelihood not finite for ARIMA({p},{d},{q})")
        if not converged:
            raise NonConvergence(f"optimizer hit the iteration cap for ARIMA({p},{d},{q})")
        phi, theta, mu = _unpack(xb, p, q, with_intercept)

    _check_roots(phi, "ar")
    _check_roots(theta, "ma")
    v, f, _ = _filtered(w, phi, theta, mu)
    ssq = float(np.sum(v * v / f))
    sigma2 = max(ssq / nw, _VARIANCE_FLOOR)
    ll = -0.5 * (nw * _k.LOG_2PI + nw * math.log(sigma2) + float(np.sum(np.log(f))) + ssq / sigma2)
    k = p + q + (1 if with_intercept else 0) + 1
    denom = nw - k - 1
    aicc = -2.0 * ll + 2.0 * k + (2.0 * k * (k + 1.0) / denom if denom > 0 else math.inf)
    intercept = mu * (1.0 - float(np.sum(phi))) if with_intercept else 0.0
    return ArimaModel(
        p=p, d=d, q=q,
        intercept=intercept,
        ar_coefficients=tuple(float(c) for c in phi),
        ma_coefficients=tuple(float(c) for c in theta),
        innovation_variance=sigma2,
        log_likelihood=ll,
        aicc=aicc,
        fitted_on=n,
        with_intercept=with_intercept,
    )


def _drift_wanted(w: np.ndarray) -> bool:
    # include drift at d=1 only when the differenced mean is > 2 SE from 0
    if w.size < 3:
        return False
    sd = float(np.std(w, ddof=1))
    if sd == 0.0:
        return abs(float(np.mean(w))) > 0.0
    return abs(float(np.mean(w))) > 2.0 * sd / math.sqrt(w.size)


def _is_effectively_constant(w: np.ndarray) -> bool:
    # ULP-level jitter (e.g. a float linear trend after differencing) must not
    # reach the optimizer: the concentrated likelihood is chaotic there
    spread = float(np.max(w) - np.min(w))
    return spread <= 1e-10 * max(1.0, float(np.max(np.abs(w))))


def _constant_shortcut(arr: np.ndarray, d: int) -> ArimaModel:
    """Degenerate input: the differenced series is constant (up to ULP noise)."""
    w = np.diff(arr, n=d) if d else arr
    c = float(np.mean(w))
    with_intercept = (d == 0) or (d == 1 and c != 0.0)
    nw = w.size
    sigma2 = _VARIANCE_FLOOR
    ll = -0.5 * nw * (_k.LOG_2PI + math.log(sigma2) + 0.0)
    k = (1 if with_intercept else 0) + 1
    denom = nw - k - 1
    aicc = -2.0 * ll + 2.0 * k + (2.0 * k * (k + 1.0) / denom if denom > 0 else math.inf)
    return ArimaModel(
        p=0, d=d, q=0,
        intercept=c if with_intercept else 0.0,
        ar_coefficients=(),
        ma_coefficients=(),
        innovation_variance=sigma2,
        log_likelihood=ll,
        aicc=aicc,
        fitted_on=arr.size,
        with_intercept=with_intercept,
    )


_START_SET = ((0, 0), (1, 0), (0, 1), (1, 1))


def auto_arima(
    x,
    d: int | None = None,
    max_p: int = 5,
    max_q: int = 5,
    stepwise: bool = True,
) -> ArimaModel:
    """KPSS-differenced, AICc-ranked automatic ARIMA selection.

    Stepwise search from {(0,0),(1,0),(0,1),(1,1)} moving +-1 in p and q;
    `stepwise=False` fits the full (p,q) grid. Ties break toward smaller
    p+q, then smaller p. Candidates that fail to fit are skipped; if all
    fail, AllCandidatesFailed is raised.
    """
    arr = _check_series(x, 10, "auto_arima")
    if d is None:
        d = select_d(arr)
    w = np.diff(arr, n=d) if d else arr
    if _is_effectively_constant(w):
        return _constant_shortcut(arr, d)
    if d == 0:
        with_intercept = True
    elif d == 1:
        with_intercept = _drift_wanted(w)
    else:
        with_intercept = False

    fits: dict[tuple[int, int], ArimaModel | None] = {}

    def try_order(p: int, q: int) -> ArimaModel | None:
        if (p, q) in fits:
            return fits[(p, q)]
        try:
            model = fit_arima(arr, p, d, q, with_intercept)
        except (NonConvergence, NonInvertible, SeriesTooShort):
            model = None
        fits[(p, q)] = model
        return model

    def key(model: ArimaModel) -> tuple[float, int, int]:
        return (model.aicc, model.p + model.q, model.p)

    if stepwise:
        for p, q in _START_SET:
            if p <= max_p and q <= max_q:
                try_order(p, q)
        best = min((m for m in fits.values() if m is not None), key=key, default=None)
        if best is None:
            raise AllCandidatesFailed("no starting ARIMA candidate could be fitted")
        while True:
            p0, q0 = best.p, best.q
            moves = [(p0 + 1, q0), (p0 - 1, q0), (p0, q0 + 1), (p0, q0 - 1)]
            improved = None
            for p, q in moves:
                if not (0 <= p <= max_p and 0 <= q <= max_q):
                    continue
                cand = try_order(p, q)
                if cand is not None and key(cand) < key(best):
                    if improved is None or key(cand) < key(improved):
                        improved = cand
            if improved is None:
                return best
            best = improved
    else:
        for p in range(max_p + 1):
            for q in range(max_q + 1):
                try_order(p, q)
        best = min((m for m in fits.values() if m is not None), key=key, default=None)
        if best is None:
            raise AllCandidatesFailed("no ARIMA candidate could be fitted")
        return best


# -- forecasting ---------------------------------------------------------------

def arma_psi_weights(ar: tuple[float, ...], ma: tuple[float, ...], n_terms: int) -> np.ndarray:
    """Moving-average representation weights psi_0..psi_{n_terms-1}."""
    psi = np.zeros(n_terms)
    psi[0] = 1.0
    for j in range(1, n_terms):
        acc = ma[j - 1] if j - 1 < len(ma) else 0.0
        for i in range(1, min(j, len(ar)) + 1):
            acc += ar[i - 1] * psi[j - i]
        psi[j] = acc
    return psi


def forecast(model: ArimaModel, x, h: int) -> tuple[np.ndarray, np.ndarray]:
    """h-step forecast means and variances for the series the model was fit on.

    Means iterate the filtered state (so MA terms are honored); variances use
    the integrated moving-average representation, sigma^2 * cumsum(psi^2),
    which is non-decreasing in h.
    """
    if h < 1:
        raise ValidationError("h must be >= 1")
    arr = _check_series(x, model.d + 1, "forecast")
    if arr.size != model.fitted_on:
        raise ValidationError(
            f"model was fitted on length {model.fitted_on}, got {arr.size}"
        )
    d = model.d
    w = np.diff(arr, n=d) if d else arr
    phi = np.asarray(model.ar_coefficients)
    theta = np.asarray(model.ma_coefficients)
    mu = model.diff_mean if model.with_intercept else 0.0
    m = max(model.p, model.q + 1)

    if model.p == 0 and model.q == 0:
        means_w = np.full(h, mu)
    else:
        _, _, a = _filtered(w, phi, theta, mu)
        phi_pad = np.zeros(m)
        phi_pad[:model.p] = phi
        means_w = np.empty(h)
        state = a.copy()
        for i in range(h):
            means_w[i] = state[0] + mu
            nxt = np.empty(m)
            s0 = state[0]
            for r in range(m):
                nxt[r] = phi_pad[r] * s0 + (state[r + 1] if r + 1 < m else 0.0)
            state = nxt

    # integrate the differenced-scale means back to the original scale
    means = means_w
    cur = arr
    tails = []
    for _ in range(d):
        tails.append(cur[-1])
        cur = np.diff(cur)
    for level in range(d - 1, -1, -1):
        means = tails[level] + np.cumsum(means)

    psi = arma_psi_weights(model.ar_coefficients, model.ma_coefficients, h)
    for _ in range(d):
        psi = np.cumsum(psi)
    variances = model.innovation_variance * np.cumsum(psi * psi)
    return means, variances


def insample_innovations(model: ArimaModel, x) -> tuple[np.ndarray, np.ndarray]:
    """One-step prediction errors and scaled variances on the differenced scale."""
    arr = _check_series(x, model.d + 1, "insample_innovations")
    if arr.size != model.fitted_on:
        raise ValidationError("series length does not match the fitted model")
    w = np.diff(arr, n=model.d) if model.d else arr
    mu = model.diff_mean if model.with_intercept else 0.0
    v, f, _ = _filtered(w, np.asarray(model.ar_coefficients), np.asarray(model.ma_coefficients), mu)
    return v, f
