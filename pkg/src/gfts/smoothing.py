"""Weighted penalized smoothing of noisy log-mortality curves.

One curve at a time: minimize

    sum_j w_j * |y_j - f(z_j)|  +  lam * sum_j |f'(z_{j+1}) - f'(z_j)|

over a cubic B-spline f, with both absolute values epsilon-smoothed as
sqrt(u^2 + eps^2) and the derivative differences realized as second-order
finite differences of the fitted values scaled by grid spacing. The smoothed
objective is minimized by iteratively reweighted least squares
(majorize-minimize, so the objective never increases). Above a threshold age
the fitted values are projected onto non-decreasing sequences by
pool-adjacent-violators.

Observation weights follow the Poisson variance of observed log-rates:
w = deaths, with a fallback weight of 0.5 (and observation log((D+0.5)/E))
in zero-death cells. Cells with weight 0 are treated as missing and filled
by the smoother.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .domain import LOG_RATE, AgeGrid, FunctionalSeries, GroupedDataset, SeriesKey
from .errors import ShapeMismatch, ValidationError

logger = logging.getLogger(__name__)

AUTO = "auto"
DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.logspace(-3.0, 3.0, 13))


@dataclass(frozen=True)
class SmoothingConfig:
    """Knobs of the curve smoother.

    lam is either a positive penalty weight or "auto", which picks one from
    `lambda_grid` by `cv_folds`-fold cross-validation with age-index stripe
    folds, scored by weighted absolute error on held-out ages.
    """

    lam: float | str = 10.0
    monotone_from_age: float = 65.0
    basis_knots: int | None = None
    epsilon: float = 1e-4
    max_iter: int = 200
    tol: float = 1e-8
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    cv_folds: int = 5

    def __post_init__(self):
        if isinstance(self.lam, str):
            if self.lam != AUTO:
                raise ValidationError(f"lam must be positive or {AUTO!r}")
        elif not (float(self.lam) > 0):
            raise ValidationError("lam must be positive")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be at least 2")
        if any(l <= 0 for l in self.lambda_grid):
            raise ValidationError("lambda grid must be positive")


@dataclass(frozen=True)
class SmoothResult:
    """Fitted curve values plus convergence diagnostics."""

    values: np.ndarray
    lam: float
    iterations: int
    converged: bool
    objective: float


def poisson_weights(deaths: np.ndarray, exposure: np.ndarray) -> np.ndarray:
    """Observation weights 1/sigma^2 for observed log-rates.

    The Poisson model gives sigma^2 = 1/(m*E) at rate m = D/E, hence
    w = m*E = D; zero-death cells get the fallback weight 0.5.
    """
    d = np.asarray(deaths, dtype=float)
    e = np.asarray(exposure, dtype=float)
    if d.shape != e.shape:
        raise ShapeMismatch("deaths and exposure must have the same shape")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
        raise ValidationError("counts must be finite")
    if np.any(d < 0):
        raise ValidationError("deaths must be nonnegative")
    if np.any(e <= 0):
        raise ValidationError("exposure must be positive")
    return np.where(d > 0, d, 0.5)


def log_observations(deaths: np.ndarray, exposure: np.ndarray) -> np.ndarray:
    """Observed log-rates, with the half-death adjustment in zero cells."""
    d = np.asarray(deaths, dtype=float)
    e = np.asarray(exposure, dtype=float)
    return np.log(np.where(d > 0, d, 0.5) / e)


def spline_basis(grid: AgeGrid, n_interior: int | None = None) -> np.ndarray:
    """Clamped cubic B-spline design matrix evaluated at the grid points.

    Defaults to min(p // 2, 30) equally spaced interior knots.
    """
    z = grid.array
    p = len(z)
    if n_interior is None:
        n_interior = min(p // 2, 30)
    if p == 1:
        return np.ones((1, 1))
    k = 3
    interior = np.linspace(z[0], z[-1], n_interior + 2)[1:-1]
    t = np.concatenate([np.repeat(z[0], k + 1), interior, np.repeat(z[-1], k + 1)])
    return BSpline.design_matrix(z, t, k).toarray()


def second_difference_operator(grid: AgeGrid) -> np.ndarray:
    """Map fitted values to differences of consecutive finite-difference slopes."""
    z = grid.array
    p = len(z)
    if p < 3:
        return np.zeros((0, p))
    dz = np.diff(z)
    op = np.zeros((p - 2, p))
    for i in range(p - 2):
        op[i, i] = 1.0 / dz[i]
        op[i, i + 1] = -1.0 / dz[i] - 1.0 / dz[i + 1]
        op[i, i + 2] = 1.0 / dz[i + 1]
    return op


def pava_nondecreasing(values: np.ndarray) -> np.ndarray:
    """Least-squares projection onto non-decreasing sequences."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    result = v.copy()
    # blocks of (sum, count) pooled while the running means decrease
    sums = []
    counts = []
    for x in v:
        sums.append(x)
        counts.append(1)
        while len(sums) > 1 and sums[-2] / counts[-2] > sums[-1] / counts[-1]:
            sums[-2] += sums[-1]
            counts[-2] += counts[-1]
            sums.pop()
            counts.pop()
    pos = 0
    for s, c in zip(sums, counts):
        result[pos:pos + c] = s / c
        pos += c
    return result


def smoothing_objective(
    grid: AgeGrid,
    y: np.ndarray,
    weights: np.ndarray,
    fitted: np.ndarray,
    lam: float,
    epsilon: float = 0.0,
) -> float:
    """The (optionally epsilon-smoothed) objective at given fitted values."""
    d2 = second_difference_operator(grid) @ fitted
    u = np.where(weights > 0, y - fitted, 0.0)
    if epsilon > 0:
        loss = float(np.sum(weights * np.sqrt(u * u + epsilon * epsilon)))
        pen = float(lam * np.sum(np.sqrt(d2 * d2 + epsilon * epsilon)))
    else:
        loss = float(np.sum(weights * np.abs(u)))
        pen = float(lam * np.sum(np.abs(d2)))
    return loss + pen


def _irls(
    basis: np.ndarray,
    d2op_b: np.ndarray,
    grid: AgeGrid,
    y: np.ndarray,
    w: np.ndarray,
    lam: float,
    cfg: SmoothingConfig,
) -> tuple[np.ndarray, int, bool, float]:
    """Minimize the epsilon-smoothed objective over basis coefficients."""
    eps = cfg.epsilon
    y0 = np.where(w > 0, y, 0.0)
    nb = basis.shape[1]
    # quadratic warm start
    m0 = basis.T @ (w[:, None] * basis) + lam * (d2op_b.T @ d2op_b)
    ridge = 1e-10 * (np.trace(m0) / nb + 1e-300)
    theta = np.linalg.solve(m0 + ridge * np.eye(nb), basis.T @ (w * y0))
    prev = np.inf
    fitted = basis @ theta
    it = 0
    converged = False
    for it in range(1, cfg.max_iter + 1):
        u = np.where(w > 0, y0 - fitted, 0.0)
        su = np.sqrt(u * u + eps * eps)
        d2 = d2op_b @ theta
        sd = np.sqrt(d2 * d2 + eps * eps)
        a = w / su
        c = lam / sd
        m = basis.T @ (a[:, None] * basis) + d2op_b.T @ (c[:, None] * d2op_b)
        ridge = 1e-10 * (np.trace(m) / nb + 1e-300)
        theta = np.linalg.solve(m + ridge * np.eye(nb), basis.T @ (a * y0))
        fitted = basis @ theta
        obj = smoothing_objective(grid, y0, w, fitted, lam, eps)
        # majorize-minimize: the smoothed objective must not increase
        assert obj <= prev + 1e-8 * (1.0 + abs(prev)), "IRLS objective increased"
        if prev - obj <= cfg.tol * (1.0 + abs(obj)):
            converged = True
            prev = obj
            break
        prev = obj
    return fitted, it, converged, float(prev)


def _resolve_lambda(
    basis: np.ndarray,
    d2op_b: np.ndarray,
    grid: AgeGrid,
    y: np.ndarray,
    w: np.ndarray,
    cfg: SmoothingConfig,
) -> float:
    """Five-fold CV over the lambda grid with age-index stripe folds."""
    p = len(y)
    best_lam = None
    best_score = np.inf
    for lam in cfg.lambda_grid:
        score = 0.0
        for fold in range(cfg.cv_folds):
            held = np.arange(p) % cfg.cv_folds == fold
            if not np.any(held) or not np.any(w[~held] > 0):
                continue
            w_fit = np.where(held, 0.0, w)
            fitted, _, _, _ = _irls(basis, d2op_b, grid, y, w_fit, lam, cfg)
            resid = np.where(w > 0, y - fitted, 0.0)[held]
            score += float(np.sum(w[held] * np.abs(resid)))
        if score < best_score:
            best_score = score
            best_lam = lam
    if best_lam is None:
        raise ValidationError("cross-validation has no usable folds")
    return float(best_lam)


def smooth_curve(
    grid: AgeGrid,
    y: np.ndarray,
    weights: np.ndarray,
    config: SmoothingConfig = SmoothingConfig(),
) -> SmoothResult:
    """Smooth one curve of weighted observations on the age grid.

    Weight-0 cells are treated as missing and imputed by the fit. The fitted
    values are exactly non-decreasing above `config.monotone_from_age`.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    p = len(grid)
    if y.shape != (p,) or w.shape != (p,):
        raise ShapeMismatch(f"y and weights must have shape ({p},)")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValidationError("at least one observation weight must be positive")
    if np.any(~np.isfinite(y[w > 0])):
        raise ValidationError("observations with positive weight must be finite")

    basis = spline_basis(grid, config.basis_knots)
    d2op_b = second_difference_operator(grid) @ basis
    if config.lam == AUTO:
        lam = _resolve_lambda(basis, d2op_b, grid, y, w, config)
    else:
        lam = float(config.lam)
    fitted, iters, converged, obj = _irls(basis, d2op_b, grid, y, w, lam, config)
    if not converged:
        logger.warning("smoother hit the iteration cap (%d)", config.max_iter)

    tail = grid.array >= config.monotone_from_age
    if np.sum(tail) >= 2:
        fitted = fitted.copy()
        fitted[tail] = pava_nondecreasing(fitted[tail])
        obj = smoothing_objective(grid, np.where(w > 0, y, 0.0), w, fitted, lam, config.epsilon)
    return SmoothResult(values=fitted, lam=lam, iterations=iters, converged=converged, objective=obj)


def smooth_series(
    grid: AgeGrid,
    years: Sequence[int],
    deaths: np.ndarray,
    exposure: np.ndarray,
    config: SmoothingConfig = SmoothingConfig(),
) -> tuple[FunctionalSeries, list[SmoothResult]]:
    """Smooth every year of one series; returns log-rate curves."""
    d = np.asarray(deaths, dtype=float)
    e = np.asarray(exposure, dtype=float)
    w = poisson_weights(d, e)
    y = log_observations(d, e)
    results = [smooth_curve(grid, y[t], w[t], config) for t in range(d.shape[0])]
    values = np.vstack([r.values for r in results])
    return FunctionalSeries(grid, tuple(years), values, LOG_RATE), results


def smooth_dataset(
    dataset: GroupedDataset,
    config: SmoothingConfig = SmoothingConfig(),
    keys: Iterable[SeriesKey] | None = None,
    threads: int = 1,
) -> dict[SeriesKey, FunctionalSeries]:
    """Smooth observed log-rates of every requested series (all by default).

    Aggregate series are smoothed from their summed deaths and exposures, so
    the Poisson weights are the aggregate death counts. Results are keyed in
    canonical scheme order regardless of thread scheduling.
    """
    key_list = list(keys) if keys is not None else dataset.all_keys()

    def task(key: SeriesKey) -> tuple[SeriesKey, FunctionalSeries]:
        d, e = dataset.counts(key)
        series, results = smooth_series(dataset.grid, dataset.years, d, e, config)
        bad = sum(1 for r in results if not r.converged)
        if bad:
            logger.warning("series %s: %d curve fits did not converge", key, bad)
        return key, series

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = dict(pool.map(task, key_list))
    else:
        done = dict(map(task, key_list))
    return {k: done[k] for k in key_list}
