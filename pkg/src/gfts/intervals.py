"""Bootstrap prediction intervals from in-sample curve forecast errors.

Pipeline: walk prefixes of the score history to collect h-step in-sample
forecast error curves, bootstrap whole curves to get per-age lower/upper
bounds, then bisect a single scale factor until the banded region covers the
required share of the error sample. Uniform bands count a curve as covered
only when it lies inside at every age; pointwise bands pool (curve, age)
cells.

All curve arithmetic happens on the log-rate scale. Replicate-level
reconciliation converts to rates, applies the summing-matrix map replicate by
replicate, and re-extracts intervals from the reconciled replicates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import SeriesKey
from .errors import (
    InvalidInterval,
    SampleTooSmall,
    Unattainable,
    ValidationError,
)
from .fpca import FpcModel, ScoreForecaster, forecast_curves
from .reconcile import WLS, BaseForecasts, SummingMatrix, bottom_up, optimal_combination

UNIFORM = "uniform"
POINTWISE = "pointwise"

DEFAULT_ALPHA = 0.2
DEFAULT_B = 1000
_PHI_MAX = 100.0
_PHI_TOL = 1e-4
_RATE_FLOOR = 1e-300


@dataclass(frozen=True)
class IntervalForecast:
    """Lower/upper log-rate curves at one horizon with the fitted tuning.

    `tuning` is a scalar for uniform bands and a per-age vector for pointwise
    bands (the fitted value is shared, so the vector is constant).
    """

    horizon: int
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    kind: str
    tuning: float | np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ValidationError("lower and upper must share a grid")
        if np.any(lower > upper):
            raise InvalidInterval("lower bound exceeds upper bound")
        if self.kind not in (UNIFORM, POINTWISE):
            raise ValidationError(f"kind must be {UNIFORM!r} or {POINTWISE!r}")
        if np.any(np.asarray(self.tuning) <= 0.0):
            raise ValidationError("tuning must be positive")
        lower = lower.copy(); lower.setflags(write=False)
        upper = upper.copy(); upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def insample_errors(model: FpcModel, forecaster: ScoreForecaster, h: int) -> np.ndarray:
    """h-step in-sample forecast error curves, one row per forecast origin.

    For each prefix of length L = K..n-h, the score columns are re-forecast
    from the prefix alone and the reconstructed curve is subtracted from the
    actual (smoothed) curve at position L+h. The model itself (mean,
    eigenfunctions) is not refit.
    """
    if h < 1:
        raise ValidationError("h must be >= 1")
    n = model.n_curves
    k = model.n_components
    m = n - h - k + 1
    if m < 5:
        raise SampleTooSmall(
            f"need n - h - K + 1 >= 5 in-sample errors, got {m} "
            f"(n={n}, h={h}, K={k})"
        )
    actual = model.reconstruct()
    errors = np.empty((m, len(model.grid)))
    for row, length in enumerate(range(k, n - h + 1)):
        score_fc = np.empty(k)
        for j in range(k):
            means, _ = forecaster(model.scores[:length, j], h)
            score_fc[j] = means[h - 1]
        predicted = model.mean + score_fc @ model.eigenfunctions
        errors[row] = actual[length + h - 1] - predicted
    return errors


def insample_error_stack(
    model: FpcModel,
    forecaster: ScoreForecaster,
    h_max: int,
) -> dict[int, np.ndarray]:
    """In-sample error matrices for every horizon 1..h_max in one sweep.

    Row sets and ordering match insample_errors(model, forecaster, h) exactly;
    the saving is that each prefix's score forecast is computed once for all
    horizons instead of once per horizon. Horizons whose error count would be
    empty are omitted; minimum-count checks are left to the caller.
    """
    if h_max < 1:
        raise ValidationError("h_max must be >= 1")
    n = model.n_curves
    k = model.n_components
    actual = model.reconstruct()
    rows: dict[int, list[np.ndarray]] = {h: [] for h in range(1, h_max + 1)}
    for length in range(k, n):
        reach = min(h_max, n - length)
        score_fc = np.empty((reach, k))
        for j in range(k):
            means, _ = forecaster(model.scores[:length, j], reach)
            score_fc[:, j] = np.asarray(means, dtype=float).ravel()
        predicted = model.mean + score_fc @ model.eigenfunctions
        for h in range(1, reach + 1):
            rows[h].append(actual[length + h - 1] - predicted[h - 1])
    return {h: np.vstack(r) for h, r in rows.items() if r}


def bootstrap_bounds(
    errors: np.ndarray,
    b: int,
    rng_seed: int | np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-age 2.5/97.5 percentile bounds of a whole-curve bootstrap resample.

    Rows are resampled with replacement so cross-age dependence survives.
    Bounds are clamped to straddle zero, which keeps band coverage monotone
    in the scale factor that tuning fits afterwards.
    """
    errors = np.asarray(errors, dtype=float)
    if errors.ndim != 2:
        raise ValidationError("errors must be an M x p matrix")
    m = errors.shape[0]
    if m < 5:
        raise SampleTooSmall(f"need at least 5 error rows, got {m}")
    if b < 100:
        raise ValidationError(f"need at least 100 replicates, got {b}")
    rng = np.random.default_rng(rng_seed)
    rows = rng.integers(0, m, size=b)
    sample = errors[rows]
    lower = np.percentile(sample, 2.5, axis=0)
    upper = np.percentile(sample, 97.5, axis=0)
    return np.minimum(lower, 0.0), np.maximum(upper, 0.0)


def _coverage_uniform(errors, gl, gu, phi):
    inside = (errors >= phi * gl) & (errors <= phi * gu)
    return float(np.mean(np.all(inside, axis=1)))


def _coverage_pointwise(errors, gl, gu, phi):
    inside = (errors >= phi * gl) & (errors <= phi * gu)
    return float(np.mean(inside))


def _tune(errors, gl, gu, alpha, coverage) -> float:
    errors = np.asarray(errors, dtype=float)
    gl = np.asarray(gl, dtype=float)
    gu = np.asarray(gu, dtype=float)
    if np.any(gl > 0.0) or np.any(gu < 0.0):
        raise ValidationError("bounds must straddle zero (see bootstrap_bounds)")
    target = 1.0 - alpha
    cov_hi = coverage(errors, gl, gu, _PHI_MAX)
    if cov_hi < target:
        raise Unattainable(
            f"coverage {cov_hi:.3f} < {target:.3f} even at scale {_PHI_MAX}"
        )
    lo, hi = 0.0, _PHI_MAX
    cov_lo = coverage(errors, gl, gu, lo)
    while hi - lo > _PHI_TOL:
        mid = 0.5 * (lo + hi)
        cov_mid = coverage(errors, gl, gu, mid)
        # claimed monotonicity of coverage in the scale; guaranteed by the
        # zero-straddling bounds
        assert cov_lo - 1e-12 <= cov_mid <= cov_hi + 1e-12
        if cov_mid >= target:
            hi, cov_hi = mid, cov_mid
        else:
            lo, cov_lo = mid, cov_mid
    return hi


def tune_uniform(errors, gl, gu, alpha: float = DEFAULT_ALPHA) -> float:
    """Smallest scale whose band contains >= (1 - alpha) of error curves whole."""
    return _tune(errors, gl, gu, alpha, _coverage_uniform)


def tune_pointwise(errors, gl, gu, alpha: float = DEFAULT_ALPHA) -> float:
    """Smallest scale covering >= (1 - alpha) of (curve, age) cells.

    A single scalar is fitted and shared across ages.
    """
    return _tune(errors, gl, gu, alpha, _coverage_pointwise)


def forecast_intervals(
    model: FpcModel,
    forecaster: ScoreForecaster,
    h: int,
    alpha: float = DEFAULT_ALPHA,
    kind: str = POINTWISE,
    b: int = DEFAULT_B,
    seed: int | np.random.SeedSequence = 0,
) -> IntervalForecast:
    """Point forecast plus tuned bootstrap band at horizon h."""
    if kind not in (UNIFORM, POINTWISE):
        raise ValidationError(f"kind must be {UNIFORM!r} or {POINTWISE!r}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must be in (0, 1)")
    curves, _ = forecast_curves(model, forecaster, h)
    point = curves[h - 1]
    errors = insample_errors(model, forecaster, h)
    gl, gu = bootstrap_bounds(errors, b, seed)
    if kind == UNIFORM:
        phi = tune_uniform(errors, gl, gu, alpha)
        tuning: float | np.ndarray = phi
    else:
        phi = tune_pointwise(errors, gl, gu, alpha)
        tuning = np.full(len(model.grid), phi)
    return IntervalForecast(
        horizon=h,
        lower=point + phi * gl,
        upper=point + phi * gu,
        alpha=alpha,
        kind=kind,
        tuning=tuning,
    )


def draw_shared_replicates(
    points: Mapping[SeriesKey, np.ndarray],
    errors: Mapping[SeriesKey, np.ndarray],
    b: int,
    seed: int | np.random.SeedSequence,
) -> dict[SeriesKey, np.ndarray]:
    """B bootstrapped forecast curves per series with coupled row draws.

    One uniform draw per replicate indexes every series' error sample, so the
    same historical origin is picked across series and the summing-matrix map
    stays meaningful replicate by replicate.
    """
    if b < 100:
        raise ValidationError(f"need at least 100 replicates, got {b}")
    if set(points) != set(errors):
        raise ValidationError("points and errors must cover the same series")
    rng = np.random.default_rng(seed)
    u = rng.random(b)
    out = {}
    for key in points:
        err = np.asarray(errors[key], dtype=float)
        m = err.shape[0]
        if m < 5:
            raise SampleTooSmall(f"series {key}: need >= 5 error rows, got {m}")
        rows = np.minimum((u * m).astype(int), m - 1)
        out[key] = np.asarray(points[key], dtype=float) + err[rows]
    return out


def reconcile_interval_replicates(
    points: Mapping[SeriesKey, np.ndarray],
    replicates: Mapping[SeriesKey, np.ndarray],
    matrices: Sequence[SummingMatrix],
    method: str,
    alpha: float = DEFAULT_ALPHA,
    kind: str = POINTWISE,
    horizon: int = 1,
    variances: Mapping[SeriesKey, float] | None = None,
    weighting: str = WLS,
) -> dict[SeriesKey, IntervalForecast]:
    """Reconcile bootstrapped forecast curves and re-extract intervals.

    Points and replicates are log-rate curves; the reconciliation map runs on
    the rate scale for each replicate separately (and for the point curves),
    after which per-series bands are tuned on the reconciled replicate
    deviations exactly as in the unreconciled path. For bottom-up, `points`
    and `replicates` cover the bottom keys only; for optimal combination they
    cover every key.
    """
    some = next(iter(replicates.values()))
    b = np.asarray(some).shape[0]
    p = len(matrices)

    def reconcile_rates(curves: Mapping[SeriesKey, np.ndarray]) -> dict[SeriesKey, np.ndarray]:
        rates = {k: np.exp(np.asarray(v, dtype=float)) for k, v in curves.items()}
        base = BaseForecasts(horizon, rates, variances)
        per_age = []
        for s in matrices:
            if method == "bottom_up":
                per_age.append(bottom_up(base, s))
            elif method == "optimal_combination":
                per_age.append(optimal_combination(base, s, weighting))
            else:
                raise ValidationError(f"unknown reconciliation method {method!r}")
        keys = matrices[0].row_keys
        return {
            k: np.log(np.maximum([per_age[z][k] for z in range(p)], _RATE_FLOOR))
            for k in keys
        }

    rec_points = reconcile_rates(points)
    rec_reps: dict[SeriesKey, np.ndarray] = {
        k: np.empty((b, p)) for k in matrices[0].row_keys
    }
    for i in range(b):
        rec = reconcile_rates({k: np.asarray(v)[i] for k, v in replicates.items()})
        for k, v in rec.items():
            rec_reps[k][i] = v

    out = {}
    for k, point in rec_points.items():
        devs = rec_reps[k] - point
        gl, gu = _replicate_bounds(devs)
        tune = tune_uniform if kind == UNIFORM else tune_pointwise
        phi = tune(devs, gl, gu, alpha)
        tuning: float | np.ndarray = phi if kind == UNIFORM else np.full(p, phi)
        out[k] = IntervalForecast(
            horizon=horizon,
            lower=point + phi * gl,
            upper=point + phi * gu,
            alpha=alpha,
            kind=kind,
            tuning=tuning,
        )
    return out


def _replicate_bounds(devs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Percentile bounds of already-bootstrapped deviations (no resampling)."""
    lower = np.percentile(devs, 2.5, axis=0)
    upper = np.percentile(devs, 97.5, axis=0)
    return np.minimum(lower, 0.0), np.maximum(upper, 0.0)
