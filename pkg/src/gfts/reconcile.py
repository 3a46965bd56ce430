"""Exposure-ratio summing matrices and forecast reconciliation.

A summing matrix maps bottom-level rates to every series in the scheme at one
(year, age) cell: row g has entry E_b / E_g for each bottom member b of g, so
aggregate rates are exposure-weighted means of member rates. Reconciliation
therefore operates on the rate scale; log-rate forecasts must be exponentiated
first (the callers do this) and re-logged afterwards.

Two reconciliation methods are provided: bottom-up (aggregate the bottom base
forecasts through S) and optimal combination (project all base forecasts onto
the column space of S by ordinary or variance-weighted least squares).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .arima import auto_arima, forecast
from .domain import GroupedDataset, SeriesKey, members
from .errors import (
    KeyMismatch,
    NonPositiveVariance,
    SeriesTooShort,
    ShapeMismatch,
    SingularSystem,
    ValidationError,
    ZeroExposure,
)

OLS = "OLS"
WLS = "WLS"

_ROW_SUM_TOL = 1e-10


@dataclass(frozen=True)
class SummingMatrix:
    """Exposure-share matrix for one (year, age) cell.

    Rows follow the canonical all-levels key order, columns the bottom key
    order. Bottom rows are exact unit rows (the identity block); every other
    row holds the members' exposure shares, which sum to 1.
    """

    row_keys: tuple[SeriesKey, ...]
    col_keys: tuple[SeriesKey, ...]
    entries: np.ndarray
    year: int
    age_index: int
    age: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        rows, cols = len(self.row_keys), len(self.col_keys)
        if entries.shape != (rows, cols):
            raise ShapeMismatch(
                f"entries shape {entries.shape}, keys imply ({rows}, {cols})"
            )
        if np.any(entries < 0.0) or np.any(entries > 1.0):
            raise ValidationError("summing matrix entries must lie in [0, 1]")
        nonzero_rows = entries.sum(axis=1)
        if np.any(np.abs(nonzero_rows - 1.0) > _ROW_SUM_TOL):
            worst = float(np.max(np.abs(nonzero_rows - 1.0)))
            raise ValidationError(f"row sums deviate from 1 by {worst:.2e}")
        entries = entries.copy()
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "row_keys", tuple(self.row_keys))
        object.__setattr__(self, "col_keys", tuple(self.col_keys))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def row_index(self, key: SeriesKey) -> int:
        try:
            return self.row_keys.index(key)
        except ValueError:
            raise KeyMismatch(f"{key} is not a row of this summing matrix") from None


@dataclass(frozen=True)
class BaseForecasts:
    """Per-key forecast curves (rate scale) at one horizon.

    `variances` carries each series' one-step in-sample curve-error variance,
    used as the WLS weight; it may be omitted for bottom-up or OLS use.
    """

    horizon: int
    values: Mapping[SeriesKey, np.ndarray]
    variances: Mapping[SeriesKey, float] | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        vals = {}
        width = None
        for k, v in dict(self.values).items():
            arr = np.asarray(v, dtype=float).ravel()
            if width is None:
                width = arr.size
            elif arr.size != width:
                raise ShapeMismatch("all forecast curves must share one age grid")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite forecast for {k}")
            arr = arr.copy()
            arr.setflags(write=False)
            vals[k] = arr
        if not vals:
            raise ValidationError("base forecasts are empty")
        if self.variances is not None:
            var = {k: float(v) for k, v in dict(self.variances).items()}
            if set(var) != set(vals):
                raise KeyMismatch("variance keys differ from forecast keys")
            object.__setattr__(self, "variances", var)
        object.__setattr__(self, "values", vals)

    def keys(self) -> set[SeriesKey]:
        return set(self.values)


def build_summing_matrix(dataset: GroupedDataset, t: int, z: int) -> SummingMatrix:
    """Observed exposure-share matrix at year index t, age index z."""
    n, p = dataset.n_years, len(dataset.grid)
    if not 0 <= t < n:
        raise ValidationError(f"year index {t} outside 0..{n - 1}")
    if not 0 <= z < p:
        raise ValidationError(f"age index {z} outside 0..{p - 1}")
    row_keys = tuple(dataset.all_keys())
    col_keys = tuple(dataset.bottom_keys())
    col_pos = {k: j for j, k in enumerate(col_keys)}
    exp_bottom = np.array([dataset.exposure[k][t, z] for k in col_keys])
    entries = np.zeros((len(row_keys), len(col_keys)))
    for i, g in enumerate(row_keys):
        if g in col_pos:
            entries[i, col_pos[g]] = 1.0
            continue
        ms = members(dataset.scheme, g)
        idx = [col_pos[b] for b in ms]
        total = float(exp_bottom[idx].sum())
        if total <= 0.0:
            raise ZeroExposure(f"aggregate exposure of {g} vanishes at (t={t}, z={z})")
        entries[i, idx] = exp_bottom[idx] / total
    return SummingMatrix(
        row_keys=row_keys,
        col_keys=col_keys,
        entries=entries,
        year=dataset.years[t],
        age_index=z,
        age=dataset.grid.points[z],
    )


def _ratio_paths(dataset: GroupedDataset, z: int):
    """Historical exposure-share series for every aggregate row at age z.

    Yields (row_index, member column indices, n x m ratio matrix).
    """
    row_keys = dataset.all_keys()
    col_keys = dataset.bottom_keys()
    col_pos = {k: j for j, k in enumerate(col_keys)}
    exp = np.stack([dataset.exposure[k][:, z] for k in col_keys], axis=1)
    for i, g in enumerate(row_keys):
        if g in col_pos:
            continue
        idx = [col_pos[b] for b in members(dataset.scheme, g)]
        block = exp[:, idx]
        totals = block.sum(axis=1)
        if np.any(totals <= 0.0):
            raise ZeroExposure(f"aggregate exposure of {g} vanishes at age index {z}")
        yield i, idx, block / totals[:, None]


def forecast_summing_matrices(
    dataset: GroupedDataset,
    h_max: int,
    threads: int = 1,
) -> list[list[SummingMatrix]]:
    """Forecast exposure-share matrices for horizons 1..h_max at every age.

    Each nonzero ratio series is forecast independently (auto ARIMA), clamped
    to [0, 1], and each row is renormalized to sum to 1; identity rows stay
    untouched. Returns matrices[h - 1][z]. ARIMA fits are shared across
    horizons, so requesting h_max costs the same number of fits as h = 1.
    """
    if h_max < 1:
        raise ValidationError("h_max must be >= 1")
    n, p = dataset.n_years, len(dataset.grid)
    if n < 10:
        raise SeriesTooShort(f"ratio forecasting needs >= 10 years, got {n}")
    row_keys = tuple(dataset.all_keys())
    col_keys = tuple(dataset.bottom_keys())
    col_pos = {k: j for j, k in enumerate(col_keys)}
    identity_rows = [(i, col_pos[g]) for i, g in enumerate(row_keys) if g in col_pos]

    def one_age(z: int) -> list[np.ndarray]:
        mats = [np.zeros((len(row_keys), len(col_keys))) for _ in range(h_max)]
        for h in range(h_max):
            for i, j in identity_rows:
                mats[h][i, j] = 1.0
        for i, idx, ratios in _ratio_paths(dataset, z):
            fc = np.empty((h_max, len(idx)))
            for c in range(len(idx)):
                series = ratios[:, c]
                model = auto_arima(series)
                means, _ = forecast(model, series, h_max)
                fc[:, c] = np.clip(means, 0.0, 1.0)
            sums = fc.sum(axis=1)
            for h in range(h_max):
                if sums[h] > 0.0:
                    mats[h][i, idx] = fc[h] / sums[h]
                else:
                    # every member clamped to zero: keep the last observed shares
                    mats[h][i, idx] = ratios[-1]
        return mats

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_age = list(pool.map(one_age, range(p)))
    else:
        per_age = [one_age(z) for z in range(p)]

    last_year = dataset.years[-1]
    out = []
    for h in range(1, h_max + 1):
        row = []
        for z in range(p):
            row.append(SummingMatrix(
                row_keys=row_keys,
                col_keys=col_keys,
                entries=per_age[z][h - 1],
                year=last_year + h,
                age_index=z,
                age=dataset.grid.points[z],
            ))
        out.append(row)
    return out


def forecast_summing_matrix(dataset: GroupedDataset, h: int) -> list[SummingMatrix]:
    """Forecast matrices at horizon h only, one per age."""
    return forecast_summing_matrices(dataset, h)[h - 1]


def _vector_for(base: BaseForecasts, keys: tuple[SeriesKey, ...], z: int) -> np.ndarray:
    if base.keys() != set(keys):
        missing = set(keys) - base.keys()
        extra = base.keys() - set(keys)
        raise KeyMismatch(
            f"base forecasts do not match the matrix keys "
            f"(missing={sorted(map(str, missing))[:3]}, extra={sorted(map(str, extra))[:3]})"
        )
    return np.array([base.values[k][z] for k in keys])


def bottom_up(base_bottom: BaseForecasts, s: SummingMatrix) -> dict[SeriesKey, float]:
    """Aggregate bottom base forecasts through S at this matrix's age.

    Bottom entries of the result equal the base forecasts exactly (identity
    rows multiply by exact ones and zeros).
    """
    b = _vector_for(base_bottom, s.col_keys, s.age_index)
    rec = s.entries @ b
    return {k: float(v) for k, v in zip(s.row_keys, rec)}


def optimal_combination(
    base_all: BaseForecasts,
    s: SummingMatrix,
    weighting: str = WLS,
) -> dict[SeriesKey, float]:
    """Project all base forecasts onto the column space of S.

    WLS weights rows by inverse one-step error variance; OLS weights equally.
    Solved by a least-squares factorization, never an explicit inverse.
    """
    if weighting not in (OLS, WLS):
        raise ValidationError(f"weighting must be {OLS!r} or {WLS!r}")
    r = _vector_for(base_all, s.row_keys, s.age_index)
    if weighting == WLS:
        if base_all.variances is None:
            raise NonPositiveVariance("WLS needs per-series variances")
        w = np.array([base_all.variances[k] for k in s.row_keys])
        if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
            raise NonPositiveVariance("WLS variances must be finite and > 0")
        scale = 1.0 / np.sqrt(w)
    else:
        scale = np.ones(len(s.row_keys))
    a = s.entries * scale[:, None]
    beta, _, rank, _ = np.linalg.lstsq(a, r * scale, rcond=None)
    if rank < len(s.col_keys):
        raise SingularSystem(
            f"summing matrix rank {rank} < {len(s.col_keys)} bottom series"
        )
    rec = s.entries @ beta
    return {k: float(v) for k, v in zip(s.row_keys, rec)}


def reconcile_curves(
    base: BaseForecasts,
    matrices: Sequence[SummingMatrix],
    method: str,
    weighting: str = WLS,
) -> dict[SeriesKey, np.ndarray]:
    """Apply one reconciliation method age by age, assembling curves.

    `matrices` must hold one matrix per age index, in age order.
    """
    if method == "bottom_up":
        per_age = [bottom_up(base, s) for s in matrices]
    elif method == "optimal_combination":
        per_age = [optimal_combination(base, s, weighting) for s in matrices]
    else:
        raise ValidationError(f"unknown reconciliation method {method!r}")
    keys = matrices[0].row_keys
    return {k: np.array([per_age[z][k] for z in range(len(matrices))]) for k in keys}
