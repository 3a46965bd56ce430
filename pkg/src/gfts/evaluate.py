"""Expanding-window backtesting, forecast scoring, and report serialization.

One backtest window works like this: smooth every series, fit a principal
component model per series on the training span, forecast the component
scores, and map them back to curves. The independent method stops there;
bottom-up and optimal combination push the curves through forecast
exposure-share matrices; the functional-median baseline ignores the model and
repeats the deepest training curve. Forecasts are scored against the smoothed
holdout curves on the log-rate scale (a flag switches to raw rates), each
level averaging its series' scores with equal weight.

Smoothing runs once on the full panel rather than per window: each year is
smoothed independently, so for a fixed penalty the training-window restriction
of the full smooth and a fresh smooth of the training window agree. Under
automatic penalty selection the resolved penalty is simply held fixed across
windows.
"""
from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .arima import auto_arima, forecast as arima_forecast, insample_innovations
from .depth import fm_depth
from .domain import LOG_RATE, RATE, GroupedDataset, SeriesKey, level_label
from .errors import (
    InvalidInterval,
    SampleTooSmall,
    ShapeMismatch,
    ValidationError,
)
from .fpca import FpcModel, fit_fpca, naive_score_forecaster, default_score_forecaster
from .intervals import (
    DEFAULT_B,
    POINTWISE,
    UNIFORM,
    IntervalForecast,
    bootstrap_bounds,
    draw_shared_replicates,
    insample_error_stack,
    reconcile_interval_replicates,
    tune_pointwise,
    tune_uniform,
)
from .reconcile import (
    WLS,
    BaseForecasts,
    SummingMatrix,
    forecast_summing_matrices,
    reconcile_curves,
)
from .smoothing import SmoothingConfig, smooth_dataset

INDEPENDENT = "independent"
BOTTOM_UP = "bottom_up"
OPTIMAL_COMBINATION = "optimal_combination"
FMEDIAN = "fmedian"
METHODS = (INDEPENDENT, BOTTOM_UP, OPTIMAL_COMBINATION, FMEDIAN)

MEAN = "Mean"
MEDIAN = "Median"
RANKED = "ranked"
HORIZON_INDEXED = "horizon"

REPORT_MULTIPLIER = 100.0
_RATE_FLOOR = 1e-300
_W_FLOOR = 1e-12
_MIN_TRAIN_YEARS = 15


# -- scoring primitives ----------------------------------------------------

def _check_pair(actual, forecast, h: int, h_max: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if a.shape != f.shape:
        raise ShapeMismatch(f"actual {a.shape} vs forecast {f.shape}")
    if a.ndim != 2:
        raise ShapeMismatch("curves must form an (origins, ages) matrix")
    if not 1 <= h <= h_max:
        raise ValidationError(f"h must lie in 1..{h_max}")
    expect = h_max + 1 - h
    if a.shape[0] != expect:
        raise ShapeMismatch(
            f"horizon {h} of {h_max} needs {expect} forecast origins, "
            f"got {a.shape[0]}"
        )
    return a, f


def mafe(actual, forecast, h: int, h_max: int = 10) -> float:
    """Mean absolute error pooled over every age and forecast origin at h."""
    a, f = _check_pair(actual, forecast, h, h_max)
    return float(np.mean(np.abs(a - f)))


def rmsfe(actual, forecast, h: int, h_max: int = 10) -> float:
    """Root mean squared error pooled over every age and origin at h."""
    a, f = _check_pair(actual, forecast, h, h_max)
    return float(np.sqrt(np.mean((a - f) ** 2)))


def interval_score(lower, upper, actual, alpha: float):
    """Band width plus (2 / alpha)-scaled exceedance outside it, elementwise."""
    lo = np.asarray(lower, dtype=float)
    up = np.asarray(upper, dtype=float)
    x = np.asarray(actual, dtype=float)
    if np.any(lo > up):
        raise InvalidInterval("lower bound exceeds upper bound")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must be in (0, 1)")
    score = (up - lo) \
        + (2.0 / alpha) * (lo - x) * (x < lo) \
        + (2.0 / alpha) * (x - up) * (x > up)
    return score if score.ndim else float(score)


def mean_interval_score(
    intervals: Sequence[IntervalForecast],
    actuals,
    h: int,
    alpha: float,
    h_max: int = 10,
) -> float:
    """Average interval score over ages and origins at horizon h."""
    a = np.asarray(actuals, dtype=float)
    if len(intervals) != a.shape[0]:
        raise ShapeMismatch(f"{len(intervals)} intervals vs {a.shape[0]} actual curves")
    lower = np.vstack([iv.lower for iv in intervals])
    upper = np.vstack([iv.upper for iv in intervals])
    a, lower = _check_pair(a, lower, h, h_max)
    return float(np.mean(interval_score(lower, upper, a, alpha)))


def summarize(values, stat: str, convention: str = RANKED) -> float:
    """Collapse per-horizon values to one number.

    Mean is the arithmetic mean. Median ranks the values and averages the two
    middle ones when the count is even (for 10 horizons, the 5th and 6th
    smallest). The horizon-indexed convention instead averages the values at
    the two middle horizons without sorting.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValidationError("no values to summarize")
    if stat == MEAN:
        return float(np.mean(v))
    if stat != MEDIAN:
        raise ValidationError(f"stat must be {MEAN!r} or {MEDIAN!r}")
    if convention == RANKED:
        return float(np.median(v))
    if convention == HORIZON_INDEXED:
        mid = v.size // 2
        if v.size % 2:
            return float(v[mid])
        return float(0.5 * (v[mid - 1] + v[mid]))
    raise ValidationError(
        f"convention must be {RANKED!r} or {HORIZON_INDEXED!r}"
    )


# -- plan and report --------------------------------------------------------

@dataclass(frozen=True)
class BacktestPlan:
    """Window layout and method selection for one backtest.

    Training always starts at `train_start`; the training end expands one
    year at a time from `train_end_initial` up to `data_end` - 1. Horizon h
    therefore receives data_end - train_end_initial - h + 1 forecasts, a
    triangle ending in a single forecast at the longest horizon when
    data_end - train_end_initial equals h_max.
    """

    train_start: int
    train_end_initial: int
    data_end: int
    h_max: int = 10
    methods: tuple[str, ...] = METHODS
    alpha: float = 0.2

    def __post_init__(self):
        if self.h_max < 1:
            raise ValidationError("h_max must be >= 1")
        if not self.train_start <= self.train_end_initial < self.data_end:
            raise ValidationError(
                "need train_start <= train_end_initial < data_end"
            )
        if self.h_max > self.data_end - self.train_end_initial:
            raise ValidationError(
                f"h_max {self.h_max} exceeds the holdout span "
                f"{self.data_end - self.train_end_initial}"
            )
        methods = tuple(self.methods)
        if not methods or set(methods) - set(METHODS):
            raise ValidationError(f"methods must be a nonempty subset of {METHODS}")
        if len(set(methods)) != len(methods):
            raise ValidationError("methods must not repeat")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must be in (0, 1)")
        object.__setattr__(self, "methods", methods)

    def windows(self) -> list[tuple[int, int]]:
        """(train end year, reach) pairs; reach = horizons forecastable."""
        return [
            (t, min(self.h_max, self.data_end - t))
            for t in range(self.train_end_initial, self.data_end)
        ]

    def origins_at(self, h: int) -> int:
        """How many windows produce a horizon-h forecast."""
        return sum(1 for _, reach in self.windows() if reach >= h)


@dataclass(frozen=True)
class BacktestReport:
    """Per-(method, level) horizon score arrays plus their summaries.

    Scores are stored at natural scale; the serializers multiply by
    `multiplier` for the conventional per-100 presentation. Interval score
    entries are NaN where no intervals were produced (the functional-median
    baseline, or interval computation turned off).
    """

    methods: tuple[str, ...]
    levels: tuple[str, ...]
    h_max: int
    origins: tuple[int, ...]
    mafe: Mapping[tuple[str, str], np.ndarray]
    rmsfe: Mapping[tuple[str, str], np.ndarray]
    score: Mapping[tuple[str, str], np.ndarray]
    summaries: Mapping[tuple[str, str], Mapping[str, float]]
    seed: int
    config_hash: str
    score_scale: str = LOG_RATE
    median_convention: str = RANKED
    multiplier: float = REPORT_MULTIPLIER

    def table(self, metric: str) -> Mapping[tuple[str, str], np.ndarray]:
        tables = {"mafe": self.mafe, "rmsfe": self.rmsfe, "interval_score": self.score}
        try:
            return tables[metric]
        except KeyError:
            raise ValidationError(f"unknown metric {metric!r}") from None


def _config_hash(parts: Sequence[object]) -> str:
    text = "\x1f".join(repr(p) for p in parts)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- per-series forecasting -------------------------------------------------

def _score_column_forecast(col: np.ndarray, h: int) -> tuple[np.ndarray, float]:
    """Forecast one score column; returns (means, innovation mean square).

    Selection mirrors default_score_forecaster so point forecasts and the
    in-sample error stacks stay consistent; the model is fit once and reused
    for the in-sample innovations that feed the combination weight.
    """
    if col.size >= 10:
        model = auto_arima(col)
        means, _ = arima_forecast(model, col, h)
        v, _ = insample_innovations(model, col)
        msq = float(np.mean(v * v))
    else:
        means, _ = naive_score_forecaster(col, h)
        d = np.diff(col)
        msq = float(np.mean(d * d)) if d.size else 0.0
    return np.asarray(means, dtype=float), msq


def curve_forecasts_with_variance(model: FpcModel, h_max: int) -> tuple[np.ndarray, float]:
    """Log-rate curve forecasts for horizons 1..h_max plus a pooled one-step
    curve-error variance for use as the combination weight.

    The variance spreads each score's one-step innovation mean square over
    ages through the squared eigenfunctions, adds the residual variance, and
    averages over ages. Floored away from zero so a degenerate series cannot
    produce a non-invertible weight.
    """
    if h_max < 1:
        raise ValidationError("h_max must be >= 1")
    k = model.n_components
    score_fc = np.zeros((h_max, k))
    per_age = model.residuals.var(axis=0).astype(float)
    if not model.degenerate:
        for j in range(k):
            means, msq = _score_column_forecast(model.scores[:, j], h_max)
            score_fc[:, j] = means
            per_age = per_age + msq * model.eigenfunctions[j] ** 2
    curves = model.mean + score_fc @ model.eigenfunctions
    return curves, max(float(per_age.mean()), _W_FLOOR)


def _reconciled_log_curves(
    base_log: Mapping[SeriesKey, np.ndarray],
    w_var: Mapping[SeriesKey, float],
    mats: Sequence[SummingMatrix],
    h: int,
    method: str,
    weighting: str,
) -> dict[SeriesKey, np.ndarray]:
    """Reconciled log-rate curves at horizon h (mats = one matrix per age).

    Bottom-up keeps each bottom series' base log curve bit for bit and only
    recomputes aggregates; optimal combination replaces every series.
    """
    row = h - 1
    if method == BOTTOM_UP:
        rates = {k: np.exp(base_log[k][row]) for k in mats[0].col_keys}
        rec = reconcile_curves(BaseForecasts(h, rates), mats, "bottom_up")
        return {
            k: base_log[k][row] if k in rates
            else np.log(np.maximum(rec[k], _RATE_FLOOR))
            for k in mats[0].row_keys
        }
    rates = {k: np.exp(v[row]) for k, v in base_log.items()}
    base = BaseForecasts(h, rates, w_var if weighting == WLS else None)
    rec = reconcile_curves(base, mats, "optimal_combination", weighting)
    return {k: np.log(np.maximum(rec[k], _RATE_FLOOR)) for k in mats[0].row_keys}


# -- the backtest ------------------------------------------------------------

def run_backtest(
    dataset: GroupedDataset,
    plan: BacktestPlan,
    smoothing: SmoothingConfig | None = None,
    delta: float = 0.9,
    weighting: str = WLS,
    include_intervals: bool = True,
    interval_b: int = DEFAULT_B,
    interval_kind: str = POINTWISE,
    seed: int = 0,
    threads: int = 1,
    score_scale: str = LOG_RATE,
    median_convention: str = RANKED,
) -> BacktestReport:
    """Expanding-window backtest of the plan's methods over one dataset.

    Deterministic for a fixed seed regardless of `threads`: parallel work is
    partitioned per series or per age, and every random draw is keyed by
    window index, series position, and horizon, never by scheduling order.
    Errors raised inside a window are re-raised tagged with the window's
    train-end year.
    """
    if score_scale not in (LOG_RATE, RATE):
        raise ValidationError(f"score_scale must be {LOG_RATE!r} or {RATE!r}")
    if interval_kind not in (UNIFORM, POINTWISE):
        raise ValidationError(f"kind must be {UNIFORM!r} or {POINTWISE!r}")
    if seed < 0:
        raise ValidationError("seed must be >= 0")
    years = dataset.years
    if plan.train_start < years[0] or plan.data_end > years[-1]:
        raise ValidationError(
            f"plan years [{plan.train_start}, {plan.data_end}] outside data "
            f"years [{years[0]}, {years[-1]}]"
        )
    if plan.train_end_initial - plan.train_start + 1 < _MIN_TRAIN_YEARS:
        raise ValidationError(
            f"need at least {_MIN_TRAIN_YEARS} training years, got "
            f"{plan.train_end_initial - plan.train_start + 1}"
        )

    smoothing = SmoothingConfig() if smoothing is None else smoothing
    h_max = plan.h_max
    all_keys = tuple(dataset.all_keys())
    scheme = dataset.scheme
    level_of = {k: level_label(scheme.level_of(k)) for k in all_keys}
    levels = tuple(level_label(lv) for lv in scheme.levels)
    wanted = set(plan.methods)
    needs_recon = bool({BOTTOM_UP, OPTIMAL_COMBINATION} & wanted)
    needs_fpca = bool({INDEPENDENT, BOTTOM_UP, OPTIMAL_COMBINATION} & wanted)
    make_intervals = include_intervals and needs_fpca

    smoothed = smooth_dataset(dataset, smoothing, threads=threads)

    def actual_curve(key: SeriesKey, year: int) -> np.ndarray:
        c = smoothed[key].values[year - years[0]]
        return c if score_scale == LOG_RATE else np.exp(c)

    err: dict[tuple[str, SeriesKey], dict[int, list[np.ndarray]]] = {
        (m, k): {h: [] for h in range(1, h_max + 1)}
        for m in plan.methods for k in all_keys
    }
    iscore: dict[tuple[str, SeriesKey], dict[int, list[float]]] = {
        (m, k): {h: [] for h in range(1, h_max + 1)}
        for m in plan.methods for k in all_keys
    }

    def record(method: str, key: SeriesKey, h: int, year: int, fc_log: np.ndarray):
        fc = fc_log if score_scale == LOG_RATE else np.exp(fc_log)
        err[(method, key)][h].append(actual_curve(key, year) - fc)

    def record_interval(method: str, key: SeriesKey, h: int, year: int,
                        iv: IntervalForecast):
        lo, up = iv.lower, iv.upper
        if score_scale == RATE:
            lo, up = np.exp(lo), np.exp(up)
        iscore[(method, key)][h].append(
            float(np.mean(interval_score(lo, up, actual_curve(key, year), plan.alpha)))
        )

    tune = tune_uniform if interval_kind == UNIFORM else tune_pointwise
    p = len(dataset.grid)

    for w_idx, (train_end, reach) in enumerate(plan.windows()):
        try:
            _run_window(
                w_idx, train_end, reach, plan, dataset, smoothed, all_keys,
                delta, weighting, make_intervals, interval_b, interval_kind,
                seed, threads, tune, p, record, record_interval,
                needs_fpca, needs_recon, wanted,
            )
        except Exception as exc:
            raise type(exc)(f"window ending {train_end}: {exc}") from exc

    cfg_hash = _config_hash([
        plan, smoothing, delta, weighting, include_intervals, interval_b,
        interval_kind, seed, score_scale, median_convention,
    ])
    return _assemble_report(
        plan, all_keys, levels, level_of, err, iscore,
        seed, median_convention, score_scale, cfg_hash,
    )


def _run_window(
    w_idx, train_end, reach, plan, dataset, smoothed, all_keys,
    delta, weighting, make_intervals, interval_b, interval_kind,
    seed, threads, tune, p, record, record_interval,
    needs_fpca, needs_recon, wanted,
):
    train_start = plan.train_start

    base_log: dict[SeriesKey, np.ndarray] = {}
    w_var: dict[SeriesKey, float] = {}
    stacks: dict[SeriesKey, dict[int, np.ndarray]] = {}
    if needs_fpca:
        def fit_one(key: SeriesKey):
            try:
                series = smoothed[key].window(train_start, train_end)
                model = fit_fpca(series, delta)
                curves, wv = curve_forecasts_with_variance(model, reach)
                stack = None
                if make_intervals:
                    stack = insample_error_stack(model, default_score_forecaster, reach)
                return key, curves, wv, stack
            except Exception as exc:
                raise type(exc)(f"series {key}: {exc}") from exc

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                fitted = list(pool.map(fit_one, all_keys))
        else:
            fitted = [fit_one(k) for k in all_keys]
        for key, curves, wv, stack in fitted:
            base_log[key] = curves
            w_var[key] = wv
            if stack is not None:
                stacks[key] = stack

    matrices = None
    if needs_recon:
        train_ds = dataset.window(train_start, train_end)
        matrices = forecast_summing_matrices(train_ds, reach, threads=threads)

    median_log: dict[SeriesKey, np.ndarray] = {}
    if FMEDIAN in wanted:
        for key in all_keys:
            train = smoothed[key].window(train_start, train_end)
            median_log[key] = train.values[fm_depth(train).median_index]

    for h in range(1, reach + 1):
        year = train_end + h
        if INDEPENDENT in wanted:
            for key in all_keys:
                record(INDEPENDENT, key, h, year, base_log[key][h - 1])
        for method in (BOTTOM_UP, OPTIMAL_COMBINATION):
            if method in wanted:
                rec = _reconciled_log_curves(
                    base_log, w_var, matrices[h - 1], h, method, weighting
                )
                for key in all_keys:
                    record(method, key, h, year, rec[key])
        if FMEDIAN in wanted:
            for key in all_keys:
                record(FMEDIAN, key, h, year, median_log[key])

    if not make_intervals:
        return

    def stack_errors(key: SeriesKey, h: int) -> np.ndarray:
        errors = stacks[key].get(h)
        if errors is None:
            raise SampleTooSmall(f"series {key}: no in-sample errors at horizon {h}")
        return errors

    if INDEPENDENT in wanted:
        for key_idx, key in enumerate(all_keys):
            for h in range(1, reach + 1):
                errors = stack_errors(key, h)
                ss = np.random.SeedSequence(seed, spawn_key=(1, w_idx, key_idx, h))
                gl, gu = bootstrap_bounds(errors, interval_b, ss)
                try:
                    phi = tune(errors, gl, gu, plan.alpha)
                except Exception as exc:
                    raise type(exc)(f"series {key}, horizon {h}: {exc}") from exc
                point = base_log[key][h - 1]
                iv = IntervalForecast(
                    horizon=h,
                    lower=point + phi * gl,
                    upper=point + phi * gu,
                    alpha=plan.alpha,
                    kind=interval_kind,
                    tuning=phi if interval_kind == UNIFORM else np.full(p, phi),
                )
                record_interval(INDEPENDENT, key, h, train_end + h, iv)

    for m_idx, method in enumerate((BOTTOM_UP, OPTIMAL_COMBINATION)):
        if method not in wanted:
            continue
        sub = tuple(matrices[0][0].col_keys) if method == BOTTOM_UP else all_keys
        for h in range(1, reach + 1):
            points = {k: base_log[k][h - 1] for k in sub}
            errors = {k: stack_errors(k, h) for k in sub}
            ss = np.random.SeedSequence(seed, spawn_key=(2, w_idx, h, m_idx))
            reps = draw_shared_replicates(points, errors, interval_b, ss)
            use_var = method == OPTIMAL_COMBINATION and weighting == WLS
            try:
                ivs = reconcile_interval_replicates(
                    points, reps, matrices[h - 1], method,
                    alpha=plan.alpha, kind=interval_kind, horizon=h,
                    variances=w_var if use_var else None, weighting=weighting,
                )
            except Exception as exc:
                raise type(exc)(f"{method}, horizon {h}: {exc}") from exc
            for key in all_keys:
                record_interval(method, key, h, train_end + h, ivs[key])


def _assemble_report(
    plan, all_keys, levels, level_of, err, iscore,
    seed, median_convention, score_scale, cfg_hash,
) -> BacktestReport:
    h_max = plan.h_max
    keys_at = {lv: [k for k in all_keys if level_of[k] == lv] for lv in levels}
    first = (plan.methods[0], all_keys[0])
    origins = tuple(len(err[first][h]) for h in range(1, h_max + 1))

    mafe_t: dict[tuple[str, str], np.ndarray] = {}
    rmsfe_t: dict[tuple[str, str], np.ndarray] = {}
    score_t: dict[tuple[str, str], np.ndarray] = {}
    summaries: dict[tuple[str, str], dict[str, float]] = {}
    for method in plan.methods:
        for lv in levels:
            ma = np.full(h_max, np.nan)
            rm = np.full(h_max, np.nan)
            sc = np.full(h_max, np.nan)
            for h in range(1, h_max + 1):
                abs_means, sq_means, s_means = [], [], []
                for key in keys_at[lv]:
                    rows = err[(method, key)][h]
                    if rows:
                        e = np.vstack(rows)
                        abs_means.append(np.mean(np.abs(e)))
                        sq_means.append(np.mean(e * e))
                    svals = iscore[(method, key)][h]
                    if svals:
                        s_means.append(np.mean(svals))
                if abs_means:
                    ma[h - 1] = np.mean(abs_means)
                    rm[h - 1] = np.mean(np.sqrt(sq_means))
                if s_means:
                    sc[h - 1] = np.mean(s_means)
            mafe_t[(method, lv)] = ma
            rmsfe_t[(method, lv)] = rm
            score_t[(method, lv)] = sc
            summaries[(method, lv)] = {
                "mean_rmsfe": summarize(rm, MEAN),
                "median_mafe": summarize(ma, MEDIAN, median_convention),
                "mean_score": summarize(sc, MEAN),
                "median_score": summarize(sc, MEDIAN, median_convention),
            }

    return BacktestReport(
        methods=plan.methods,
        levels=levels,
        h_max=h_max,
        origins=origins,
        mafe=mafe_t,
        rmsfe=rmsfe_t,
        score=score_t,
        summaries=summaries,
        seed=seed,
        config_hash=cfg_hash,
        score_scale=score_scale,
        median_convention=median_convention,
    )


# -- serialization -----------------------------------------------------------

def _csv_value(v: float) -> str:
    return format(v, ".10g")


def write_report_csv(report: BacktestReport, path) -> None:
    """Long-format scores: method, level, horizon, metric, value.

    Values are multiplied by `report.multiplier`. Summary rows use the
    pseudo-horizons "mean" and "median". Unix newlines on every platform, so
    byte-level comparison between runs is meaningful.
    """
    mult = report.multiplier
    with open(path, "w", newline="") as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(["method", "level", "horizon", "metric", "value"])
        for method in report.methods:
            for lv in report.levels:
                for metric in ("mafe", "rmsfe", "interval_score"):
                    arr = report.table(metric)[(method, lv)]
                    for h in range(1, report.h_max + 1):
                        w.writerow(
                            [method, lv, h, metric, _csv_value(arr[h - 1] * mult)]
                        )
                s = report.summaries[(method, lv)]
                w.writerow([method, lv, "mean", "rmsfe", _csv_value(s["mean_rmsfe"] * mult)])
                w.writerow([method, lv, "median", "mafe", _csv_value(s["median_mafe"] * mult)])
                w.writerow([method, lv, "mean", "interval_score", _csv_value(s["mean_score"] * mult)])
                w.writerow([method, lv, "median", "interval_score", _csv_value(s["median_score"] * mult)])


def _md_value(v: float) -> str:
    return "" if np.isnan(v) else format(v, ".4f")


def write_report_markdown(report: BacktestReport, path) -> None:
    """Readable tables, one per metric, method and level as rows."""
    mult = report.multiplier
    lines = [
        "# Backtest report",
        "",
        f"- seed: {report.seed}",
        f"- configuration hash: {report.config_hash}",
        f"- score scale: {report.score_scale} (values scaled by {mult:g})",
        f"- forecast origins per horizon: {', '.join(map(str, report.origins))}",
        "",
    ]
    titles = (
        ("mafe", "MAFE", "median_mafe", "Median"),
        ("rmsfe", "RMSFE", "mean_rmsfe", "Mean"),
        ("interval_score", "Mean interval score", "mean_score", "Mean"),
    )
    for metric, title, summary_key, summary_name in titles:
        lines.append(f"## {title}")
        lines.append("")
        head = ["method", "level"] + [str(h) for h in range(1, report.h_max + 1)]
        head.append(summary_name)
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for method in report.methods:
            for lv in report.levels:
                arr = report.table(metric)[(method, lv)]
                cells = [method, lv] + [_md_value(v * mult) for v in arr]
                cells.append(_md_value(report.summaries[(method, lv)][summary_key] * mult))
                lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    Path(path).write_text("\n".join(lines))
