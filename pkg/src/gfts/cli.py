"""Command-line front end.

Subcommands cover the pipeline end to end: simulate a panel, smooth it,
inspect the principal component fit, produce point forecasts, reconcile
them across the grouping hierarchy, attach bootstrap intervals, and run
the expanding-window evaluation. Every run writes a plain-text manifest
(resolved options, input digests, seed, version, wall clock) next to its
outputs; outputs depend only on the manifest fields other than the wall
clock, so re-running a manifest reproduces them byte for byte.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 64 usage.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .domain import LOG_RATE, RATE, GroupedDataset, GroupingScheme, SeriesKey
from .errors import NumericalError, ValidationError
from .evaluate import (
    METHODS,
    RANKED,
    HORIZON_INDEXED,
    BacktestPlan,
    curve_forecasts_with_variance,
    run_backtest,
    write_report_csv,
    write_report_markdown,
)
from .fpca import DEFAULT_DELTA, default_score_forecaster, fit_fpca, forecast_curves
from .ingest import (
    key_csv_fields,
    key_from_csv_fields,
    load_grouping_config,
    load_panel,
    write_grouping_config,
    write_panel,
)
from .intervals import (
    DEFAULT_ALPHA,
    DEFAULT_B,
    POINTWISE,
    UNIFORM,
    bootstrap_bounds,
    insample_error_stack,
    tune_pointwise,
    tune_uniform,
)
from .reconcile import OLS, WLS, BaseForecasts, forecast_summing_matrices, reconcile_curves
from .simulate import SimConfig, generate_with_truth
from .smoothing import AUTO, SmoothingConfig, smooth_dataset

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64

_RATE_FLOOR = 1e-300


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code the rest of the tool expects."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run manifest ----------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    """Provenance record written next to every subcommand's outputs.

    Output files are functions of everything here except wall_clock_seconds.
    """

    subcommand: str
    resolved: Mapping[str, object]
    input_digests: Mapping[str, str]
    seed: int | None
    tool_version: str = __version__
    wall_clock_seconds: float = 0.0

    def render(self) -> str:
        lines = [
            f"subcommand = {self.subcommand}",
            f"tool_version = {self.tool_version}",
            f"seed = {'none' if self.seed is None else self.seed}",
        ]
        for name in sorted(self.resolved):
            lines.append(f"{name} = {self.resolved[name]}")
        for name in sorted(self.input_digests):
            lines.append(f"input_sha256 {name} = {self.input_digests[name]}")
        lines.append(f"wall_clock_seconds = {self.wall_clock_seconds:.3f}")
        return "\n".join(lines) + "\n"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


# -- shared option plumbing ------------------------------------------------------


def _parse_lam(text: str) -> float | str:
    if text == AUTO:
        return AUTO
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or {AUTO!r}, got {text!r}")


def _add_panel_inputs(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", required=True, help="panel CSV path")
    sub.add_argument("--config", required=True, help="grouping config path")


def _add_out_dir(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out-dir", required=True, help="directory for outputs")


def _add_smoothing(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--lam",
        type=_parse_lam,
        default=10.0,
        help="smoothing penalty weight, or 'auto' for cross-validated choice",
    )


def _add_threads(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker threads; never changes numerical output",
    )


def _load_inputs(args) -> tuple[GroupingScheme, GroupedDataset]:
    scheme = load_grouping_config(args.config)
    return scheme, load_panel(args.data, scheme)


def _smoothing_config(args) -> SmoothingConfig:
    return SmoothingConfig(lam=args.lam)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _g(x: float) -> str:
    return format(float(x), ".10g")


def _key_columns(scheme: GroupingScheme) -> list[str]:
    return list(scheme.attributes)


# -- subcommand handlers ---------------------------------------------------------
# Each returns (resolved config values, input paths) for the manifest.


def _cmd_simulate(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    config = SimConfig(
        n_years=args.years,
        n_regions=args.regions,
        prefectures_per_region=args.prefectures_per_region,
        seed=args.seed,
    )
    result = generate_with_truth(config)
    dataset = result.dataset
    write_panel(dataset, out / "panel.csv")
    write_grouping_config(dataset.scheme, out / "groups.cfg")

    rows = []
    for key in dataset.bottom_keys():
        latent = result.latent_log_rates[key]
        attrs = [key.as_dict()[a] for a in dataset.scheme.bottom]
        for t, year in enumerate(dataset.years):
            for j, age in enumerate(dataset.grid.points):
                rows.append([year, _g(age), *attrs, _g(latent[t, j])])
    _write_csv(
        out / "truth.csv",
        ["year", "age", *dataset.scheme.bottom, "log_rate"],
        rows,
    )
    resolved = {
        "years": args.years,
        "regions": args.regions,
        "prefectures_per_region": args.prefectures_per_region,
        "out_dir": str(out),
    }
    return resolved, []


def _cmd_smooth(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    scheme, dataset = _load_inputs(args)
    smoothed = smooth_dataset(dataset, _smoothing_config(args), threads=args.threads)
    cols = _key_columns(scheme)
    rows = []
    for key in dataset.all_keys():
        series = smoothed[key]
        fields = key_csv_fields(scheme, key)
        for t, year in enumerate(series.years):
            for j, age in enumerate(series.grid.points):
                rows.append([year, _g(age), *fields, _g(series.values[t, j])])
    _write_csv(out / "smoothed.csv", ["year", "age", *cols, "log_rate"], rows)
    resolved = {"lam": args.lam, "threads": args.threads, "out_dir": str(out)}
    return resolved, [Path(args.data), Path(args.config)]


def _fit_all(dataset, smoothed, delta):
    return {key: fit_fpca(smoothed[key], delta=delta) for key in dataset.all_keys()}


def _cmd_fpca(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    scheme, dataset = _load_inputs(args)
    smoothed = smooth_dataset(dataset, _smoothing_config(args), threads=args.threads)
    models = _fit_all(dataset, smoothed, args.delta)
    cols = _key_columns(scheme)

    mean_rows, fn_rows, val_rows, score_rows = [], [], [], []
    for key in dataset.all_keys():
        model = models[key]
        fields = key_csv_fields(scheme, key)
        for j, age in enumerate(model.grid.points):
            mean_rows.append([*fields, _g(age), _g(model.mean[j])])
        for comp in range(model.n_components):
            for j, age in enumerate(model.grid.points):
                fn_rows.append(
                    [*fields, comp + 1, _g(age), _g(model.eigenfunctions[comp, j])]
                )
            val_rows.append([*fields, comp + 1, _g(model.eigenvalues[comp])])
            for t, year in enumerate(smoothed[key].years):
                score_rows.append([*fields, comp + 1, year, _g(model.scores[t, comp])])
    _write_csv(out / "fpca_mean.csv", [*cols, "age", "mean"], mean_rows)
    _write_csv(
        out / "fpca_eigenfunctions.csv", [*cols, "component", "age", "value"], fn_rows
    )
    _write_csv(out / "fpca_eigenvalues.csv", [*cols, "component", "eigenvalue"], val_rows)
    _write_csv(out / "fpca_scores.csv", [*cols, "component", "year", "score"], score_rows)
    resolved = {
        "delta": args.delta,
        "lam": args.lam,
        "threads": args.threads,
        "out_dir": str(out),
    }
    return resolved, [Path(args.data), Path(args.config)]


def _cmd_forecast(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    scheme, dataset = _load_inputs(args)
    smoothed = smooth_dataset(dataset, _smoothing_config(args), threads=args.threads)
    cols = _key_columns(scheme)
    rows, var_rows = [], []
    for key in dataset.all_keys():
        model = fit_fpca(smoothed[key], delta=args.delta)
        curves, w = curve_forecasts_with_variance(model, args.h_max)
        fields = key_csv_fields(scheme, key)
        for h in range(1, args.h_max + 1):
            for j, age in enumerate(model.grid.points):
                rows.append([*fields, h, _g(age), _g(curves[h - 1, j])])
        var_rows.append([*fields, _g(w)])
    _write_csv(out / "forecasts.csv", [*cols, "horizon", "age", "log_rate"], rows)
    _write_csv(out / "variances.csv", [*cols, "variance"], var_rows)
    resolved = {
        "h_max": args.h_max,
        "delta": args.delta,
        "lam": args.lam,
        "threads": args.threads,
        "out_dir": str(out),
    }
    return resolved, [Path(args.data), Path(args.config)]


def _read_forecast_csv(
    path: Path, scheme: GroupingScheme, grid_points: Sequence[float]
) -> dict[int, dict[SeriesKey, np.ndarray]]:
    """Parse a forecast CSV back into per-horizon log-rate curves.

    Every (horizon, key) block must cover exactly the panel's age grid, so
    curves stay index-aligned with the summing matrices.
    """
    import csv

    n_attrs = len(scheme.attributes)
    expected = [*scheme.attributes, "horizon", "age", "log_rate"]
    cells: dict[int, dict[SeriesKey, dict[float, float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ValidationError(
                f"forecast CSV must have columns {','.join(expected)}"
            )
        for lineno, raw in enumerate(reader, start=2):
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            try:
                key = key_from_csv_fields(scheme, raw[:n_attrs])
                h = int(raw[n_attrs])
                age = float(raw[n_attrs + 1])
                value = float(raw[n_attrs + 2])
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
            cells.setdefault(h, {}).setdefault(key, {})[age] = value

    if not cells:
        raise ValidationError(f"{path}: no forecast rows")
    horizons = sorted(cells)
    if horizons != list(range(1, len(horizons) + 1)):
        raise ValidationError(f"{path}: horizons must be 1..H, got {horizons}")
    expected_ages = list(grid_points)
    out: dict[int, dict[SeriesKey, np.ndarray]] = {}
    for h in horizons:
        out[h] = {}
        for key, by_age in cells[h].items():
            if sorted(by_age) != expected_ages:
                raise ValidationError(
                    f"{path}: ages for {key} at horizon {h} do not match the panel grid"
                )
            out[h][key] = np.array([by_age[a] for a in expected_ages])
    return out


def _read_variances_csv(path: Path, scheme: GroupingScheme) -> dict[SeriesKey, float]:
    import csv

    n_attrs = len(scheme.attributes)
    expected = [*scheme.attributes, "variance"]
    out: dict[SeriesKey, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ValidationError(
                f"variance CSV must have columns {','.join(expected)}"
            )
        for raw in reader:
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            out[key_from_csv_fields(scheme, raw[:n_attrs])] = float(raw[n_attrs])
    return out


def _cmd_reconcile(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    scheme, dataset = _load_inputs(args)
    base_log = _read_forecast_csv(Path(args.base), dataset.scheme, dataset.grid.points)
    h_max = max(base_log)
    grid = dataset.grid.points

    variances = None
    if args.weighting == WLS:
        if args.variances is None:
            raise ValidationError("--weighting WLS needs --variances from `forecast`")
        variances = _read_variances_csv(Path(args.variances), dataset.scheme)

    matrices = forecast_summing_matrices(dataset, h_max, threads=args.threads)
    bottom = set(dataset.bottom_keys())
    cols = _key_columns(scheme)
    rec_rows, res_rows = [], []
    for h in range(1, h_max + 1):
        rates = {k: np.exp(v) for k, v in base_log[h].items()}
        if args.method == "bottom_up":
            sub = {k: v for k, v in rates.items() if k in bottom}
            base = BaseForecasts(h, sub)
        else:
            var_sub = None
            if variances is not None:
                missing = set(rates) - set(variances)
                if missing:
                    raise ValidationError(
                        f"variance file is missing {len(missing)} forecast keys"
                    )
                var_sub = {k: variances[k] for k in rates}
            base = BaseForecasts(h, rates, variances=var_sub)
        rec = reconcile_curves(base, matrices[h - 1], args.method, args.weighting)

        for key in dataset.all_keys():
            fields = key_csv_fields(scheme, key)
            curve = np.log(np.maximum(rec[key], _RATE_FLOOR))
            for j, age in enumerate(grid):
                rec_rows.append([*fields, h, _g(age), _g(curve[j])])

        # residuals on the rate scale, where the aggregation identity lives
        for j in range(len(grid)):
            s = matrices[h - 1][j]
            rec_vec = np.array([rec[k][j] for k in s.row_keys])
            rec_bottom = np.array([rec[k][j] for k in s.col_keys])
            rec_res = np.max(np.abs(rec_vec - s.entries @ rec_bottom))
            if set(rates) >= set(s.row_keys):
                base_vec = np.array([rates[k][j] for k in s.row_keys])
                base_bottom = np.array([rates[k][j] for k in s.col_keys])
                base_res = _g(np.max(np.abs(base_vec - s.entries @ base_bottom)))
            else:
                base_res = "nan"
            res_rows.append([h, _g(grid[j]), base_res, _g(rec_res)])

    _write_csv(out / "reconciled.csv", [*cols, "horizon", "age", "log_rate"], rec_rows)
    _write_csv(
        out / "residuals.csv",
        ["horizon", "age", "base_max_abs_residual", "reconciled_max_abs_residual"],
        res_rows,
    )
    resolved = {
        "method": args.method,
        "weighting": args.weighting,
        "threads": args.threads,
        "out_dir": str(out),
    }
    inputs = [Path(args.data), Path(args.config), Path(args.base)]
    if args.variances is not None:
        inputs.append(Path(args.variances))
    return resolved, inputs


def _cmd_intervals(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    scheme, dataset = _load_inputs(args)
    smoothed = smooth_dataset(dataset, _smoothing_config(args), threads=args.threads)
    cols = _key_columns(scheme)
    tune = tune_uniform if args.kind == UNIFORM else tune_pointwise
    rows = []
    for key_idx, key in enumerate(dataset.all_keys()):
        model = fit_fpca(smoothed[key], delta=args.delta)
        curves, _ = forecast_curves(model, default_score_forecaster, args.h_max)
        stack = insample_error_stack(model, default_score_forecaster, args.h_max)
        fields = key_csv_fields(scheme, key)
        for h in range(1, args.h_max + 1):
            if h not in stack:
                raise ValidationError(
                    f"series {key}: no in-sample errors at horizon {h}"
                )
            errors = stack[h]
            seed_seq = np.random.SeedSequence(args.seed, spawn_key=(key_idx, h))
            gl, gu = bootstrap_bounds(errors, args.replicates, seed_seq)
            phi = tune(errors, gl, gu, args.alpha)
            point = curves[h - 1]
            lower, upper = point + phi * gl, point + phi * gu
            for j, age in enumerate(model.grid.points):
                rows.append(
                    [*fields, h, _g(age), _g(lower[j]), _g(point[j]), _g(upper[j])]
                )
    _write_csv(
        out / "intervals.csv",
        [*cols, "horizon", "age", "lower", "point", "upper"],
        rows,
    )
    resolved = {
        "h_max": args.h_max,
        "alpha": args.alpha,
        "kind": args.kind,
        "replicates": args.replicates,
        "delta": args.delta,
        "lam": args.lam,
        "threads": args.threads,
        "out_dir": str(out),
    }
    return resolved, [Path(args.data), Path(args.config)]


def _cmd_evaluate(args) -> tuple[dict, list[Path]]:
    out = _out_dir(args)
    scheme, dataset = _load_inputs(args)
    years = dataset.years
    train_end = args.train_end if args.train_end is not None else years[-1] - args.h_max
    methods = tuple(args.method) if args.method else METHODS
    plan = BacktestPlan(
        train_start=years[0],
        train_end_initial=train_end,
        data_end=years[-1],
        h_max=args.h_max,
        methods=methods,
        alpha=args.alpha,
    )
    report = run_backtest(
        dataset,
        plan,
        smoothing=_smoothing_config(args),
        delta=args.delta,
        weighting=args.weighting,
        include_intervals=not args.no_intervals,
        interval_b=args.replicates,
        interval_kind=args.kind,
        seed=args.seed,
        threads=args.threads,
        score_scale=args.score_scale,
        median_convention=args.median_convention,
    )
    write_report_csv(report, out / "report.csv")
    write_report_markdown(report, out / "report.md")
    resolved = {
        "train_end": train_end,
        "h_max": args.h_max,
        "methods": ",".join(methods),
        "alpha": args.alpha,
        "delta": args.delta,
        "lam": args.lam,
        "weighting": args.weighting,
        "intervals": not args.no_intervals,
        "replicates": args.replicates,
        "kind": args.kind,
        "score_scale": args.score_scale,
        "median_convention": args.median_convention,
        "threads": args.threads,
        "config_hash": report.config_hash,
        "out_dir": str(out),
    }
    return resolved, [Path(args.data), Path(args.config)]


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gfts", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gfts {__version__}")
    subs = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    subs.required = True

    sim = subs.add_parser("simulate", help="generate a synthetic grouped panel")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--years", type=int, default=30)
    sim.add_argument("--regions", type=int, default=4)
    sim.add_argument("--prefectures-per-region", type=int, default=3)
    _add_out_dir(sim)
    sim.set_defaults(handler=_cmd_simulate)

    smo = subs.add_parser("smooth", help="smooth observed log-rates for every series")
    _add_panel_inputs(smo)
    _add_smoothing(smo)
    _add_threads(smo)
    _add_out_dir(smo)
    smo.set_defaults(handler=_cmd_smooth)

    fpc = subs.add_parser("fpca", help="dump principal component fits per series")
    _add_panel_inputs(fpc)
    fpc.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    _add_smoothing(fpc)
    _add_threads(fpc)
    _add_out_dir(fpc)
    fpc.set_defaults(handler=_cmd_fpca)

    fct = subs.add_parser("forecast", help="point forecasts per series and horizon")
    _add_panel_inputs(fct)
    fct.add_argument("--h-max", type=int, default=10)
    fct.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    _add_smoothing(fct)
    _add_threads(fct)
    _add_out_dir(fct)
    fct.set_defaults(handler=_cmd_forecast)

    rec = subs.add_parser("reconcile", help="reconcile base forecasts across levels")
    _add_panel_inputs(rec)
    rec.add_argument("--base", required=True, help="forecast CSV from `forecast`")
    rec.add_argument(
        "--method",
        choices=("bottom_up", "optimal_combination"),
        default="optimal_combination",
    )
    rec.add_argument("--weighting", choices=(OLS, WLS), default=OLS)
    rec.add_argument("--variances", help="variance CSV from `forecast` (WLS only)")
    _add_threads(rec)
    _add_out_dir(rec)
    rec.set_defaults(handler=_cmd_reconcile)

    itv = subs.add_parser("intervals", help="bootstrap prediction bands per series")
    _add_panel_inputs(itv)
    itv.add_argument("--h-max", type=int, default=10)
    itv.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    itv.add_argument("--kind", choices=(POINTWISE, UNIFORM), default=POINTWISE)
    itv.add_argument("--replicates", type=int, default=DEFAULT_B)
    itv.add_argument("--seed", type=int, default=0)
    itv.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    _add_smoothing(itv)
    _add_threads(itv)
    _add_out_dir(itv)
    itv.set_defaults(handler=_cmd_intervals)

    ev = subs.add_parser("evaluate", help="expanding-window backtest and report")
    _add_panel_inputs(ev)
    ev.add_argument("--h-max", type=int, default=10)
    ev.add_argument(
        "--train-end",
        type=int,
        default=None,
        help="last training year of the first window (default: last year - h_max)",
    )
    ev.add_argument(
        "--method",
        action="append",
        choices=METHODS,
        default=None,
        help="repeat to select methods (default: all four)",
    )
    ev.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    ev.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    ev.add_argument("--weighting", choices=(OLS, WLS), default=WLS)
    ev.add_argument("--no-intervals", action="store_true")
    ev.add_argument("--replicates", type=int, default=DEFAULT_B)
    ev.add_argument("--kind", choices=(POINTWISE, UNIFORM), default=POINTWISE)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument(
        "--score-scale", choices=(LOG_RATE, RATE), default=LOG_RATE
    )
    ev.add_argument(
        "--median-convention", choices=(RANKED, HORIZON_INDEXED), default=RANKED
    )
    _add_smoothing(ev)
    _add_threads(ev)
    _add_out_dir(ev)
    ev.set_defaults(handler=_cmd_evaluate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    started = time.perf_counter()
    try:
        resolved, inputs = args.handler(args)
    except ValidationError as exc:
        print(f"gfts {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"gfts {args.subcommand}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"gfts {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    elapsed = time.perf_counter() - started

    manifest = RunManifest(
        subcommand=args.subcommand,
        resolved=resolved,
        input_digests={p.name: _sha256(p) for p in inputs},
        seed=getattr(args, "seed", None),
        wall_clock_seconds=elapsed,
    )
    (Path(args.out_dir) / "manifest.txt").write_text(
        manifest.render(), encoding="utf-8"
    )
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
