"""Synthetic grouped mortality panels with retained ground truth.

The generator follows a Lee-Carter-style log-rate form

    log m_{t,b}(z) = a(z) + b(z) k_t + sex effect + prefecture effect
                     + prefecture drift * t + shocks + noise

with k_t a random walk with drift. The form is rank-1 in its stochastic part,
so principal component recovery and differencing-order selection on k_t are
analytically checkable. Deaths are Poisson draws with mean rate x exposure;
exposures are smooth in age and year with per-prefecture growth differences,
which makes the exposure-share matrices genuinely time varying.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import AgeGrid, GroupedDataset, GroupingScheme, SeriesKey
from .errors import ValidationError

FEMALE = "female"
MALE = "male"


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the synthetic panel generator. All scales must be positive.

    `region_sizes` overrides the uniform prefectures_per_region split (its
    sum is the prefecture count), which allows unbalanced geographies like
    47 prefectures over 8 regions.
    """

    n_years: int = 30
    ages: tuple[float, ...] = (0.0, 20.0, 40.0, 60.0, 80.0, 100.0)
    n_regions: int = 4
    prefectures_per_region: int = 3
    region_sizes: tuple[int, ...] | None = None
    seed: int = 0
    first_year: int = 1975
    # base log-rate curve a(z) = c0 + c1 u + c2 u^2, u = z / 100
    base_curve: tuple[float, float, float] = (-3.5, -4.5, 6.5)
    # loading b(z) = l0 + l1 u
    loading: tuple[float, float] = (0.6, 0.8)
    k_drift: float = -0.03
    k_volatility: float = 0.05
    sex_gap: float = 0.5
    prefecture_scale: float = 0.1
    prefecture_drift_scale: float = 0.02
    noise_scale: float = 0.02
    exposure_scale: float = 2e4
    exposure_age_slope: float = 0.8
    exposure_growth_spread: float = 0.01
    # (year, prefecture names, rate multiplier) applied to that year's rates
    shocks: tuple[tuple[int, tuple[str, ...], float], ...] = ()

    def __post_init__(self):
        if self.n_years < 1:
            raise ValidationError("n_years must be >= 1")
        if self.n_regions < 1:
            raise ValidationError("n_regions must be >= 1")
        sizes = self.region_sizes
        if sizes is not None:
            sizes = tuple(int(s) for s in sizes)
            if len(sizes) != self.n_regions or any(s < 1 for s in sizes):
                raise ValidationError(
                    "region_sizes must list one positive count per region"
                )
            object.__setattr__(self, "region_sizes", sizes)
        elif self.prefectures_per_region < 1:
            raise ValidationError("prefectures_per_region must be >= 1")
        for name, value in (
            ("k_volatility", self.k_volatility),
            ("prefecture_scale", self.prefecture_scale),
            ("prefecture_drift_scale", self.prefecture_drift_scale),
            ("noise_scale", self.noise_scale),
            ("exposure_growth_spread", self.exposure_growth_spread),
        ):
            if value < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.exposure_scale <= 0:
            raise ValidationError("exposure_scale must be > 0")
        if not 0 <= self.exposure_age_slope < 1.2:
            raise ValidationError("exposure_age_slope must lie in [0, 1.2)")
        for year, prefs, mult in self.shocks:
            if mult <= 0:
                raise ValidationError("shock multipliers must be > 0")

    @property
    def sizes(self) -> tuple[int, ...]:
        if self.region_sizes is not None:
            return self.region_sizes
        return (self.prefectures_per_region,) * self.n_regions

    @property
    def n_prefectures(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class SimulationResult:
    """Generated panel plus the latent quantities the panel was drawn from."""

    dataset: GroupedDataset
    latent_log_rates: Mapping[SeriesKey, np.ndarray]
    k_path: np.ndarray
    config: SimConfig


def _scheme_for(config: SimConfig) -> GroupingScheme:
    width = max(2, len(str(config.n_prefectures)))
    pref_names = [f"P{i + 1:0{width}d}" for i in range(config.n_prefectures)]
    region_names = [f"R{r + 1}" for r in range(config.n_regions)]
    pref_to_region = {}
    idx = 0
    for r, size in enumerate(config.sizes):
        for _ in range(size):
            pref_to_region[pref_names[idx]] = region_names[r]
            idx += 1
    return GroupingScheme(
        attributes=("sex", "prefecture", "region"),
        bottom=("sex", "prefecture"),
        levels=(
            (),
            ("sex",),
            ("region",),
            ("region", "sex"),
            ("prefecture",),
            ("prefecture", "sex"),
        ),
        tree={"prefecture": ("region", pref_to_region)},
        domains={"sex": (FEMALE, MALE), "prefecture": tuple(pref_names)},
    )


def generate_with_truth(config: SimConfig) -> SimulationResult:
    """Draw one panel; deterministic given config.seed."""
    scheme = _scheme_for(config)
    grid = AgeGrid(config.ages)
    n, p = config.n_years, len(grid)
    years = tuple(range(config.first_year, config.first_year + n))
    root = np.random.SeedSequence(config.seed)
    rng_k, rng_pref, rng_noise, rng_deaths = (
        np.random.default_rng(s) for s in root.spawn(4)
    )

    u = grid.array / 100.0
    c0, c1, c2 = config.base_curve
    base = c0 + c1 * u + c2 * u * u
    l0, l1 = config.loading
    load = l0 + l1 * u

    steps = config.k_drift + config.k_volatility * rng_k.normal(size=n)
    k_path = np.concatenate([[0.0], np.cumsum(steps)])[:n]

    prefs = sorted(scheme.domains["prefecture"])
    pref_effect = dict(zip(prefs, config.prefecture_scale * rng_pref.normal(size=len(prefs))))
    pref_drift = dict(zip(prefs, config.prefecture_drift_scale * rng_pref.normal(size=len(prefs))))
    pref_size = dict(zip(prefs, np.exp(0.4 * rng_pref.normal(size=len(prefs)))))
    pref_growth = dict(zip(prefs, config.exposure_growth_spread * rng_pref.uniform(-1.0, 1.0, size=len(prefs))))
    sex_effect = {FEMALE: -config.sex_gap / 2.0, MALE: config.sex_gap / 2.0}

    shock_log = {}
    for year, shock_prefs, mult in config.shocks:
        for name in shock_prefs:
            if name not in pref_effect:
                raise ValidationError(f"shock names unknown prefecture {name!r}")
            shock_log[(year, name)] = shock_log.get((year, name), 0.0) + float(np.log(mult))

    t_axis = np.arange(n)
    exp_age = 1.2 - config.exposure_age_slope * u

    latent: dict[SeriesKey, np.ndarray] = {}
    deaths: dict[SeriesKey, np.ndarray] = {}
    exposure: dict[SeriesKey, np.ndarray] = {}
    for key in scheme.bottom_keys():
        sex = key.get("sex")
        pref = key.get("prefecture")
        log_rate = (
            base[None, :]
            + np.outer(k_path, load)
            + sex_effect[sex]
            + pref_effect[pref]
            + pref_drift[pref] * t_axis[:, None]
        )
        if config.noise_scale > 0:
            log_rate = log_rate + config.noise_scale * rng_noise.normal(size=(n, p))
        else:
            rng_noise.normal(size=(n, p))  # keep the stream aligned across configs
        for (year, name), bump in shock_log.items():
            if name == pref and years[0] <= year <= years[-1]:
                log_rate[year - years[0]] += bump
        rate = np.exp(log_rate)
        expo = (
            config.exposure_scale
            * pref_size[pref]
            * np.outer((1.0 + pref_growth[pref]) ** t_axis, exp_age)
        )
        latent[key] = rate
        exposure[key] = expo
        deaths[key] = rng_deaths.poisson(rate * expo).astype(float)

    dataset = GroupedDataset(scheme, grid, years, deaths, exposure)
    return SimulationResult(
        dataset=dataset,
        latent_log_rates={k: np.log(v) for k, v in latent.items()},
        k_path=k_path,
        config=config,
    )


def generate(config: SimConfig) -> GroupedDataset:
    """Panel only; see generate_with_truth for the latent ground truth."""
    return generate_with_truth(config).dataset
