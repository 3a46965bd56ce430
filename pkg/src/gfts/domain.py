"""Core value types: age grids, functional series, grouping schemes, datasets.

A grouped dataset stores observed deaths and exposure only for the bottom
disaggregation level; every other series is derived by summation, so the
aggregation identity holds by construction rather than by bookkeeping.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ShapeMismatch,
    UnknownKey,
    ValidationError,
    ZeroExposure,
)

RATE = "rate"
LOG_RATE = "log_rate"
_SCALES = (RATE, LOG_RATE)


def _as_float_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class AgeGrid:
    """Strictly increasing, finite age grid points."""

    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) == 0:
            raise ValidationError("age grid must contain at least one point")
        if not all(np.isfinite(pts)):
            raise ValidationError("age grid points must be finite")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError("age grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def trapezoid_weights(self) -> np.ndarray:
        """Quadrature weights for the discrete inner product on this grid.

        Single-point grids get weight 1 so that inner products degrade to a
        plain product instead of vanishing.
        """
        z = self.array
        if len(z) == 1:
            return np.ones(1)
        w = np.empty_like(z)
        w[0] = (z[1] - z[0]) / 2.0
        w[-1] = (z[-1] - z[-2]) / 2.0
        w[1:-1] = (z[2:] - z[:-2]) / 2.0
        return w


@dataclass(frozen=True)
class FunctionalSeries:
    """A yearly sequence of curves observed on a common age grid.

    Parameters
    ----------
    grid : AgeGrid
        Common age grid of all curves.
    years : tuple of int
        Strictly increasing, consecutive observation years.
    values : ndarray, shape (n_years, n_ages)
        Curve values; must be finite.
    scale : str
        Either ``"rate"`` or ``"log_rate"``.
    """

    grid: AgeGrid
    years: tuple[int, ...]
    values: np.ndarray
    scale: str

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        if len(years) == 0:
            raise ValidationError("a functional series needs at least one year")
        if any(b != a + 1 for a, b in zip(years, years[1:])):
            raise ValidationError("years must be consecutive integers")
        vals = _as_float_matrix(self.values, "values")
        if vals.shape != (len(years), len(self.grid)):
            raise ShapeMismatch(
                f"values shape {vals.shape} does not match "
                f"{len(years)} years x {len(self.grid)} ages"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("curve values must be finite")
        if self.scale not in _SCALES:
            raise ValidationError(f"scale must be one of {_SCALES}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", vals)

    @property
    def n_years(self) -> int:
        return len(self.years)

    def window(self, first_year: int, last_year: int) -> "FunctionalSeries":
        """Slice to the inclusive year range [first_year, last_year]."""
        if first_year < self.years[0] or last_year > self.years[-1]:
            raise ValidationError(
                f"window [{first_year}, {last_year}] outside data years "
                f"[{self.years[0]}, {self.years[-1]}]"
            )
        i = first_year - self.years[0]
        j = last_year - self.years[0] + 1
        return FunctionalSeries(self.grid, self.years[i:j], self.values[i:j], self.scale)

    def to_log(self) -> "FunctionalSeries":
        if self.scale == LOG_RATE:
            return self
        if np.any(self.values <= 0):
            raise ValidationError("cannot log-transform nonpositive rates")
        return FunctionalSeries(self.grid, self.years, np.log(self.values), LOG_RATE)

    def to_rate(self) -> "FunctionalSeries":
        if self.scale == RATE:
            return self
        return FunctionalSeries(self.grid, self.years, np.exp(self.values), RATE)


@dataclass(frozen=True, order=True)
class SeriesKey:
    """Immutable attribute->value map identifying one series.

    Items are stored sorted by attribute name, so two keys are equal exactly
    when their mappings are equal, regardless of construction order. The empty
    key is the grand total.
    """

    items: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        items = tuple(sorted((str(a), str(v)) for a, v in self.items))
        names = [a for a, _ in items]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate attribute in key: {names}")
        object.__setattr__(self, "items", items)

    @classmethod
    def of(cls, **attrs: str) -> "SeriesKey":
        return cls(tuple(attrs.items()))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "SeriesKey":
        return cls(tuple(mapping.items()))

    def as_dict(self) -> dict[str, str]:
        return dict(self.items)

    @property
    def attribute_names(self) -> frozenset[str]:
        return frozenset(a for a, _ in self.items)

    def get(self, attr: str) -> str | None:
        for a, v in self.items:
            if a == attr:
                return v
        return None

    def __str__(self) -> str:
        if not self.items:
            return "total"
        return ",".join(f"{a}={v}" for a, v in self.items)


TOTAL = SeriesKey()


def level_label(level: Sequence[str]) -> str:
    return "total" if not level else ",".join(level)


@dataclass(frozen=True)
class GroupingScheme:
    """Declares attributes, disaggregation levels, and the refinement tree.

    Parameters
    ----------
    attributes : tuple of str
        All attribute names, in declaration order.
    bottom : tuple of str
        The attribute combination whose series sum to everything else.
    levels : tuple of tuple of str
        Every disaggregation level, in declaration order. The empty tuple is
        the grand total. Must contain the bottom combination.
    tree : mapping
        ``child_attr -> (parent_attr, {child_value: parent_value})`` refinement
        relations, e.g. prefecture -> region.
    domains : mapping
        ``attr -> tuple of values`` for bottom attributes. May be empty at
        parse time and bound later from data.
    """

    attributes: tuple[str, ...]
    bottom: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]
    tree: Mapping[str, tuple[str, Mapping[str, str]]] = field(default_factory=dict)
    domains: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        attrs = tuple(self.attributes)
        if len(set(attrs)) != len(attrs):
            raise ConfigError("duplicate attribute names")
        bottom = tuple(self.bottom)
        for a in bottom:
            if a not in attrs:
                raise ConfigError(f"bottom attribute {a!r} not declared")
        levels = tuple(tuple(lv) for lv in self.levels)
        seen = set()
        for lv in levels:
            if set(lv) - set(attrs):
                raise ConfigError(f"level {lv} uses undeclared attributes")
            if len(set(lv)) != len(lv):
                raise ConfigError(f"level {lv} repeats an attribute")
            fs = frozenset(lv)
            if fs in seen:
                raise ConfigError(f"duplicate level {lv}")
            seen.add(fs)
        if frozenset(bottom) not in seen:
            raise ConfigError("levels must include the bottom combination")
        tree = {str(c): (str(p), dict(m)) for c, (p, m) in dict(self.tree).items()}
        for child, (parent, _) in tree.items():
            if child not in attrs or parent not in attrs:
                raise ConfigError(f"refinement {child}->{parent} uses undeclared attributes")
        domains = {str(a): tuple(str(v) for v in vs) for a, vs in dict(self.domains).items()}
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "bottom", bottom)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "tree", tree)
        object.__setattr__(self, "domains", domains)
        # every attribute appearing in a level must be computable from a bottom key
        for lv in levels:
            for a in lv:
                self._route(a)

    def _route(self, attr: str) -> tuple[str, dict[str, str] | None]:
        """Return (bottom_attr, composed child->ancestor map or None).

        None means the attribute is itself a bottom attribute.
        """
        if attr in self.bottom:
            return attr, None
        # walk the refinement tree upward from each bottom attribute
        for start in self.bottom:
            cur = start
            mapping: dict[str, str] | None = None
            visited = {cur}
            while cur in self.tree:
                parent, step = self.tree[cur]
                if mapping is None:
                    mapping = dict(step)
                else:
                    mapping = {k: step.get(v) for k, v in mapping.items()}
                cur = parent
                if cur in visited:
                    raise ConfigError("refinement tree contains a cycle")
                visited.add(cur)
                if cur == attr:
                    if any(v is None for v in mapping.values()):
                        raise ConfigError(f"incomplete refinement map on route to {attr!r}")
                    return start, mapping
        raise ConfigError(f"attribute {attr!r} is not derivable from the bottom combination")

    def with_domains(self, domains: Mapping[str, Sequence[str]]) -> "GroupingScheme":
        merged = dict(self.domains)
        for a, vs in domains.items():
            merged[a] = tuple(str(v) for v in vs)
        return replace(self, domains=merged)

    def bottom_value(self, bottom_key: SeriesKey, attr: str) -> str:
        """Value of `attr` implied by a bottom key."""
        src, mapping = self._route(attr)
        v = bottom_key.get(src)
        if v is None:
            raise UnknownKey(f"bottom key {bottom_key} lacks attribute {src!r}")
        if mapping is None:
            return v
        try:
            return mapping[v]
        except KeyError:
            raise UnknownKey(f"value {v!r} of {src!r} has no {attr!r} mapping") from None

    def bottom_keys(self) -> list[SeriesKey]:
        """All bottom keys, lexicographic in bottom attribute declaration order."""
        doms = []
        for a in self.bottom:
            vals = self.domains.get(a)
            if not vals:
                raise ConfigError(f"domain of bottom attribute {a!r} is not bound")
            doms.append(tuple(sorted(set(vals))))
        out = []
        for combo in itertools.product(*doms):
            out.append(SeriesKey(tuple(zip(self.bottom, combo))))
        return out

    def level_keys(self, level: Sequence[str]) -> list[SeriesKey]:
        """Distinct keys of one level, sorted by value in level attribute order."""
        lv = tuple(level)
        if frozenset(lv) not in {frozenset(l) for l in self.levels}:
            raise UnknownKey(f"level {lv} is not part of the scheme")
        if not lv:
            return [TOTAL]
        seen = {}
        for b in self.bottom_keys():
            vals = tuple(self.bottom_value(b, a) for a in lv)
            seen.setdefault(vals, SeriesKey(tuple(zip(lv, vals))))
        return [seen[v] for v in sorted(seen)]

    def all_keys(self) -> list[SeriesKey]:
        """Every series key: levels in scheme order, sorted within a level."""
        out: list[SeriesKey] = []
        for lv in self.levels:
            out.extend(self.level_keys(lv))
        return out

    def level_of(self, key: SeriesKey) -> tuple[str, ...]:
        names = key.attribute_names
        for lv in self.levels:
            if frozenset(lv) == names:
                return lv
        raise UnknownKey(f"key {key} does not match any level")


def members(scheme: GroupingScheme, key: SeriesKey) -> list[SeriesKey]:
    """Bottom keys whose series sum to the series of `key`.

    The grand total returns every bottom key; a bottom key returns itself.
    Raises UnknownKey for keys outside the scheme.
    """
    lv = scheme.level_of(key)
    want = key.as_dict()
    out = []
    for b in scheme.bottom_keys():
        if all(scheme.bottom_value(b, a) == want[a] for a in lv):
            out.append(b)
    if not out:
        raise UnknownKey(f"key {key} matches no bottom series")
    return out


@dataclass(frozen=True)
class GroupedDataset:
    """Bottom-level death and exposure panels bound to a grouping scheme.

    `deaths` and `exposure` map every bottom key to an (n_years, n_ages)
    matrix. Exposure must be strictly positive; deaths nonnegative. Aggregate
    counts for any scheme key are sums over its bottom members.
    """

    scheme: GroupingScheme
    grid: AgeGrid
    years: tuple[int, ...]
    deaths: Mapping[SeriesKey, np.ndarray]
    exposure: Mapping[SeriesKey, np.ndarray]

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        if any(b != a + 1 for a, b in zip(years, years[1:])):
            raise ValidationError("years must be consecutive")
        shape = (len(years), len(self.grid))
        expect = set(self.scheme.bottom_keys())
        got = set(self.deaths)
        if got != expect or set(self.exposure) != expect:
            missing = expect - got
            extra = got - expect
            raise ValidationError(
                f"bottom keys mismatch (missing={sorted(map(str, missing))[:3]}, "
                f"extra={sorted(map(str, extra))[:3]})"
            )
        deaths = {}
        exposure = {}
        for k in expect:
            d = _as_float_matrix(self.deaths[k], f"deaths[{k}]")
            e = _as_float_matrix(self.exposure[k], f"exposure[{k}]")
            if d.shape != shape or e.shape != shape:
                raise ShapeMismatch(f"panel for {k} must have shape {shape}")
            if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
                raise ValidationError(f"non-finite counts for {k}")
            if np.any(d < 0):
                raise ValidationError(f"negative deaths for {k}")
            if np.any(e <= 0):
                raise ValidationError(f"nonpositive exposure for {k}")
            d = d.copy(); d.setflags(write=False)
            e = e.copy(); e.setflags(write=False)
            deaths[k] = d
            exposure[k] = e
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "exposure", exposure)

    @property
    def n_years(self) -> int:
        return len(self.years)

    def bottom_keys(self) -> list[SeriesKey]:
        return self.scheme.bottom_keys()

    def all_keys(self) -> list[SeriesKey]:
        return self.scheme.all_keys()

    def counts(self, key: SeriesKey) -> tuple[np.ndarray, np.ndarray]:
        """(deaths, exposure) matrices for any scheme key, summed over members."""
        if key in self.deaths:
            return self.deaths[key], self.exposure[key]
        ms = members(self.scheme, key)
        d = np.zeros((self.n_years, len(self.grid)))
        e = np.zeros_like(d)
        for m in ms:
            d += self.deaths[m]
            e += self.exposure[m]
        return d, e

    def window(self, first_year: int, last_year: int) -> "GroupedDataset":
        """Restrict to the inclusive year range."""
        if first_year < self.years[0] or last_year > self.years[-1]:
            raise ValidationError("window outside data years")
        i = first_year - self.years[0]
        j = last_year - self.years[0] + 1
        return GroupedDataset(
            self.scheme,
            self.grid,
            self.years[i:j],
            {k: v[i:j] for k, v in self.deaths.items()},
            {k: v[i:j] for k, v in self.exposure.items()},
        )


def aggregate(dataset: GroupedDataset, key: SeriesKey) -> FunctionalSeries:
    """Rate series of any scheme key: summed deaths over summed exposure.

    Identical (to floating-point evaluation order) to the exposure-weighted
    combination of member rates. Raises ZeroExposure if an aggregate exposure
    cell vanishes.
    """
    d, e = dataset.counts(key)
    if np.any(e == 0):
        raise ZeroExposure(f"aggregate exposure of {key} has a zero cell")
    return FunctionalSeries(dataset.grid, dataset.years, d / e, RATE)


def derived_rates(dataset: GroupedDataset) -> dict[SeriesKey, FunctionalSeries]:
    """Rate series for every key of the scheme, in canonical key order."""
    return {k: aggregate(dataset, k) for k in dataset.all_keys()}
