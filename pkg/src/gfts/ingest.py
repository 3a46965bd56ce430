"""Panel CSV and grouping-config parsing.

Panel files carry one row per (year, age, bottom key) cell with strictly
positive exposure. The grouping config is a small line-oriented format:

    attributes = sex,region,prefecture
    bottom = prefecture,sex
    level =
    level = sex
    level = region,sex
    level = prefecture,sex
    refine prefecture -> region
    refine P01 -> R1

``refine a -> b`` between declared attribute names opens a refinement
relation; subsequent ``refine x -> y`` lines fill its value map. Lines
starting with ``#`` and blank lines are ignored.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import AgeGrid, GroupedDataset, GroupingScheme, SeriesKey
from .errors import (
    ConfigError,
    DuplicateCell,
    IncompleteRectangle,
    NonPositiveExposure,
    ParseError,
)

_RESERVED = ("year", "age", "deaths", "exposure")


def _fmt(x: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(float(x))


# -- grouping config -----------------------------------------------------------

def load_grouping_config(path: str | Path) -> GroupingScheme:
    """Parse a grouping config file into a GroupingScheme.

    Bottom-attribute domains are bound later, from panel data; refinement
    value maps bind the domain of the child attribute implicitly.
    """
    text = Path(path).read_text(encoding="utf-8")
    attributes: tuple[str, ...] | None = None
    bottom: tuple[str, ...] | None = None
    levels: list[tuple[str, ...]] = []
    tree: dict[str, tuple[str, dict[str, str]]] = {}
    current_relation: str | None = None

    def split_csv(value: str) -> tuple[str, ...]:
        value = value.strip()
        if not value:
            return ()
        return tuple(part.strip() for part in value.split(","))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("refine"):
            body = line[len("refine"):].strip()
            if "->" not in body:
                raise ParseError(f"line {lineno}: refine needs '->'")
            left, right = (part.strip() for part in body.split("->", 1))
            if not left or not right:
                raise ParseError(f"line {lineno}: empty refine operand")
            if attributes is None:
                raise ConfigError(f"line {lineno}: refine before attributes")
            if left in attributes or right in attributes:
                if not (left in attributes and right in attributes):
                    raise ConfigError(
                        f"line {lineno}: refine mixes an attribute name with a value"
                    )
                if left in tree:
                    raise ConfigError(f"line {lineno}: {left!r} already refines {tree[left][0]!r}")
                tree[left] = (right, {})
                current_relation = left
            else:
                if current_relation is None:
                    raise ConfigError(f"line {lineno}: refine value before any relation")
                vmap = tree[current_relation][1]
                if left in vmap and vmap[left] != right:
                    raise ConfigError(f"line {lineno}: conflicting refinement for {left!r}")
                vmap[left] = right
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'name = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        if name == "attributes":
            if attributes is not None:
                raise ConfigError(f"line {lineno}: attributes declared twice")
            attributes = split_csv(value)
            if not attributes:
                raise ConfigError(f"line {lineno}: attributes list is empty")
            for a in attributes:
                if a in _RESERVED:
                    raise ConfigError(f"line {lineno}: attribute name {a!r} is reserved")
        elif name == "bottom":
            bottom = split_csv(value)
        elif name == "level":
            levels.append(split_csv(value))
        else:
            raise ParseError(f"line {lineno}: unknown directive {name!r}")

    if attributes is None:
        raise ConfigError("config declares no attributes")
    if bottom is None:
        raise ConfigError("config declares no bottom combination")
    if not levels:
        raise ConfigError("config declares no levels")
    domains = {
        child: tuple(sorted(vmap)) for child, (_, vmap) in tree.items() if child in bottom
    }
    return GroupingScheme(
        attributes=attributes, bottom=bottom, levels=tuple(levels), tree=tree, domains=domains
    )


def write_grouping_config(scheme: GroupingScheme, path: str | Path) -> None:
    lines = [f"attributes = {','.join(scheme.attributes)}"]
    lines.append(f"bottom = {','.join(scheme.bottom)}")
    for lv in scheme.levels:
        lines.append(f"level = {','.join(lv)}")
    for child, (parent, vmap) in scheme.tree.items():
        lines.append(f"refine {child} -> {parent}")
        for cv in sorted(vmap):
            lines.append(f"refine {cv} -> {vmap[cv]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- panel CSV -----------------------------------------------------------------

def load_panel(path: str | Path, scheme: GroupingScheme) -> GroupedDataset:
    """Load a panel CSV into a GroupedDataset bound to `scheme`.

    Every (year, age, bottom-key) cell must appear exactly once and exposure
    must be strictly positive. Years must be consecutive once deduplicated.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("panel file is empty") from None
        header = [h.strip() for h in header]
        needed = ["year", "age", *scheme.bottom, "deaths", "exposure"]
        col = {}
        for name in needed:
            if name not in header:
                raise ParseError(f"panel is missing column {name!r}")
            col[name] = header.index(name)
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) < len(header):
                raise ParseError(f"line {lineno}: expected {len(header)} fields")
            try:
                year = int(raw[col["year"]])
                age = float(raw[col["age"]])
                deaths = float(raw[col["deaths"]])
                exposure = float(raw[col["exposure"]])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if not (np.isfinite(age) and np.isfinite(deaths) and np.isfinite(exposure)):
                raise ParseError(f"line {lineno}: non-finite value")
            if deaths < 0:
                raise ParseError(f"line {lineno}: negative deaths")
            if exposure <= 0:
                raise NonPositiveExposure(f"line {lineno}: exposure must be > 0")
            key = SeriesKey(tuple((a, raw[col[a]].strip()) for a in scheme.bottom))
            rows.append((year, age, key, deaths, exposure))

    if not rows:
        raise ParseError("panel contains no data rows")

    years = sorted({r[0] for r in rows})
    if years != list(range(years[0], years[-1] + 1)):
        raise ParseError(f"years are not consecutive: {years}")
    ages = sorted({r[1] for r in rows})
    grid = AgeGrid(tuple(ages))
    domains = {
        a: sorted({r[2].get(a) for r in rows}) for a in scheme.bottom
    }
    bound = scheme.with_domains(domains)
    bottom_keys = bound.bottom_keys()
    key_idx = {k: i for i, k in enumerate(bottom_keys)}
    year_idx = {y: i for i, y in enumerate(years)}
    age_idx = {a: i for i, a in enumerate(ages)}

    n, p, m = len(years), len(ages), len(bottom_keys)
    deaths = np.full((m, n, p), np.nan)
    exposure = np.full((m, n, p), np.nan)
    for year, age, key, d, e in rows:
        i, t, j = key_idx[key], year_idx[year], age_idx[age]
        if not np.isnan(deaths[i, t, j]):
            raise DuplicateCell(f"cell (year={year}, age={age!r}, {key}) appears twice")
        deaths[i, t, j] = d
        exposure[i, t, j] = e
    if np.isnan(deaths).any():
        i, t, j = np.argwhere(np.isnan(deaths))[0]
        raise IncompleteRectangle(
            f"cell (year={years[t]}, age={ages[j]!r}, {bottom_keys[i]}) is missing"
        )

    return GroupedDataset(
        scheme=bound,
        grid=grid,
        years=tuple(years),
        deaths={k: deaths[i] for k, i in key_idx.items()},
        exposure={k: exposure[i] for k, i in key_idx.items()},
    )


def write_panel(dataset: GroupedDataset, path: str | Path) -> None:
    """Write a GroupedDataset back to panel CSV (canonical column order)."""
    scheme = dataset.scheme
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["year", "age", *scheme.bottom, "deaths", "exposure"])
        for key in dataset.bottom_keys():
            d = dataset.deaths[key]
            e = dataset.exposure[key]
            kv = key.as_dict()
            attrs = [kv[a] for a in scheme.bottom]
            for t, year in enumerate(dataset.years):
                for j, age in enumerate(dataset.grid.points):
                    writer.writerow(
                        [year, _fmt(age), *attrs, _fmt(d[t, j]), _fmt(e[t, j])]
                    )


def key_csv_fields(scheme: GroupingScheme, key: SeriesKey) -> list[str]:
    """Attribute cells for serializing any-level keys: blank when absent."""
    kv = key.as_dict()
    return [kv.get(a, "") for a in scheme.attributes]


def key_from_csv_fields(scheme: GroupingScheme, fields: Sequence[str]) -> SeriesKey:
    items = [
        (a, v.strip())
        for a, v in zip(scheme.attributes, fields)
        if v is not None and v.strip() != ""
    ]
    return SeriesKey(tuple(items))
