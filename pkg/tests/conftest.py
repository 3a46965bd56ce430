import numpy as np
import pytest

from gfts.domain import AgeGrid, GroupedDataset, GroupingScheme, SeriesKey


def make_scheme(n_prefectures: int = 4, n_regions: int = 2) -> GroupingScheme:
    """Sex x prefecture bottom with prefectures refined into regions."""
    prefs = [f"P{i + 1}" for i in range(n_prefectures)]
    per_region = n_prefectures // n_regions
    tree_map = {p: f"R{i // per_region + 1}" for i, p in enumerate(prefs)}
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
        tree={"prefecture": ("region", tree_map)},
        domains={"sex": ("female", "male"), "prefecture": tuple(prefs)},
    )


def make_dataset(
    seed: int = 0,
    n_years: int = 8,
    ages=(0.0, 40.0, 80.0),
    n_prefectures: int = 4,
    n_regions: int = 2,
    first_year: int = 2000,
) -> GroupedDataset:
    """Random strictly positive toy panel on the make_scheme hierarchy."""
    scheme = make_scheme(n_prefectures, n_regions)
    rng = np.random.default_rng(seed)
    grid = AgeGrid(tuple(ages))
    years = tuple(range(first_year, first_year + n_years))
    shape = (n_years, len(ages))
    deaths = {}
    exposure = {}
    for key in scheme.bottom_keys():
        e = rng.uniform(5e3, 5e4, size=shape)
        m = rng.uniform(1e-3, 5e-2, size=shape)
        deaths[key] = np.rint(m * e) + 1.0
        exposure[key] = e
    return GroupedDataset(
        scheme=scheme, grid=grid, years=years, deaths=deaths, exposure=exposure
    )


@pytest.fixture
def scheme():
    return make_scheme()


@pytest.fixture
def dataset():
    return make_dataset()


@pytest.fixture
def bottom_key(scheme):
    return SeriesKey.of(sex="female", prefecture="P1")
