import numpy as np
import pytest

from gfts.domain import TOTAL, SeriesKey, members
from gfts.errors import (
    KeyMismatch,
    NonPositiveVariance,
    SeriesTooShort,
    ShapeMismatch,
    ValidationError,
)
from gfts.reconcile import (
    BaseForecasts,
    SummingMatrix,
    bottom_up,
    build_summing_matrix,
    forecast_summing_matrices,
    forecast_summing_matrix,
    optimal_combination,
    reconcile_curves,
)
from conftest import make_dataset


def tiny_matrix(shares=(0.25, 0.75)):
    a, b = SeriesKey.of(sex="a"), SeriesKey.of(sex="b")
    return SummingMatrix(
        row_keys=(TOTAL, a, b),
        col_keys=(a, b),
        entries=np.array([[shares[0], shares[1]], [1.0, 0.0], [0.0, 1.0]]),
        year=2020,
        age_index=0,
        age=0.0,
    )


class TestSummingMatrix:
    def test_row_sum_validation(self):
        a, b = SeriesKey.of(sex="a"), SeriesKey.of(sex="b")
        with pytest.raises(ValidationError):
            SummingMatrix(
                row_keys=(TOTAL, a, b),
                col_keys=(a, b),
                entries=np.array([[0.6, 0.6], [1.0, 0.0], [0.0, 1.0]]),
                year=2020,
                age_index=0,
                age=0.0,
            )

    def test_entry_range_validation(self):
        a, b = SeriesKey.of(sex="a"), SeriesKey.of(sex="b")
        with pytest.raises(ValidationError):
            SummingMatrix(
                row_keys=(TOTAL, a, b),
                col_keys=(a, b),
                entries=np.array([[1.5, -0.5], [1.0, 0.0], [0.0, 1.0]]),
                year=2020,
                age_index=0,
                age=0.0,
            )

    def test_shape_validation(self):
        a, b = SeriesKey.of(sex="a"), SeriesKey.of(sex="b")
        with pytest.raises(ShapeMismatch):
            SummingMatrix(
                row_keys=(TOTAL, a, b),
                col_keys=(a, b),
                entries=np.eye(2),
                year=2020,
                age_index=0,
                age=0.0,
            )

    def test_row_index_lookup(self):
        s = tiny_matrix()
        assert s.row_index(TOTAL) == 0
        with pytest.raises(KeyMismatch):
            s.row_index(SeriesKey.of(sex="zz"))


class TestBuildSummingMatrix:
    def test_observed_shares(self, dataset):
        s = build_summing_matrix(dataset, t=2, z=1)
        assert s.shape == (21, 8)
        assert s.year == dataset.years[2]
        assert s.age == dataset.grid.points[1]
        np.testing.assert_allclose(s.entries.sum(axis=1), 1.0, atol=1e-12)
        # total row carries each bottom's share of total exposure
        total_row = s.entries[s.row_index(TOTAL)]
        exp = np.array([dataset.exposure[k][2, 1] for k in s.col_keys])
        np.testing.assert_allclose(total_row, exp / exp.sum(), atol=1e-15)

    def test_identity_block_is_exact(self, dataset):
        s = build_summing_matrix(dataset, t=0, z=0)
        col_pos = {k: j for j, k in enumerate(s.col_keys)}
        for i, g in enumerate(s.row_keys):
            if g in col_pos:
                want = np.zeros(len(s.col_keys))
                want[col_pos[g]] = 1.0
                np.testing.assert_array_equal(s.entries[i], want)

    def test_aggregation_identity_on_observed_rates(self, dataset):
        # S applied to observed bottom rates reproduces observed aggregate rates
        t, z = 3, 2
        s = build_summing_matrix(dataset, t, z)
        bottom = np.array(
            [dataset.deaths[k][t, z] / dataset.exposure[k][t, z] for k in s.col_keys]
        )
        rec = s.entries @ bottom
        for i, g in enumerate(s.row_keys):
            d, e = dataset.counts(g)
            assert rec[i] == pytest.approx(d[t, z] / e[t, z], rel=1e-12)

    def test_index_bounds(self, dataset):
        with pytest.raises(ValidationError):
            build_summing_matrix(dataset, t=99, z=0)
        with pytest.raises(ValidationError):
            build_summing_matrix(dataset, t=0, z=99)


class TestBottomUp:
    def test_exact_weighted_mean(self):
        s = tiny_matrix(shares=(0.25, 0.75))
        a, b = s.col_keys
        base = BaseForecasts(horizon=1, values={a: [0.02], b: [0.04]})
        rec = bottom_up(base, s)
        assert rec[TOTAL] == pytest.approx(0.25 * 0.02 + 0.75 * 0.04, rel=1e-15)
        assert rec[a] == 0.02
        assert rec[b] == 0.04

    def test_bottom_rows_pass_through_bitwise(self, dataset):
        s = build_summing_matrix(dataset, t=0, z=0)
        rng = np.random.default_rng(0)
        vals = {k: rng.uniform(0.001, 0.05, size=3) for k in s.col_keys}
        base = BaseForecasts(horizon=1, values=vals)
        rec = bottom_up(base, s)
        for k in s.col_keys:
            assert rec[k] == vals[k][0]

    def test_key_mismatch(self):
        s = tiny_matrix()
        base = BaseForecasts(horizon=1, values={SeriesKey.of(sex="a"): [0.02]})
        with pytest.raises(KeyMismatch):
            bottom_up(base, s)


def random_instance(rng, n_bottom=None, n_extra=None):
    """A random scheme-free summing matrix plus coherent base forecasts."""
    m = n_bottom if n_bottom is not None else int(rng.integers(2, 6))
    extra = n_extra if n_extra is not None else int(rng.integers(1, 4))
    cols = tuple(SeriesKey.of(unit=f"u{j}") for j in range(m))
    rows = [TOTAL]
    entries = [rng.dirichlet(np.ones(m))]
    for i in range(extra - 1):
        # random subgroup of >= 1 members with exposure-like shares
        size = int(rng.integers(1, m + 1))
        idx = rng.choice(m, size=size, replace=False)
        row = np.zeros(m)
        row[idx] = rng.dirichlet(np.ones(size))
        rows.append(SeriesKey.of(group=f"g{i}"))
        entries.append(row)
    for j in range(m):
        row = np.zeros(m)
        row[j] = 1.0
        rows.append(cols[j])
        entries.append(row)
    s = SummingMatrix(
        row_keys=tuple(rows),
        col_keys=cols,
        entries=np.array(entries),
        year=2030,
        age_index=0,
        age=0.0,
    )
    return s


class TestOptimalCombination:
    def test_fixes_consistent_inputs_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            s = random_instance(rng)
            b = rng.uniform(0.001, 0.05, size=len(s.col_keys))
            all_vals = s.entries @ b
            base = BaseForecasts(
                horizon=1, values={k: [v] for k, v in zip(s.row_keys, all_vals)}
            )
            rec = optimal_combination(base, s, weighting="OLS")
            for k, want in zip(s.row_keys, all_vals):
                assert rec[k] == pytest.approx(want, abs=1e-10)

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            s = random_instance(rng)
            vals = rng.uniform(0.001, 0.05, size=len(s.row_keys))
            base = BaseForecasts(
                horizon=1, values={k: [v] for k, v in zip(s.row_keys, vals)}
            )
            once = optimal_combination(base, s, weighting="OLS")
            again = optimal_combination(
                BaseForecasts(horizon=1, values={k: [v] for k, v in once.items()}),
                s,
                weighting="OLS",
            )
            for k in s.row_keys:
                assert again[k] == pytest.approx(once[k], abs=1e-10)

    def test_result_is_aggregation_consistent(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            s = random_instance(rng)
            vals = rng.uniform(0.001, 0.05, size=len(s.row_keys))
            base = BaseForecasts(
                horizon=1, values={k: [v] for k, v in zip(s.row_keys, vals)}
            )
            rec = optimal_combination(base, s, weighting="OLS")
            bottom = np.array([rec[k] for k in s.col_keys])
            implied = s.entries @ bottom
            for k, want in zip(s.row_keys, implied):
                assert rec[k] == pytest.approx(want, abs=1e-10)

    def test_wls_equals_ols_under_equal_variances(self):
        rng = np.random.default_rng(4)
        s = random_instance(rng)
        vals = rng.uniform(0.001, 0.05, size=len(s.row_keys))
        var = {k: 2.5 for k in s.row_keys}
        base_w = BaseForecasts(
            horizon=1, values={k: [v] for k, v in zip(s.row_keys, vals)}, variances=var
        )
        base_o = BaseForecasts(
            horizon=1, values={k: [v] for k, v in zip(s.row_keys, vals)}
        )
        rec_w = optimal_combination(base_w, s, weighting="WLS")
        rec_o = optimal_combination(base_o, s, weighting="OLS")
        for k in s.row_keys:
            assert rec_w[k] == pytest.approx(rec_o[k], abs=1e-12)

    def test_wls_downweights_noisy_series(self):
        # huge variance on the total means its (wild) base forecast is ignored
        s = tiny_matrix(shares=(0.5, 0.5))
        t, a, b = s.row_keys
        vals = {t: [0.9], a: [0.02], b: [0.04]}
        var = {t: 1e12, a: 1.0, b: 1.0}
        rec = optimal_combination(
            BaseForecasts(horizon=1, values=vals, variances=var), s, weighting="WLS"
        )
        assert rec[a] == pytest.approx(0.02, abs=1e-6)
        assert rec[b] == pytest.approx(0.04, abs=1e-6)

    def test_wls_requires_positive_variances(self):
        s = tiny_matrix()
        t, a, b = s.row_keys
        vals = {t: [0.03], a: [0.02], b: [0.04]}
        with pytest.raises(NonPositiveVariance):
            optimal_combination(BaseForecasts(horizon=1, values=vals), s, "WLS")
        with pytest.raises(NonPositiveVariance):
            optimal_combination(
                BaseForecasts(
                    horizon=1, values=vals, variances={t: 0.0, a: 1.0, b: 1.0}
                ),
                s,
                "WLS",
            )

    def test_unknown_weighting(self):
        s = tiny_matrix()
        t, a, b = s.row_keys
        base = BaseForecasts(horizon=1, values={t: [0.03], a: [0.02], b: [0.04]})
        with pytest.raises(ValidationError):
            optimal_combination(base, s, weighting="GLS")


class TestBottomUpOptimalAgreement:
    def test_methods_coincide_on_s_generated_forecasts(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            s = random_instance(rng)
            b = rng.uniform(0.001, 0.05, size=len(s.col_keys))
            all_vals = s.entries @ b
            full = BaseForecasts(
                horizon=1, values={k: [v] for k, v in zip(s.row_keys, all_vals)}
            )
            bonly = BaseForecasts(
                horizon=1,
                values={k: [all_vals[s.row_index(k)]] for k in s.col_keys},
            )
            bu = bottom_up(bonly, s)
            oc = optimal_combination(full, s, weighting="OLS")
            for k in s.row_keys:
                assert bu[k] == pytest.approx(oc[k], abs=1e-10)


@pytest.fixture(scope="module")
def bigger():
    return make_dataset(seed=3, n_years=14, n_prefectures=2, n_regions=1)


class TestForecastSummingMatrices:
    def test_shapes_and_rows(self, bigger):
        mats = forecast_summing_matrices(bigger, h_max=3)
        assert len(mats) == 3
        assert len(mats[0]) == len(bigger.grid)
        s = mats[1][0]
        assert s.year == bigger.years[-1] + 2
        np.testing.assert_allclose(s.entries.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(s.entries >= 0.0) and np.all(s.entries <= 1.0)

    def test_identity_rows_untouched(self, bigger):
        mats = forecast_summing_matrices(bigger, h_max=2)
        s = mats[1][1]
        col_pos = {k: j for j, k in enumerate(s.col_keys)}
        for i, g in enumerate(s.row_keys):
            if g in col_pos:
                want = np.zeros(len(s.col_keys))
                want[col_pos[g]] = 1.0
                np.testing.assert_array_equal(s.entries[i], want)

    def test_constant_shares_forecast_exactly(self):
        # equal constant exposures: every ratio path is flat, forecasts exact
        ds = make_dataset(seed=4, n_years=12, n_prefectures=2, n_regions=1)
        exposure = {k: np.full_like(np.asarray(v), 1e4) for k, v in ds.exposure.items()}
        from gfts.domain import GroupedDataset

        flat = GroupedDataset(ds.scheme, ds.grid, ds.years, ds.deaths, exposure)
        mats = forecast_summing_matrices(flat, h_max=4)
        s = mats[3][0]
        total = s.entries[s.row_index(TOTAL)]
        np.testing.assert_allclose(total, 0.25, atol=1e-9)

    def test_single_horizon_helper_matches(self, bigger):
        a = forecast_summing_matrices(bigger, h_max=2)[1]
        b = forecast_summing_matrix(bigger, 2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.entries, y.entries)

    def test_needs_ten_years(self):
        ds = make_dataset(seed=5, n_years=8)
        with pytest.raises(SeriesTooShort):
            forecast_summing_matrices(ds, h_max=1)

    def test_threads_do_not_change_entries(self, bigger):
        one = forecast_summing_matrices(bigger, h_max=2, threads=1)
        two = forecast_summing_matrices(bigger, h_max=2, threads=2)
        for h in range(2):
            for z in range(len(bigger.grid)):
                np.testing.assert_array_equal(one[h][z].entries, two[h][z].entries)


class TestReconcileCurves:
    def test_assembles_one_value_per_age(self, dataset):
        mats = [build_summing_matrix(dataset, t=0, z=z) for z in range(3)]
        rng = np.random.default_rng(6)
        vals = {k: rng.uniform(0.001, 0.05, size=3) for k in mats[0].col_keys}
        base = BaseForecasts(horizon=1, values=vals)
        rec = reconcile_curves(base, mats, "bottom_up")
        assert set(rec) == set(mats[0].row_keys)
        for k in mats[0].col_keys:
            np.testing.assert_array_equal(rec[k], vals[k])
        # dataset-backed matrices differ by age, so each age was really used
        for z in range(3):
            exp = np.array([dataset.exposure[k][0, z] for k in mats[0].col_keys])
            want = float(np.array([vals[k][z] for k in mats[0].col_keys]) @ (exp / exp.sum()))
            assert rec[TOTAL][z] == pytest.approx(want, rel=1e-12)

    def test_unknown_method(self, dataset):
        mats = [build_summing_matrix(dataset, t=0, z=0)]
        vals = {k: [0.01] for k in mats[0].col_keys}
        with pytest.raises(ValidationError):
            reconcile_curves(BaseForecasts(horizon=1, values=vals), mats, "middle_out")
