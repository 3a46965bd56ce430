import numpy as np
import pytest

from gfts.arima import select_d
from gfts.domain import TOTAL, SeriesKey, members
from gfts.errors import ValidationError
from gfts.simulate import SimConfig, SimulationResult, generate, generate_with_truth


def small_config(**overrides):
    defaults = dict(
        n_years=6, ages=(0.0, 50.0, 100.0), n_regions=1,
        prefectures_per_region=2, seed=0,
    )
    defaults.update(overrides)
    return SimConfig(**defaults)


class TestSimConfig:
    def test_defaults_describe_the_standard_hierarchy(self):
        cfg = SimConfig()
        assert cfg.n_prefectures == 12
        assert cfg.sizes == (3, 3, 3, 3)

    def test_region_sizes_override_uniform_split(self):
        cfg = SimConfig(n_regions=8, region_sizes=(6, 6, 6, 6, 6, 6, 6, 5))
        assert cfg.n_prefectures == 47

    @pytest.mark.parametrize("bad", [
        dict(n_years=0),
        dict(n_regions=0),
        dict(prefectures_per_region=0),
        dict(n_regions=2, region_sizes=(3,)),
        dict(n_regions=2, region_sizes=(3, 0)),
        dict(k_volatility=-0.1),
        dict(noise_scale=-1e-9),
        dict(exposure_scale=0.0),
        dict(exposure_age_slope=1.2),
        dict(shocks=((1980, ("P01",), 0.0),)),
    ])
    def test_rejects_bad_values(self, bad):
        with pytest.raises(ValidationError):
            SimConfig(**bad)


class TestGenerate:
    def test_panel_shape(self):
        ds = generate(small_config())
        assert ds.years == tuple(range(1975, 1981))
        assert len(list(ds.scheme.bottom_keys())) == 4
        assert len(list(ds.all_keys())) == 1 + 2 + 1 + 2 + 2 + 4

    def test_default_hierarchy_has_51_series(self):
        ds = generate(SimConfig(n_years=2))
        assert len(list(ds.all_keys())) == 51
        prefs = sorted(ds.scheme.domains["prefecture"])
        assert prefs == [f"P{i:02d}" for i in range(1, 13)]

    def test_japan_sized_hierarchy_has_168_series(self):
        cfg = SimConfig(n_years=2, n_regions=8,
                        region_sizes=(6, 6, 6, 6, 6, 6, 6, 5))
        ds = generate(cfg)
        assert len(list(ds.scheme.bottom_keys())) == 94
        assert len(list(ds.all_keys())) == 168

    def test_same_seed_is_bitwise_reproducible(self):
        a = generate(small_config(seed=11))
        b = generate(small_config(seed=11))
        for key in a.scheme.bottom_keys():
            d1, e1 = a.counts(key)
            d2, e2 = b.counts(key)
            np.testing.assert_array_equal(d1, d2)
            np.testing.assert_array_equal(e1, e2)

    def test_different_seeds_differ(self):
        a = generate(small_config(seed=1))
        b = generate(small_config(seed=2))
        da, _ = a.counts(TOTAL)
        db, _ = b.counts(TOTAL)
        assert not np.array_equal(da, db)

    def test_aggregates_are_member_sums(self):
        ds = generate(small_config(seed=3))
        region = SeriesKey.of(region="R1")
        d_total, e_total = ds.counts(region)
        d_sum = sum(ds.counts(k)[0] for k in members(ds.scheme, region))
        e_sum = sum(ds.counts(k)[1] for k in members(ds.scheme, region))
        np.testing.assert_allclose(d_total, d_sum, rtol=1e-12)
        np.testing.assert_allclose(e_total, e_sum, rtol=1e-12)

    def test_exposures_positive_and_deaths_nonnegative(self):
        ds = generate(small_config(seed=4))
        for key in ds.scheme.bottom_keys():
            d, e = ds.counts(key)
            assert np.all(e > 0) and np.all(d >= 0)


class TestGenerateWithTruth:
    def test_result_carries_the_latent_state(self):
        res = generate_with_truth(small_config(seed=5))
        assert isinstance(res, SimulationResult)
        assert res.k_path.shape == (6,)
        assert res.k_path[0] == 0.0
        assert set(res.latent_log_rates) == set(res.dataset.scheme.bottom_keys())
        for x in res.latent_log_rates.values():
            assert x.shape == (6, 3)
            assert np.all(np.isfinite(x))

    def test_noise_free_latents_are_linear_in_time(self):
        res = generate_with_truth(
            small_config(seed=6, n_years=10, k_volatility=0.0, noise_scale=0.0)
        )
        for x in res.latent_log_rates.values():
            second_diff = np.diff(x, n=2, axis=0)
            np.testing.assert_allclose(second_diff, 0.0, atol=1e-12)

    def test_noise_free_sex_gap_is_exact(self):
        cfg = small_config(seed=7, noise_scale=0.0, sex_gap=0.5)
        res = generate_with_truth(cfg)
        male = res.latent_log_rates[SeriesKey.of(sex="male", prefecture="P01")]
        female = res.latent_log_rates[SeriesKey.of(sex="female", prefecture="P01")]
        np.testing.assert_allclose(male - female, 0.5, atol=1e-12)

    def test_shock_multiplies_one_year_of_one_prefecture(self):
        base_cfg = small_config(seed=8)
        shocked_cfg = small_config(seed=8, shocks=((1977, ("P01",), 2.0),))
        base = generate_with_truth(base_cfg).latent_log_rates
        shocked = generate_with_truth(shocked_cfg).latent_log_rates
        year_row = 1977 - 1975
        for key in base:
            delta = shocked[key] - base[key]
            if key.get("prefecture") == "P01":
                np.testing.assert_allclose(delta[year_row], np.log(2.0), atol=1e-12)
                mask = np.ones(6, dtype=bool)
                mask[year_row] = False
                np.testing.assert_array_equal(delta[mask], 0.0)
            else:
                np.testing.assert_array_equal(delta, 0.0)

    def test_shock_on_unknown_prefecture(self):
        with pytest.raises(ValidationError, match="unknown prefecture"):
            generate(small_config(shocks=((1977, ("P9",), 2.0),)))

    def test_zero_noise_keeps_streams_aligned(self):
        # turning noise off must not shift the death draws' random stream
        loud = generate_with_truth(small_config(seed=9, noise_scale=1e-12))
        quiet = generate_with_truth(small_config(seed=9, noise_scale=0.0))
        key = next(iter(loud.latent_log_rates))
        np.testing.assert_allclose(
            loud.latent_log_rates[key], quiet.latent_log_rates[key], atol=1e-9
        )

    def test_period_effect_is_first_order_integrated(self):
        hits = 0
        for seed in range(10):
            cfg = small_config(seed=seed, n_years=40)
            k = generate_with_truth(cfg).k_path
            hits += select_d(k) == 1
        assert hits >= 8
