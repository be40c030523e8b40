"""Simulation-study mechanics: sampling, replication records, aggregation."""

import numpy as np
import pytest

from lmeffects.montecarlo import (
    McConfig,
    Population,
    draw_two_samples,
    run_replication,
    run_study,
)
from lmeffects.tuning import HyperGrid

SMALL_GRID = HyperGrid(orders=(2, 3, 4))


def small_config(**overrides):
    settings = dict(
        sample_sizes=(100,),
        n_replications=20,
        n_pre_periods=4,
        n_boot=60,
        seed=3,
        grid=SMALL_GRID,
    )
    settings.update(overrides)
    return McConfig(**settings)


@pytest.fixture(scope="module")
def population():
    return Population.synthetic_mixture(size=5000, seed=1)


class TestPopulation:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Population(np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            Population(np.array([1.0, -2.0]))
        with pytest.raises(ValueError):
            Population(np.array([]))

    def test_synthetic_mixture_heavy_tail(self, population):
        vals = population.values
        assert population.size == 5000
        # the inflated-variance component should push the extreme quantile
        # far above the body
        assert np.quantile(vals, 0.999) / np.median(vals) > 10

    def test_from_csv_with_header(self, tmp_path):
        path = tmp_path / "pop.csv"
        path.write_text("value\n1.5\n2.5\n3.5\n")
        pop = Population.from_csv(path)
        np.testing.assert_array_equal(pop.values, [1.5, 2.5, 3.5])

    def test_from_csv_without_header(self, tmp_path):
        path = tmp_path / "pop.csv"
        path.write_text("1.0\n2.0\n")
        assert Population.from_csv(path).size == 2

    def test_from_csv_bad_line(self, tmp_path):
        path = tmp_path / "pop.csv"
        path.write_text("1.0\nbogus\n")
        with pytest.raises(ValueError, match="line 2"):
            Population.from_csv(path)


class TestDrawTwoSamples:
    def test_disjoint_halves(self, population):
        rng = np.random.default_rng(0)
        treated, control = draw_two_samples(population, 500, rng)
        assert treated.n == control.n == 250

    def test_exact_partition(self):
        pop = Population(np.arange(1.0, 11.0))
        treated, control = draw_two_samples(pop, 10, np.random.default_rng(0))
        combined = np.sort(np.concatenate([treated.values, control.values]))
        np.testing.assert_array_equal(combined, pop.values)

    def test_deterministic(self, population):
        a = draw_two_samples(population, 200, np.random.default_rng(7))
        b = draw_two_samples(population, 200, np.random.default_rng(7))
        np.testing.assert_array_equal(a[0].values, b[0].values)
        np.testing.assert_array_equal(a[1].values, b[1].values)

    def test_n_too_large(self, population):
        with pytest.raises(ValueError):
            draw_two_samples(population, population.size + 2, np.random.default_rng(0))

    def test_odd_n(self, population):
        with pytest.raises(ValueError):
            draw_two_samples(population, 11, np.random.default_rng(0))


class TestConfig:
    def test_odd_sample_size_rejected(self):
        with pytest.raises(ValueError):
            McConfig(sample_sizes=(101,))

    def test_unknown_estimator_rejected(self):
        with pytest.raises(ValueError):
            McConfig(estimators=("winsorised",))

    def test_bad_scale_rejected(self):
        with pytest.raises(ValueError):
            McConfig(scale="sqrt")

    def test_sample_size_versus_population(self, population):
        cfg = McConfig(sample_sizes=(10_000,))
        with pytest.raises(ValueError):
            cfg.validate_against(population)


class TestRunReplication:
    def test_diff_in_means_is_mean_difference(self, population):
        cfg = small_config(estimators=("diff_in_means",))
        rec = run_replication(population, 100, cfg, 0)["diff_in_means"]
        treated, control = draw_two_samples(
            population, 100, np.random.default_rng(
                np.random.SeedSequence((3, 100, 0, 0))
            )
        )
        assert rec.estimate == pytest.approx(
            treated.mean() - control.mean(), abs=1e-12
        )
        assert rec.ci_length == pytest.approx(2 * 1.959964 * rec.se, rel=1e-6)

    def test_constant_population(self):
        pop = Population(np.full(400, 7.0))
        cfg = small_config(estimators=("diff_in_means", "gmlm"))
        records = run_replication(pop, 100, cfg, 0)
        for rec in records.values():
            assert not rec.failed
            assert rec.estimate == 0.0
            assert rec.covers

    def test_gmlm_record_fields(self, population):
        cfg = small_config(estimators=("gmlm",))
        rec = run_replication(population, 100, cfg, 1)["gmlm"]
        assert not rec.failed
        assert rec.n_moments in (2, 3, 4)
        assert rec.j_reject in (True, False)
        assert rec.se > 0

    def test_logs_scale_matches_logged_values(self, population):
        cfg = small_config(estimators=("diff_in_means",), scale="logs")
        rec = run_replication(population, 100, cfg, 0)["diff_in_means"]
        treated, control = draw_two_samples(
            population, 100, np.random.default_rng(
                np.random.SeedSequence((3, 100, 0, 0))
            )
        )
        expected = np.log(treated.values).mean() - np.log(control.values).mean()
        assert rec.estimate == pytest.approx(expected, abs=1e-12)

    def test_trimmed_variant_runs(self, population):
        cfg = small_config(estimators=("gmlm_trim",), trim_upper=0.95)
        rec = run_replication(population, 100, cfg, 2)["gmlm_trim"]
        assert not rec.failed


class TestRunStudy:
    def test_zero_variance_population_metrics(self):
        pop = Population(np.full(300, 2.0))
        cfg = small_config(
            sample_sizes=(40,), n_replications=8, estimators=("diff_in_means", "gmlm")
        )
        table = run_study(pop, cfg)
        assert (table.rmse == 0).all()
        assert (table.mae == 0).all()
        assert (table.coverage == 1).all()

    def test_deterministic_given_seed(self, population):
        cfg = small_config(n_replications=6)
        a = run_study(population, cfg)
        b = run_study(population, small_config(n_replications=6))
        assert a.equals(b)

    def test_table_shape_and_columns(self, population):
        cfg = small_config(sample_sizes=(60, 100), n_replications=5)
        table = run_study(population, cfg)
        assert len(table) == 6  # 2 sizes x 3 estimators
        assert list(table.columns[:2]) == ["n_total", "estimator"]
        gm = table[table.estimator != "diff_in_means"]
        assert gm.median_n_moments.notna().all()
        assert gm.j_rejection.between(0, 1).all()

    def test_rmse_shrinks_with_sample_size(self, population):
        cfg = small_config(
            sample_sizes=(100, 400),
            n_replications=60,
            estimators=("gmlm",),
            n_boot=80,
        )
        table = run_study(population, cfg).set_index("n_total")
        assert table.loc[400, "rmse"] < table.loc[100, "rmse"]

    def test_failures_recorded_not_fatal(self):
        # two-value population: tiny samples often degenerate but the study
        # still aggregates
        pop = Population(np.array([1.0] * 150 + [5.0] * 2))
        cfg = small_config(
            sample_sizes=(6,), n_replications=10, estimators=("gmlm",),
            n_boot=60, grid=HyperGrid(orders=(2,)),
        )
        table = run_study(pop, cfg)
        assert (table.n_failed >= 0).all()
        assert (table.n_replications == 10).all()
