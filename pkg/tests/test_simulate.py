import numpy as np
import pytest

from vitalseries import simulate
from vitalseries.simulate import (
    ScenarioConfig,
    StudyResult,
    format_study_table,
    generate,
    null_config,
    run_study,
    run_table,
    sample_negative_binomial,
    substream,
    write_study_csv,
)


class TestNegativeBinomial:
    def test_mean_and_closed_form_variance(self):
        rng = np.random.default_rng(1)
        draws = sample_negative_binomial(np.full(100_000, 20.0), 4.0, rng)
        assert draws.mean() == pytest.approx(20.0, rel=0.02)
        # Var = mu + mu^2/k = 20 + 400/4 = 120
        assert draws.var() == pytest.approx(120.0, rel=0.03)

    def test_variance_mean5_k1(self):
        rng = np.random.default_rng(2)
        draws = sample_negative_binomial(np.full(100_000, 5.0), 1.0, rng)
        assert draws.var() == pytest.approx(30.0, rel=0.03)

    def test_poisson_limit(self):
        rng = np.random.default_rng(3)
        draws = sample_negative_binomial(np.full(100_000, 9.0), 1e9, rng)
        assert draws.mean() == pytest.approx(9.0, rel=0.01)
        assert draws.var() == pytest.approx(9.0, rel=0.01)

    def test_mass_at_zero_matches_exact_pmf(self):
        # p0 = (k / (k + mu))**k
        mu, k = 0.01, 2.0
        p0 = (k / (k + mu)) ** k
        rng = np.random.default_rng(4)
        draws = sample_negative_binomial(np.full(100_000, mu), k, rng)
        frac0 = (draws == 0).mean()
        assert frac0 >= 0.989
        assert frac0 == pytest.approx(p0, abs=0.002)

    def test_rejects_bad_parameters(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            sample_negative_binomial(0.0, 1.0, rng)
        with pytest.raises(ValueError):
            sample_negative_binomial(1.0, 0.0, rng)


class TestGenerate:
    def test_reproduces_documented_draw_order_scenario1(self):
        cfg = ScenarioConfig(1, tau=25, change_factor=0.5, seed=9)
        series, true_tau = generate(cfg, 3)
        rng = substream(cfg, 3)
        a = rng.uniform(2, 4)
        b = rng.uniform(-0.025, 0.025)
        t = np.arange(1, 201)
        mu = np.exp(np.where(t > 25, a * 0.5 + b * t, a + b * t))
        np.testing.assert_array_equal(series.counts, rng.poisson(mu))
        assert true_tau == 25

    def test_factor_one_collapses_case_split(self):
        cfg = ScenarioConfig(1, tau=25, change_factor=1.0, seed=9)
        series, _ = generate(cfg, 0)
        rng = substream(cfg, 0)
        a = rng.uniform(2, 4)
        b = rng.uniform(-0.025, 0.025)
        t = np.arange(1, 201)
        np.testing.assert_array_equal(series.counts, rng.poisson(np.exp(a + b * t)))

    def test_scenario2_changes_trend(self):
        cfg = ScenarioConfig(2, tau=100, change_factor=1.5, seed=9)
        series, _ = generate(cfg, 1)
        rng = substream(cfg, 1)
        a = rng.uniform(2, 4)
        b = rng.uniform(-0.025, 0.025)
        t = np.arange(1, 201)
        mu = np.exp(np.where(t > 100, a + b * 1.5 * t, a + b * t))
        np.testing.assert_array_equal(series.counts, rng.poisson(mu))

    def test_scenario3_negative_binomial_draws(self):
        cfg = ScenarioConfig(3, tau=25, change_factor=0.8, seed=9)
        series, _ = generate(cfg, 2)
        rng = substream(cfg, 2)
        a = rng.uniform(2, 4)
        b = rng.uniform(-0.015, 0.015)
        t = np.arange(1, 201)
        mu = np.exp(np.where(t > 25, a * 0.8 + b * t, a + b * t))
        k = rng.uniform(1, 10)
        expect = rng.poisson(rng.gamma(shape=k, scale=mu / k))
        np.testing.assert_array_equal(series.counts, expect)

    def test_scenario4_has_no_trend(self):
        cfg = ScenarioConfig(4, tau=150, change_factor=1.2, seed=9)
        series, _ = generate(cfg, 5)
        rng = substream(cfg, 5)
        a = rng.uniform(2, 4)
        t = np.arange(1, 201)
        mu = np.exp(np.where(t > 150, a * 1.2, a))
        np.testing.assert_array_equal(series.counts, rng.poisson(mu))

    def test_segment_means_match_generator_formula(self, monkeypatch):
        # Pin alpha = 3, beta = 0: segment means converge to e^3 and e^6.
        monkeypatch.setattr(simulate, "ALPHA_RANGE", (3.0, 3.0))
        monkeypatch.setattr(simulate, "BETA_RANGE", (0.0, 0.0))
        cfg = ScenarioConfig(1, n=200, tau=100, change_factor=2.0, seed=77)
        pre, post = [], []
        for rep in range(100):
            series, _ = generate(cfg, rep)
            pre.append(series.counts[:100])
            post.append(series.counts[100:])
        assert np.mean(pre) == pytest.approx(np.exp(3.0), rel=0.05)
        assert np.mean(post) == pytest.approx(np.exp(6.0), rel=0.05)

    def test_determinism(self):
        cfg = ScenarioConfig(3, tau=150, change_factor=1.5, seed=123)
        s1, _ = generate(cfg, 11)
        s2, _ = generate(cfg, 11)
        np.testing.assert_array_equal(s1.counts, s2.counts)
        s3, _ = generate(cfg, 12)
        assert not np.array_equal(s1.counts, s3.counts)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ScenarioConfig(5)
        with pytest.raises(ValueError):
            ScenarioConfig(1, n=100, tau=100)


class TestRunStudy:
    def test_accuracy_below_tpr_and_determinism(self):
        cfg = ScenarioConfig(1, tau=25, change_factor=0.8, reps=60, seed=5)
        r1 = run_study(cfg, threshold=11.0)
        r2 = run_study(cfg, threshold=11.0)
        assert r1 == r2
        assert r1.accuracy_pct <= r1.tpr_pct
        assert r1.reps == 60 and r1.n_failures == 0

    def test_zero_reps_vacuous(self):
        cfg = ScenarioConfig(1, tau=25, change_factor=0.8, reps=0, seed=5)
        r = run_study(cfg, threshold=10.0)
        assert r.reps == 0
        assert np.isnan(r.accuracy_pct) and np.isnan(r.tpr_pct)

    def test_null_config_resets_factor(self):
        cfg = ScenarioConfig(2, tau=25, change_factor=0.5, reps=10, seed=5)
        assert null_config(cfg).change_factor == 1.0

    def test_strong_change_detected(self):
        cfg = ScenarioConfig(1, tau=100, change_factor=0.5, reps=40, seed=6)
        r = run_study(cfg, threshold=11.0)
        assert r.tpr_pct >= 95.0
        assert r.accuracy_pct >= 90.0


class TestTableOutput:
    def test_csv_and_text(self, tmp_path):
        results = [
            StudyResult(1, 1, 25, 0.5, 100, 10.5, 99.0, 100.0),
            StudyResult(1, 1, 150, 0.5, 100, 10.5, 93.0, 96.0),
        ]
        path = tmp_path / "study.csv"
        write_study_csv(results, path)
        text = open(path).read()
        assert "accuracy_pct" in text and "99.0" in text
        table = format_study_table(results)
        assert "Method 1" in table
        assert "99.0" in table and "93.0" in table

    def test_run_table_small(self):
        results = run_table(4, taus=[25], factors=[0.5], reps=25, seed=4,
                            methods=(1, 2), calibration_reps=100)
        assert len(results) == 2
        assert {r.method for r in results} == {1, 2}
        # identical thresholds within a method across cells by construction
        for r in results:
            assert r.threshold > 0
