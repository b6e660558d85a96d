import json

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.interpolate import BSpline

from vitalseries.errors import InvalidConfig, RankDeficient
from vitalseries.fpca import (
    build_basis,
    curve_values,
    evaluate_basis,
    fit,
    l2_norm,
    model_to_dict,
    reconstruct,
    smooth,
    write_model_json,
    write_scores_csv,
)
from vitalseries.synthetic import rate_curve_sample

YEARS = np.arange(1911, 1974)


@pytest.fixture(scope="module")
def basis():
    return build_basis(1911, 1973)


# ------------------------------------------------------------------ #
# Basis construction
# ------------------------------------------------------------------ #


class TestBasis:
    def test_partition_of_unity(self, basis):
        x = np.linspace(1911, 1973, 777)
        phi = evaluate_basis(basis, x)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-10)

    def test_gram_symmetric_positive_definite(self, basis):
        np.testing.assert_allclose(basis.gram, basis.gram.T, atol=1e-15)
        assert np.linalg.eigvalsh(basis.gram).min() > 0

    def test_gram_matches_adaptive_quadrature(self, basis):
        # Independent oracle: scipy.integrate.quad on individual products.
        def phi_k(k):
            c = np.zeros(basis.num_basis)
            c[k] = 1.0
            return BSpline(basis.knots, c, basis.degree, extrapolate=False)

        for k, l in [(0, 0), (0, 1), (3, 5), (7, 7), (10, 11)]:
            fk, fl = phi_k(k), phi_k(l)
            val, _err = quad(
                lambda x: float(np.nan_to_num(fk(x)) * np.nan_to_num(fl(x))),
                1911, 1973, limit=200)
            assert basis.gram[k, l] == pytest.approx(val, abs=1e-9)

    def test_interior_knot_count(self, basis):
        interior = basis.knots[(basis.knots > 1911) & (basis.knots < 1973)]
        assert interior.size == basis.num_basis - basis.order

    def test_degenerate_single_constant_basis(self):
        b = build_basis(0.0, 1.0, num_basis=1, order=1)
        phi = evaluate_basis(b, [0.0, 0.3, 1.0])
        np.testing.assert_allclose(phi, 1.0)
        np.testing.assert_allclose(b.gram, [[1.0]], atol=1e-12)

    def test_invalid_config(self):
        with pytest.raises(InvalidConfig):
            build_basis(0, 1, num_basis=2, order=3)
        with pytest.raises(InvalidConfig):
            build_basis(5, 5)


# ------------------------------------------------------------------ #
# Smoothing
# ------------------------------------------------------------------ #


class TestSmooth:
    def test_constant_reproduced(self, basis):
        sc = smooth(YEARS, np.full(YEARS.size, 7.0), basis, "c")
        grid = np.linspace(1911, 1973, 301)
        np.testing.assert_allclose(curve_values(basis, sc.coefficients, grid),
                                   7.0, atol=1e-8)

    def test_quadratic_reproduced(self, basis):
        # quadratic splines reproduce quadratics exactly
        y = 2.0 + 0.3 * (YEARS - 1940) + 0.01 * (YEARS - 1940) ** 2
        sc = smooth(YEARS, y, basis, "q")
        grid = np.linspace(1911, 1973, 400)
        truth = 2.0 + 0.3 * (grid - 1940) + 0.01 * (grid - 1940) ** 2
        assert np.abs(curve_values(basis, sc.coefficients, grid) - truth).max() < 1e-6

    def test_missing_years_dropped(self, basis):
        y = np.full(YEARS.size, 3.0)
        y[10:15] = np.nan
        sc = smooth(YEARS, y, basis, "m")
        np.testing.assert_allclose(
            curve_values(basis, sc.coefficients, YEARS), 3.0, atol=1e-8)

    def test_too_few_points_rank_deficient(self, basis):
        with pytest.raises(RankDeficient):
            smooth(YEARS[:8], np.ones(8), basis, "few")

    def test_clustered_points_rank_deficient(self, basis):
        # enough points but all in one knot span
        years = np.linspace(1911, 1913, 20)
        with pytest.raises(RankDeficient):
            smooth(years, np.ones(20), basis, "clust")


# ------------------------------------------------------------------ #
# Component extraction
# ------------------------------------------------------------------ #


def rank1_curves(basis, d=60, seed=0, sd=5.0):
    rng = np.random.default_rng(seed)
    mean_curve = 100.0 - 1.2 * (YEARS - 1911)
    shape = np.sin((YEARS - 1911) / 62.0 * np.pi)
    out = []
    for j in range(d):
        a = rng.normal(0.0, sd)
        out.append(smooth(YEARS, mean_curve + a * shape, basis, f"d{j}"))
    return out


class TestFit:
    def test_rank1_structure_recovered(self, basis):
        curves = rank1_curves(basis)
        model = fit(curves, basis, 4)
        assert model.variance_explained[0] >= 0.999
        # recovered leading eigenfunction matches the generating shape up
        # to sign, in L2 distance
        shape = np.sin((YEARS - 1911) / 62.0 * np.pi)
        sc = smooth(YEARS, shape, basis, "shape")
        c = sc.coefficients / l2_norm(basis, sc.coefficients)
        b1 = model.eigenfunction_coefficients[0]
        dist = min(l2_norm(basis, b1 - c), l2_norm(basis, b1 + c))
        assert dist <= 1e-3

    def test_orthonormal_eigenfunctions(self, basis):
        years, values, ids = rate_curve_sample(80, seed=5)
        curves = [smooth(years, values[j], basis, ids[j]) for j in range(80)]
        model = fit(curves, basis, 6)
        B = model.eigenfunction_coefficients
        G = B @ basis.gram @ B.T
        np.testing.assert_allclose(G, np.eye(6), atol=1e-8)

    def test_identical_curves_zero_variance(self, basis):
        sc = smooth(YEARS, np.linspace(80, 20, YEARS.size), basis, "a")
        model = fit([sc, sc], basis, 2)
        np.testing.assert_allclose(model.eigenvalues, 0.0, atol=1e-10)
        np.testing.assert_allclose(model.scores, 0.0, atol=1e-6)

    def test_eigenvalues_descending(self, basis):
        years, values, ids = rate_curve_sample(60, seed=6)
        curves = [smooth(years, values[j], basis, ids[j]) for j in range(60)]
        model = fit(curves, basis, 8)
        assert np.all(np.diff(model.eigenvalues) <= 1e-12)
        assert model.variance_explained.sum() <= 1.0 + 1e-12

    def test_scores_uncorrelated(self, basis):
        years, values, ids = rate_curve_sample(100, seed=7)
        curves = [smooth(years, values[j], basis, ids[j]) for j in range(100)]
        model = fit(curves, basis, 4)
        cov = model.scores.T @ model.scores / 100.0
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() <= 1e-6 * model.eigenvalues[0]

    def test_scale_equivariance(self, basis):
        years, values, ids = rate_curve_sample(50, seed=8)
        c1 = [smooth(years, values[j], basis, ids[j]) for j in range(50)]
        c2 = [smooth(years, 3.0 * values[j], basis, ids[j]) for j in range(50)]
        m1 = fit(c1, basis, 3)
        m2 = fit(c2, basis, 3)
        np.testing.assert_allclose(m2.eigenvalues, 9.0 * m1.eigenvalues, rtol=1e-8)
        np.testing.assert_allclose(m2.scores, 3.0 * m1.scores, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(m2.eigenfunction_coefficients,
                                   m1.eigenfunction_coefficients, atol=1e-8)

    def test_repeated_fit_bit_stable(self, basis):
        years, values, ids = rate_curve_sample(40, seed=9)
        curves = [smooth(years, values[j], basis, ids[j]) for j in range(40)]
        m1 = fit(curves, basis, 4)
        m2 = fit(curves, basis, 4)
        assert np.array_equal(m1.eigenfunction_coefficients,
                              m2.eigenfunction_coefficients)
        assert np.array_equal(m1.scores, m2.scores)

    def test_synthetic_fixture_four_components_near_ninety_percent(self, basis):
        years, values, ids = rate_curve_sample(1500, seed=77)
        curves = [smooth(years, values[j], basis, ids[j]) for j in range(1500)]
        model = fit(curves, basis, 4)
        ve4 = model.variance_explained.sum()
        assert 0.80 <= ve4 <= 1.0
        assert ve4 == pytest.approx(0.90, abs=0.10)

    def test_preconditions(self, basis):
        sc = smooth(YEARS, np.ones(YEARS.size), basis, "x")
        with pytest.raises(InvalidConfig):
            fit([sc], basis, 2)
        with pytest.raises(InvalidConfig):
            fit([sc, sc], basis, 13)


@pytest.fixture(scope="module")
def full_model():
    basis = build_basis(1911, 1973)
    years, values, ids = rate_curve_sample(80, seed=10)
    curves = [smooth(years, values[j], basis, ids[j]) for j in range(80)]
    return basis, curves, fit(curves, basis, 12)


class TestReconstruct:

    def test_zero_components_is_mean(self, full_model):
        _, _, model = full_model
        np.testing.assert_allclose(reconstruct(model, 0, 0),
                                   model.mean_coefficients)

    def test_full_rank_reproduces_curve(self, full_model):
        _, curves, model = full_model
        for j in (0, 17, 42):
            np.testing.assert_allclose(reconstruct(model, j, 12),
                                       curves[j].coefficients, atol=1e-8)

    def test_error_monotone_in_components(self, full_model):
        basis, curves, model = full_model
        for j in (3, 33):
            errs = [l2_norm(basis, reconstruct(model, j, p) - curves[j].coefficients)
                    for p in range(13)]
            assert all(errs[p + 1] <= errs[p] + 1e-10 for p in range(12))

    def test_out_of_range(self, full_model):
        _, _, model = full_model
        with pytest.raises(IndexError):
            reconstruct(model, 0, 13)


class TestExport:
    def test_json_and_csv(self, basis, tmp_path):
        years, values, ids = rate_curve_sample(10, seed=11)
        curves = [smooth(years, values[j], basis, ids[j]) for j in range(10)]
        model = fit(curves, basis, 3)
        doc = model_to_dict(model)
        assert doc["basis"]["num_basis"] == 12
        assert len(doc["scores"]) == 10
        jpath = tmp_path / "model.json"
        write_model_json(model, jpath)
        loaded = json.load(open(jpath))
        assert loaded["eigenvalues"] == doc["eigenvalues"]
        cpath = tmp_path / "scores.csv"
        write_scores_csv(model, cpath)
        header = open(cpath).readline().strip().split(",")
        assert header == ["district_id", "f1", "f2", "f3"]
