"""Student-t prediction: interpolation, limits, intervals, batching."""

import numpy as np
import pytest
import scipy.stats

from gpemu import (
    CorrelationFamily,
    KernelSpec,
    PredictiveT,
    TrendBasis,
    build_correlation,
    build_gp_model,
    fit_gp,
    predict,
    predict_arrays,
    predict_batch,
    predictive_interval,
)

from conftest import dense_predict

MAT52 = CorrelationFamily("matern", 2.5)
PE2 = CorrelationFamily("power_exponential", 2.0)


def _model(rng, n=8, p=1, ranges=(0.6,), nugget=None, family=MAT52):
    design = rng.uniform(0, 1, size=(n, p))
    f = np.sin(2 * np.pi * design[:, 0]) + design.sum(axis=1)
    spec = KernelSpec("separable", (family,) * p, tuple(ranges), nugget=nugget)
    return build_gp_model(design, f, spec)


class TestInterpolation:
    def test_training_points_reproduced_without_nugget(self, rng):
        model = _model(rng)
        loc, scale2, clip = predict_arrays(model, model.design)
        assert np.max(np.abs(loc - model.outputs)) < 1e-8 * np.abs(model.outputs).max()
        assert np.all(scale2 < 1e-10 * model.sigma2_hat)
        # clipping events must vanish on well-conditioned instances
        assert np.all(clip == 0.0) or np.all(clip < 1e-12)

    def test_training_point_single_call(self, rng):
        model = _model(rng)
        pt = predict(model, model.design[3])
        assert pt.location == pytest.approx(model.outputs[3], abs=1e-9)
        assert pt.scale2 == pytest.approx(0.0, abs=1e-10 * model.sigma2_hat)
        assert pt.dof == model.dof


class TestFarField:
    def test_reverts_to_trend_with_hand_formula(self, rng):
        model = _model(rng, ranges=(0.5,), family=PE2)
        far = np.array([[1e6 * 0.5]])
        pt = predict(model, far[0])
        beta = model.gls.beta_hat[0]
        assert pt.location == pytest.approx(beta, rel=1e-10)
        # c** = 1 + (1' C^-1 1)^-1 exactly, per the explicit-inverse formula
        corr = build_correlation(model.kernel, model.design).values
        gram = np.ones(model.n_obs) @ np.linalg.inv(corr) @ np.ones(model.n_obs)
        expected_factor = 1.0 + 1.0 / gram
        assert pt.scale2 == pytest.approx(model.sigma2_hat * expected_factor, rel=1e-8)


class TestDenseOracle:
    def test_four_point_instance(self, rng):
        design = np.array([[0.0], [0.35], [0.6], [1.0]])
        f = np.array([0.2, -0.4, 0.9, 0.1])
        spec = KernelSpec("separable", (MAT52,), (0.7,))
        model = build_gp_model(design, f, spec)
        points = np.array([[0.15], [0.5], [0.85]])
        corr = build_correlation(spec, design).values
        from gpemu import cross_correlation

        cross = cross_correlation(spec, design, points)
        h = np.ones((4, 1))
        hx = np.ones((3, 1))
        loc_oracle, factor_oracle = dense_predict(corr, cross, h, hx, f)
        loc, scale2, _ = predict_arrays(model, points)
        assert np.allclose(loc, loc_oracle, rtol=1e-10)
        assert np.allclose(scale2, model.sigma2_hat * factor_oracle, rtol=1e-10)

    def test_with_nugget_and_linear_trend(self, rng):
        design = rng.uniform(0, 1, size=(5, 2))
        f = rng.normal(size=5)
        spec = KernelSpec("separable", (MAT52, PE2), (0.8, 1.0), nugget=0.2)
        basis = TrendBasis("linear")
        model = build_gp_model(design, f, spec, basis=basis)
        points = rng.uniform(0, 1, size=(4, 2))
        corr = build_correlation(spec, design).values
        from gpemu import cross_correlation

        cross = cross_correlation(spec, design, points)
        loc_oracle, factor_oracle = dense_predict(
            corr, cross, basis.matrix(design), basis.matrix(points), f
        )
        loc, scale2, _ = predict_arrays(model, points)
        assert np.allclose(loc, loc_oracle, rtol=1e-9)
        assert np.allclose(scale2, model.sigma2_hat * factor_oracle, rtol=1e-9)

    def test_include_noise_adds_nugget_to_self_correlation(self, rng):
        design = rng.uniform(0, 1, size=(5, 1))
        f = rng.normal(size=5)
        spec = KernelSpec("separable", (MAT52,), (0.7,), nugget=0.3)
        model = build_gp_model(design, f, spec)
        points = rng.uniform(0, 1, size=(3, 1))
        _, latent, _ = predict_arrays(model, points, include_noise=False)
        _, noisy, _ = predict_arrays(model, points, include_noise=True)
        assert np.allclose(noisy - latent, 0.3 * model.sigma2_hat, rtol=1e-9)


class TestBatchConsistency:
    def test_batch_of_one_equals_single_call(self, rng):
        model = _model(rng)
        x = np.array([0.37])
        single = predict(model, x)
        (batch,) = predict_batch(model, x.reshape(1, 1))
        assert batch == single

    def test_batch_matches_loop_of_singles_exactly(self, rng):
        model = _model(rng, n=10)
        points = rng.uniform(0, 1, size=(100, 1))
        batch = predict_batch(model, points)
        for i in range(100):
            single = predict(model, points[i])
            assert batch[i].location == single.location  # 0 ulp
            assert batch[i].scale2 == pytest.approx(single.scale2, rel=1e-12)

    def test_permuting_rows_permutes_results(self, rng):
        model = _model(rng)
        points = rng.uniform(0, 1, size=(6, 1))
        perm = rng.permutation(6)
        base = predict_batch(model, points)
        shuffled = predict_batch(model, points[perm])
        for i, j in enumerate(perm):
            assert shuffled[i] == base[j]

    def test_dimension_mismatch_rejected(self, rng):
        from gpemu import ValidationError

        model = _model(rng)
        with pytest.raises(ValidationError):
            predict(model, np.array([0.1, 0.2]))


class TestIntervals:
    def test_tiny_level_collapses_to_location(self):
        pt = PredictiveT(location=1.5, scale2=4.0, dof=7)
        lo, hi = predictive_interval(pt, 1e-12)
        assert lo == pytest.approx(1.5, abs=1e-9)
        assert hi == pytest.approx(1.5, abs=1e-9)

    def test_dof_eleven_half_width(self):
        pt = PredictiveT(location=0.0, scale2=1.0, dof=11)
        lo, hi = predictive_interval(pt, 0.95)
        expected = scipy.stats.t.ppf(0.975, 11)
        assert hi == pytest.approx(expected, abs=1e-12)
        assert abs(expected - 2.201) < 1e-3
        assert lo == -hi

    def test_zero_scale_zero_width(self):
        pt = PredictiveT(location=2.0, scale2=0.0, dof=5)
        assert predictive_interval(pt, 0.95) == (2.0, 2.0)

    def test_level_domain(self):
        from gpemu import ValidationError

        pt = PredictiveT(location=0.0, scale2=1.0, dof=3)
        with pytest.raises(ValidationError):
            predictive_interval(pt, 1.0)


class TestDofContract:
    def test_dof_is_n_minus_q_for_any_kernel(self, rng):
        design = rng.uniform(0, 1, size=(9, 2))
        f = rng.normal(size=9) + design[:, 0]
        for basis, q in [(TrendBasis("constant"), 1), (TrendBasis("linear"), 3)]:
            spec = KernelSpec("separable", (MAT52, MAT52), (0.8, 0.9))
            model = build_gp_model(design, f, spec, basis=basis)
            pt = predict(model, rng.uniform(0, 1, size=2))
            assert pt.dof == 9 - q

    def test_fitted_model_prediction_carries_dof(self):
        design = np.linspace(0, 1, 12).reshape(-1, 1)
        f = np.sin(2 * np.pi * design[:, 0])
        model, _ = fit_gp(design, f, MAT52)
        assert predict(model, [0.5]).dof == 11


class TestClipLogging:
    def test_clip_reported_and_scale_nonnegative(self, rng):
        # near-duplicate points at a long range force roundoff-negative
        # conditional variance at the training sites
        design = np.array([[0.0], [1e-9], [0.5], [1.0]])
        f = np.array([0.1, 0.1, 0.8, -0.3])
        spec = KernelSpec("separable", (PE2,), (5.0,))
        model = build_gp_model(design, f, spec)
        loc, scale2, clip = predict_arrays(model, design)
        assert np.all(scale2 >= 0)
        assert np.all(clip >= 0)


class TestOtherBasesAndModes:
    def test_custom_trend_basis_fit_and_predict(self, rng):
        from gpemu import fit_gp

        design = np.linspace(0, 1, 14).reshape(-1, 1)
        f = 1.5 + np.sin(2 * np.pi * design[:, 0]) ** 2
        basis = TrendBasis("custom", functions=(lambda x: 1.0, lambda x: float(np.sin(x[0]))))
        model, _ = fit_gp(design, f, MAT52, basis=basis)
        loc, scale2, _ = predict_arrays(model, design)
        assert np.max(np.abs(loc - f)) < 1e-7 * np.abs(f).max()
        assert predict(model, [0.4]).dof == 12

    def test_isotropic_model_interpolates(self, rng):
        from gpemu import fit_gp

        design = rng.uniform(0, 1, size=(12, 2))
        f = np.sin(2 * np.pi * design[:, 0]) + np.cos(np.pi * design[:, 1])
        model, _ = fit_gp(design, f, MAT52, mode="isotropic")
        assert len(model.kernel.ranges) == 1
        loc, _, _ = predict_arrays(model, design)
        assert np.max(np.abs(loc - f)) < 1e-7 * np.abs(f).max()

    def test_mixed_families_across_dimensions(self, rng):
        from gpemu import CorrelationFamily, fit_gp

        design = rng.uniform(0, 1, size=(15, 2))
        f = np.sin(2 * np.pi * design[:, 0]) + design[:, 1] ** 2
        families = (CorrelationFamily("matern", 2.5), CorrelationFamily("power_exponential", 1.9))
        model, report = fit_gp(design, f, families)
        assert model.kernel.families == families
        loc, _, _ = predict_arrays(model, design)
        assert np.max(np.abs(loc - f)) < 1e-7 * np.abs(f).max()

    def test_linear_trend_far_field_extrapolates_trend(self, rng):
        design = rng.uniform(0, 1, size=(8, 1))
        f = 2.0 + 3.0 * design[:, 0] + 0.1 * np.sin(8 * design[:, 0])
        spec = KernelSpec("separable", (PE2,), (0.4,))
        basis = TrendBasis("linear")
        model = build_gp_model(design, f, spec, basis=basis)
        far = np.array([[2000.0]])
        pt = predict(model, far[0])
        beta = model.gls.beta_hat
        assert pt.location == pytest.approx(beta[0] + beta[1] * 2000.0, rel=1e-8)
