"""Reference and jr priors, and the Fisher information they build on."""

import math

import numpy as np
import pytest
import scipy.stats

from gpemu import (
    CorrelationFamily,
    KernelSpec,
    PriorSpec,
    ValidationError,
    build_correlation,
    build_correlation_grads,
    default_jr_weights,
    fisher_info,
    grad_log_jr_prior,
    log_jr_prior,
    log_prior,
    log_reference_prior,
    materialize_prior,
)

from conftest import dense_q_matrix

MAT52 = CorrelationFamily("matern", 2.5)
PE1 = CorrelationFamily("power_exponential", 1.0)
PE2 = CorrelationFamily("power_exponential", 2.0)


def _spec(p, ranges, nugget=None, family=MAT52):
    return KernelSpec("separable", (family,) * p, tuple(ranges), nugget=nugget)


class TestPriorSpec:
    def test_variants_validated(self):
        with pytest.raises(ValidationError):
            PriorSpec("jeffreys")

    def test_jr_weight_positivity(self):
        with pytest.raises(ValidationError):
            PriorSpec("jr", weights=(1.0, -1.0))

    def test_b1_hard_bound(self):
        with pytest.raises(ValidationError):
            PriorSpec("jr", b1=-3.5, weights=(1.0, 1.0))

    def test_b1_warning_band(self):
        with pytest.warns(UserWarning):
            PriorSpec("jr", b1=-2.5, weights=(1.0, 1.0))

    def test_default_weights_scale_with_design(self):
        design = np.array([[0.0, 0.0], [2.0, 10.0], [1.0, 5.0], [0.5, 2.0]])
        weights = default_jr_weights(design, include_nugget=True)
        n, p = 4, 2
        assert weights[0] == pytest.approx(n ** (-1 / p) * 2.0)
        assert weights[1] == pytest.approx(n ** (-1 / p) * 10.0)
        assert weights[2] == 1.0

    def test_materialize_fills_weights_once(self):
        design = np.linspace(0, 1, 5).reshape(-1, 1)
        prior = materialize_prior(PriorSpec("jr"), design, include_nugget=False)
        assert prior.weights is not None
        again = materialize_prior(prior, design * 100, include_nugget=False)
        assert again.weights == prior.weights


class TestFisherInfo:
    def test_top_left_entry_is_dof(self, rng):
        design = rng.uniform(0, 1, size=(7, 2))
        info = fisher_info(_spec(2, (0.8, 1.2)), design)
        assert info.matrix[0, 0] == 6.0
        assert info.matrix.shape == (3, 3)

    def test_nugget_extends_dimension(self, rng):
        design = rng.uniform(0, 1, size=(6, 2))
        info = fisher_info(_spec(2, (0.8, 1.2), nugget=0.1), design)
        assert info.matrix.shape == (4, 4)
        assert len(info.w_matrices) == 3

    def test_degenerate_basis_rejected(self):
        design = np.array([[0.0]])
        with pytest.raises(ValidationError, match="vacuous"):
            fisher_info(_spec(1, (1.0,)), design)

    def test_symmetric_as_returned(self, rng):
        design = rng.uniform(0, 1, size=(6, 2))
        info = fisher_info(_spec(2, (0.5, 1.5)), design)
        assert np.array_equal(info.matrix, info.matrix.T)

    def test_asymmetry_before_symmetrization_is_numerically_tiny(self, rng):
        design = np.linspace(0, 1, 6).reshape(-1, 1)
        info = fisher_info(_spec(1, (0.7,)), design)
        (w,) = info.w_matrices
        assert abs(np.trace(w @ w) - (w * w.T).sum()) < 1e-8

    def test_traces_match_dense_oracle(self, rng):
        design = np.linspace(0, 1, 5).reshape(-1, 1)
        spec = _spec(1, (0.6,))
        corr = build_correlation(spec, design).values
        grads = build_correlation_grads(spec, design)
        h = np.ones((5, 1))
        q_dense = dense_q_matrix(corr, h)
        w_dense = grads[0] @ q_dense
        info = fisher_info(spec, design)
        assert info.matrix[0, 1] == pytest.approx(np.trace(w_dense), rel=1e-9)
        assert info.matrix[1, 1] == pytest.approx(np.trace(w_dense @ w_dense), rel=1e-9)

    def test_two_dim_dense_oracle(self, rng):
        design = rng.uniform(0, 1, size=(6, 2))
        spec = _spec(2, (0.9, 1.3), family=PE2)
        corr = build_correlation(spec, design).values
        grads = build_correlation_grads(spec, design)
        h = np.ones((6, 1))
        q_dense = dense_q_matrix(corr, h)
        expected = np.empty((3, 3))
        expected[0, 0] = 5.0
        w = [g @ q_dense for g in grads]
        for a in range(2):
            expected[0, 1 + a] = expected[1 + a, 0] = np.trace(w[a])
            for b in range(2):
                expected[1 + a, 1 + b] = np.trace(w[a] @ w[b])
        info = fisher_info(spec, design)
        assert np.allclose(info.matrix, expected, rtol=1e-9, atol=1e-9)


class TestReferencePrior:
    def test_decreasing_tail_in_range(self):
        # large ranges drive the correlation toward all-ones; the prior must
        # decay there so posterior modes stay interior
        design = np.linspace(0, 1, 8).reshape(-1, 1)
        values = [
            log_reference_prior(_spec(1, (r,), family=PE1), design)
            for r in (1.0, 10.0, 100.0, 1000.0, 10000.0)
        ]
        assert values[1] > values[2] > values[3] > values[4]

    def test_permutation_invariance(self, rng):
        design = rng.uniform(0, 1, size=(7, 2))
        spec = _spec(2, (0.8, 1.1))
        base = log_reference_prior(spec, design)
        perm = rng.permutation(7)
        assert log_reference_prior(spec, design[perm]) == pytest.approx(base, abs=1e-10)

    def test_output_independence(self, rng):
        # the reference prior sees only design, basis, and kernel
        design = rng.uniform(0, 1, size=(6, 1))
        spec = _spec(1, (0.9,))
        assert log_reference_prior(spec, design) == log_reference_prior(spec, design.copy())

    def test_half_logdet_against_dense(self, rng):
        design = np.linspace(0, 2, 6).reshape(-1, 1)
        spec = _spec(1, (0.8,))
        info = fisher_info(spec, design)
        expected = 0.5 * np.linalg.slogdet(info.matrix)[1]
        assert log_reference_prior(spec, design) == pytest.approx(expected, rel=1e-10)


class TestJrPrior:
    def test_unit_weight_exponential_reduction(self):
        prior = PriorSpec("jr", b1=0.0, b2=1.5, weights=(1.0,))
        diff = log_jr_prior(prior, [2.0]) - log_jr_prior(prior, [1.0])
        assert diff == pytest.approx(-1.5, rel=1e-12)

    def test_weight_scaling_invariance(self):
        prior_a = PriorSpec("jr", b1=0.3, b2=2.0, weights=(0.5, 1.5))
        prior_b = PriorSpec("jr", b1=0.3, b2=2.0, weights=(1.5, 4.5))
        inv_ranges = np.array([0.7, 2.2])
        assert log_jr_prior(prior_a, inv_ranges) == pytest.approx(
            log_jr_prior(prior_b, inv_ranges / 3.0), rel=1e-12
        )

    def test_gamma_reduction_in_one_dimension(self):
        prior = PriorSpec("jr", b1=0.4, b2=1.3, weights=(0.8,))
        shape, rate = prior.b1 + 1.0, prior.b2 * 0.8
        for a, b in [(0.5, 1.7), (2.0, 3.0)]:
            ours = log_jr_prior(prior, [a]) - log_jr_prior(prior, [b])
            gamma = scipy.stats.gamma.logpdf(a, shape, scale=1 / rate) - scipy.stats.gamma.logpdf(
                b, shape, scale=1 / rate
            )
            assert ours == pytest.approx(gamma, rel=1e-10)

    def test_gradient_matches_finite_difference(self):
        prior = PriorSpec("jr", b1=0.2, b2=1.0, weights=(0.7, 1.1, 2.0))
        z = np.array([0.1, -0.5, 0.9])

        def value(zv):
            return log_jr_prior(prior, np.exp(zv))

        grad = grad_log_jr_prior(prior, np.exp(z))
        for i in range(3):
            step = 1e-6
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            fd = (value(zp) - value(zm)) / (2 * step)
            assert grad[i] == pytest.approx(fd, rel=1e-7)

    def test_gradient_with_nugget_slot(self):
        prior = PriorSpec("jr", b1=0.2, b2=1.0, weights=(0.7, 1.0))
        z = np.array([0.3, math.log(0.05)])

        def value(zv):
            return log_jr_prior(prior, np.exp(zv[:1]), nugget=math.exp(zv[1]))

        grad = grad_log_jr_prior(prior, np.exp(z[:1]), nugget=math.exp(z[1]))
        for i in range(2):
            step = 1e-6
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            fd = (value(zp) - value(zm)) / (2 * step)
            assert grad[i] == pytest.approx(fd, rel=1e-7)

    def test_domain_error_on_nonpositive(self):
        prior = PriorSpec("jr", weights=(1.0,))
        with pytest.raises(ValidationError):
            log_jr_prior(prior, [0.0])

    def test_weight_count_mismatch(self):
        prior = PriorSpec("jr", weights=(1.0,))
        with pytest.raises(ValidationError):
            log_jr_prior(prior, [1.0, 2.0])


class TestLogPriorDispatch:
    def test_flat_contributes_zero(self):
        assert log_prior(PriorSpec("flat"), _spec(1, (1.0,))) == 0.0

    def test_reference_one_point_rejected(self):
        with pytest.raises(ValidationError):
            log_prior(PriorSpec("reference"), _spec(1, (1.0,)), design=np.array([[0.0]]))

    def test_jr_accepts_nugget_slot(self):
        design = np.linspace(0, 1, 5).reshape(-1, 1)
        spec = _spec(1, (0.5,), nugget=0.1)
        prior = PriorSpec("jr", weights=(1.0, 1.0))
        value = log_prior(prior, spec, design=design)
        expected = log_jr_prior(prior, [2.0], nugget=0.1)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_jr_materializes_defaults_on_the_fly(self):
        design = np.linspace(0, 1, 5).reshape(-1, 1)
        spec = _spec(1, (0.5,))
        value = log_prior(PriorSpec("jr"), spec, design=design)
        weights = default_jr_weights(design, include_nugget=False)
        expected = log_jr_prior(PriorSpec("jr", weights=weights), [2.0])
        assert value == pytest.approx(expected, rel=1e-12)

    def test_fixed_nugget_excluded_when_not_free(self):
        design = np.linspace(0, 1, 5).reshape(-1, 1)
        spec = _spec(1, (0.5,), nugget=0.1)
        prior = PriorSpec("jr", weights=(1.0,))
        value = log_prior(prior, spec, design=design, include_nugget=False)
        assert value == pytest.approx(log_jr_prior(prior, [2.0]), rel=1e-12)


class TestPosteriorBoundary:
    @pytest.mark.parametrize("variant", ["reference", "jr"])
    def test_log_posterior_decays_both_ways(self, rng, variant):
        # marginal likelihood plus a non-flat prior has an interior mode along
        # each coordinate scan on a generic design
        from gpemu import log_marginal_likelihood

        design = np.linspace(0, 1, 9).reshape(-1, 1)
        f = np.sin(2 * np.pi * design[:, 0]) + 0.1 * rng.normal(size=9)
        prior = materialize_prior(PriorSpec(variant), design, include_nugget=False)

        def objective(z):
            spec = _spec(1, (math.exp(-z),))
            return log_marginal_likelihood(spec, design, f) + log_prior(
                prior, spec, design=design
            )

        grid = np.linspace(-6.5, 6.5, 27)
        values = np.array([objective(z) for z in grid])
        interior = np.argmax(values)
        assert 0 < interior < len(grid) - 1
        assert values[interior] > values[0] + 1.0
        assert values[interior] > values[-1] + 1.0


class TestTrendFreeFisher:
    def test_top_left_is_n_without_basis(self, rng):
        design = np.linspace(0, 1, 6).reshape(-1, 1)
        info = fisher_info(_spec(1, (0.5,), nugget=0.1), design, basis=None)
        assert info.matrix[0, 0] == 6.0
        assert info.matrix.shape == (3, 3)

    def test_trend_free_q_matrix_is_plain_inverse(self, rng):
        design = np.linspace(0, 1, 5).reshape(-1, 1)
        spec = _spec(1, (0.7,))
        corr = build_correlation(spec, design).values
        grads = build_correlation_grads(spec, design)
        w_dense = grads[0] @ np.linalg.inv(corr)
        info = fisher_info(spec, design, basis=None)
        assert info.matrix[0, 1] == pytest.approx(np.trace(w_dense), rel=1e-9)
        assert info.matrix[1, 1] == pytest.approx(np.trace(w_dense @ w_dense), rel=1e-9)

    def test_reference_prior_without_basis_decays_in_tail(self):
        design = np.linspace(0, 1, 8).reshape(-1, 1)
        values = [
            log_reference_prior(_spec(1, (r,), family=PE1, nugget=0.1), design, basis=None)
            for r in (10.0, 100.0, 1000.0)
        ]
        assert values[0] > values[1] > values[2]
