import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from .gaussian import (
    ConstraintSet,
    DegenerateConstraintError,
    NominalGaussian,
    NonFiniteInputError,
    SlackDeviationError,
    StdNormal,
    TailUnderflowError,
    _conditional_from_uniform,
    nominal_logpdf,
    nominal_logpdf_batch,
    sample_conditional,
    sample_conditional_batch,
    tail_probability,
)
from .mixture import (
    ConstraintNotViolatedError,
    EstimatorState,
    MixtureWeights,
    VacuousPolytopeError,
    analytic_probability,
    batch_state,
    density_ratio,
    density_ratio_batch,
    estimate_with_schedule,
    floor_projection,
    sample_mixture,
    sample_mixture_batch,
    union_bounds,
    update_estimate,
    update_estimate_batch,
)
from .optimizer import (
    ObjectiveKind,
    OptimizerState,
    batch_gradient_kl,
    batch_gradient_var,
    kl_surrogate,
    mirror_step,
    run_adaptive,
    step_size,
    stochastic_gradient_kl,
    stochastic_gradient_var,
    var_surrogate,
)
from .streams import make_stream

STANDARD_2D = NominalGaussian.standard(2)
PHI_BAR_2 = float(stats.norm.sf(2.0))
ORTHOGONAL_PI = 2 * PHI_BAR_2 - PHI_BAR_2**2


def constraint_set(rows, g=STANDARD_2D):
    return ConstraintSet.from_constraints(
        tail_probability(g, omega, b, index=k, label=f"c{k}") for k, (omega, b) in enumerate(rows)
    )


def orthogonal_pair(b=2.0):
    return constraint_set([((1.0, 0.0), b), ((0.0, 1.0), b)])


class StreamTests(SimpleTestCase):
    def test_same_key_same_stream(self):
        a = make_stream(7, "benchmark", "regular:360:6", 3).random(5)
        b = make_stream(7, "benchmark", "regular:360:6", 3).random(5)
        assert_array_equal(a, b)

    def test_different_keys_differ(self):
        a = make_stream(7, "md-var").random(5)
        b = make_stream(7, "md-kl").random(5)
        self.assertFalse(np.array_equal(a, b))

    def test_seed_is_validated(self):
        for seed in (-1, 1.5, True, None):
            with self.assertRaises(ValueError):
                make_stream(seed)


class TailProbabilityTests(SimpleTestCase):
    def test_symmetric_half_plane(self):
        c = tail_probability(STANDARD_2D, (1.0, 0.0), 0.0)
        self.assertEqual(c.tail_prob, 0.5)
        self.assertEqual(c.beta, 0.0)

    def test_three_sigma_tail(self):
        c = tail_probability(STANDARD_2D, (1.0, 0.0), 3.0)
        self.assertAlmostEqual(c.tail_prob / 1.349898031630095e-3, 1.0, places=9)

    def test_shifted_mean(self):
        g = NominalGaussian(mu=np.array([5.0, 0.0]), Sigma=np.eye(2))
        c = tail_probability(g, (1.0, 0.0), 3.0)
        self.assertAlmostEqual(c.tail_prob, 0.9772498680518208, places=12)
        self.assertAlmostEqual(c.beta, -2.0)

    def test_scaling_row_keeps_probability(self):
        g = NominalGaussian(mu=np.array([0.3, -0.2]), Sigma=np.array([[2.0, 0.5], [0.5, 1.0]]))
        base = tail_probability(g, (1.0, 2.0), 1.5)
        scaled = tail_probability(g, (3.0, 6.0), 4.5)
        self.assertAlmostEqual(base.tail_prob, scaled.tail_prob, places=14)
        assert_allclose(base.omega_bar, scaled.omega_bar, atol=1e-14)

    def test_deep_tail_stays_positive(self):
        c = tail_probability(STANDARD_2D, (1.0, 0.0), 30.0)
        self.assertGreater(c.tail_prob, 0.0)
        self.assertAlmostEqual(c.log_tail, float(stats.norm.logsf(30.0)), places=8)

    def test_zero_variance_row(self):
        g = NominalGaussian(mu=np.array([1.0, 0.0]), Sigma=np.diag([0.0, 1.0]))
        inside = tail_probability(g, (1.0, 0.0), 2.0)
        outside = tail_probability(g, (1.0, 0.0), 0.5)
        self.assertTrue(inside.degenerate)
        self.assertEqual((inside.tail_prob, outside.tail_prob), (0.0, 1.0))

    def test_non_finite_input(self):
        with self.assertRaises(NonFiniteInputError):
            tail_probability(STANDARD_2D, (math.nan, 0.0), 1.0)
        with self.assertRaises(NonFiniteInputError):
            tail_probability(STANDARD_2D, (1.0, 0.0), math.inf)

    def test_isf_log_inverts_logsf(self):
        t = np.array([-3.0, 0.0, 2.0, 10.0, 35.0])
        assert_allclose(StdNormal.isf_log(StdNormal.logsf(t)), t, rtol=1e-10, atol=1e-12)

    def test_cdf_and_sf_sum_to_one(self):
        t = np.linspace(-8.0, 8.0, 321)
        assert_allclose(StdNormal.cdf(t) + StdNormal.sf(t), 1.0, rtol=0, atol=1e-15)

    def test_isf_inverts_sf_up_to_limit(self):
        t = np.linspace(0.0, 37.0, 371)
        assert_allclose(StdNormal.isf(StdNormal.sf(t)), t, rtol=1e-9, atol=1e-12)
        assert_allclose(StdNormal.isf(StdNormal.sf(t)), StdNormal.isf_log(StdNormal.logsf(t)), rtol=1e-9, atol=1e-12)

    def test_ppf_inverts_lower_tail(self):
        t = np.linspace(-37.0, 0.0, 371)
        assert_allclose(StdNormal.ppf(StdNormal.cdf(t)), t, rtol=1e-9, atol=1e-12)
        assert_allclose(StdNormal.ppf(StdNormal.cdf(t)), -StdNormal.isf(StdNormal.sf(-t)), rtol=1e-12, atol=1e-12)

    def test_zero_variance_row_on_its_limit_is_feasible(self):
        # 하한에 정확히 놓인 분산 0 발전기: ωᵀμ = b 는 위반이 아님
        g = NominalGaussian(mu=np.array([0.0, 1.0]), Sigma=np.diag([0.0, 1.0]))
        c = tail_probability(g, (-1.0, 0.0), 0.0)
        self.assertTrue(c.degenerate)
        self.assertEqual(c.tail_prob, 0.0)
        self.assertEqual(c.beta, math.inf)
        on_limit = constraint_set([((-1.0, 0.0), 0.0)], g)
        self.assertFalse(on_limit.active.any())
        self.assertEqual(analytic_probability(on_limit), 0.0)
        mixed = constraint_set([((-1.0, 0.0), 0.0), ((0.0, 1.0), 2.0)], g)
        assert_array_equal(mixed.active, [False, True])
        self.assertIsNone(analytic_probability(mixed))

    def test_matches_plain_sampling(self):
        g = NominalGaussian(mu=np.array([0.3, -0.2]), Sigma=np.array([[2.0, 0.5], [0.5, 1.0]]))
        omega, b = np.array([1.0, -0.7]), 2.0
        c = tail_probability(g, omega, b)
        N = 1_000_000
        fraction = float(np.mean(g.sample(make_stream(25, "plain"), N) @ omega >= b))
        self.assertLess(abs(fraction - c.tail_prob), 4 * math.sqrt(c.tail_prob * (1 - c.tail_prob) / N))


class ConditionalSamplingTests(SimpleTestCase):
    def test_zero_uniform_lands_on_boundary(self):
        c = tail_probability(STANDARD_2D, (1.0, 1.0), 2.0)
        z = make_stream(1, "z").standard_normal((4, 2))
        points = _conditional_from_uniform(STANDARD_2D, c, z, np.zeros(4))
        assert_allclose(points @ c.omega, 2.0, atol=1e-12)

    def test_samples_respect_constraint(self):
        g = NominalGaussian(mu=np.array([0.5, -1.0]), Sigma=np.array([[1.0, 0.3], [0.3, 0.5]]))
        for b in (-1.0, 0.5, 4.0):
            c = tail_probability(g, (0.4, -1.2), b)
            points = sample_conditional_batch(g, c, make_stream(2, "respect", int(b + 10)), 5000)
            self.assertTrue(np.all(points @ c.omega >= b - 1e-9 * (1 + abs(b))))

    def test_truncated_mean(self):
        c = tail_probability(STANDARD_2D, (1.0, 0.0), 2.0)
        points = sample_conditional_batch(STANDARD_2D, c, make_stream(3, "mean"), 100_000)
        expected = stats.norm.pdf(2.0) / stats.norm.sf(2.0)
        stderr = points[:, 0].std(ddof=1) / math.sqrt(len(points))
        self.assertLess(abs(points[:, 0].mean() - expected), 3 * stderr)
        self.assertAlmostEqual(expected, 2.37322, places=5)

    def test_projected_statistic_is_truncated_normal(self):
        g = NominalGaussian(mu=np.array([1.0, 2.0]), Sigma=np.array([[2.0, 0.6], [0.6, 1.0]]))
        inv_root = np.linalg.inv(g.SigmaSqrt)
        for tau in (0.0, 2.0, 6.0):
            with self.subTest(tau=tau):
                omega = np.array([1.0, -0.5])
                c = tail_probability(g, omega, float(g.mu @ omega) + tau * np.linalg.norm(g.SigmaSqrt @ omega))
                points = sample_conditional_batch(g, c, make_stream(4, "ks", int(tau)), 10_000)
                statistic = (points - g.mu) @ inv_root @ c.omega_bar
                result = stats.kstest(statistic, stats.truncnorm(tau, np.inf).cdf)
                self.assertGreater(result.pvalue, 1e-3)

    def test_orthogonal_part_is_untouched(self):
        c = tail_probability(STANDARD_2D, (1.0, 0.0), 1.0)
        points = sample_conditional_batch(STANDARD_2D, c, make_stream(5, "orth"), 10_000)
        self.assertGreater(stats.kstest(points[:, 1], "norm").pvalue, 1e-3)

    def test_single_sample(self):
        c = tail_probability(STANDARD_2D, (0.0, 1.0), 0.5)
        p = sample_conditional(STANDARD_2D, c, make_stream(6))
        self.assertEqual(p.shape, (2,))
        self.assertGreaterEqual(p[1], 0.5 - 1e-9)

    def test_deep_tail_samples_stay_finite(self):
        c = tail_probability(STANDARD_2D, (0.6, 0.8), 30.0)
        points = sample_conditional_batch(STANDARD_2D, c, make_stream(26, "deep"), 10_000)
        self.assertTrue(np.all(np.isfinite(points)))
        projected = points @ c.omega
        self.assertTrue(np.all(projected >= 30.0 - 1e-9 * 31.0))
        # 절단 정규 평균 φ(30)/Φ̄(30) ≈ 30 + 1/30
        self.assertAlmostEqual(float(projected.mean()), float(stats.norm.pdf(30.0) / stats.norm.sf(30.0)), delta=0.01)

    def test_too_deep_tail(self):
        c = tail_probability(STANDARD_2D, (1.0, 0.0), 40.0)
        with self.assertRaises(TailUnderflowError):
            sample_conditional(STANDARD_2D, c, make_stream(7))

    def test_zero_variance_constraint(self):
        g = NominalGaussian(mu=np.zeros(2), Sigma=np.diag([0.0, 1.0]))
        c = tail_probability(g, (1.0, 0.0), -1.0)
        with self.assertRaises(DegenerateConstraintError):
            sample_conditional(g, c, make_stream(8))


class NominalLogpdfTests(SimpleTestCase):
    def test_value_at_mean(self):
        g = NominalGaussian(mu=np.array([1.0, -2.0]), Sigma=np.diag([4.0, 0.25]))
        expected = -math.log(2 * math.pi) - 0.5 * math.log(1.0)
        self.assertAlmostEqual(nominal_logpdf(g, g.mu), expected, places=12)

    def test_unit_displacement(self):
        g = NominalGaussian(mu=np.zeros(3), Sigma=np.diag([0.0, 1.0, 1.0]), slack=0)
        at_mean = nominal_logpdf(g, [0.0, 0.0, 0.0])
        self.assertAlmostEqual(nominal_logpdf(g, [0.0, 1.0, 0.0]), at_mean - 0.5, places=12)
        self.assertAlmostEqual(at_mean, -math.log(2 * math.pi), places=12)

    def test_matches_scipy(self):
        Sigma = np.array([[2.0, 0.6], [0.6, 1.0]])
        g = NominalGaussian(mu=np.array([0.3, -0.1]), Sigma=Sigma)
        points = make_stream(9).standard_normal((20, 2))
        expected = stats.multivariate_normal(g.mu, Sigma).logpdf(points)
        assert_allclose(nominal_logpdf_batch(g, points), expected, rtol=1e-10)

    def test_differences_follow_quadratic_form(self):
        Sigma = np.diag([0.0, 2.0, 0.5, 0.0])
        g = NominalGaussian(mu=np.array([0.0, 1.0, 1.0, 3.0]), Sigma=Sigma, slack=0)
        rng = make_stream(10)
        for _ in range(5):
            p, q = g.sample(rng, 2)
            pinv = np.linalg.pinv(Sigma)
            expected = -0.5 * ((p - g.mu) @ pinv @ (p - g.mu) - (q - g.mu) @ pinv @ (q - g.mu))
            self.assertAlmostEqual(nominal_logpdf(g, p) - nominal_logpdf(g, q), expected, places=10)

    def test_off_support_point(self):
        g = NominalGaussian(mu=np.zeros(3), Sigma=np.diag([0.0, 1.0, 0.0]), slack=0)
        self.assertEqual(nominal_logpdf(g, [0.0, 0.5, 1.0]), -math.inf)

    def test_slack_must_sit_at_mean(self):
        g = NominalGaussian(mu=np.zeros(2), Sigma=np.diag([0.0, 1.0]), slack=0)
        with self.assertRaises(SlackDeviationError):
            nominal_logpdf(g, [0.1, 0.0])


class MixtureWeightsTests(SimpleTestCase):
    def test_floor_projection(self):
        active = np.array([True, True, True, False])
        x = floor_projection(np.array([0.98, 0.015, 0.005, 0.0]), active, 0.01)
        self.assertAlmostEqual(float(x.sum()), 1.0, places=14)
        self.assertTrue(np.all(x[active] >= 0.01 - 1e-15))
        self.assertEqual(x[3], 0.0)
        self.assertAlmostEqual(x[2], 0.01)

    def test_floor_too_large(self):
        with self.assertRaises(ValueError):
            floor_projection(np.array([0.5, 0.5]), np.array([True, True]), 0.6)

    def test_aloe_is_proportional_to_tail(self):
        cs = constraint_set([((1.0, 0.0), 1.0), ((0.0, 1.0), 2.0)])
        weights = MixtureWeights.aloe(cs)
        assert_allclose(weights.x, cs.tail_prob / cs.tail_prob.sum(), rtol=1e-12)

    def test_weights_must_sum_to_one(self):
        with self.assertRaises(ValueError):
            MixtureWeights(x=np.array([0.5, 0.4]))

    def test_no_active_constraint(self):
        cs = constraint_set([((1.0, 0.0), 40.0)])
        with self.assertRaises(VacuousPolytopeError):
            MixtureWeights.aloe(cs)


class MixtureSamplingTests(SimpleTestCase):
    def test_single_constraint_always_selected(self):
        cs = constraint_set([((1.0, 0.0), 1.0)])
        indices, _ = sample_mixture_batch(MixtureWeights(x=np.array([1.0])), cs, STANDARD_2D, make_stream(11), 100)
        self.assertTrue(np.all(indices == 0))

    def test_zero_weight_never_selected(self):
        cs = orthogonal_pair()
        indices, points = sample_mixture_batch(
            MixtureWeights(x=np.array([1.0, 0.0])), cs, STANDARD_2D, make_stream(12), 100_000
        )
        self.assertFalse(np.any(indices == 1))
        self.assertTrue(np.all(points[:, 0] >= 2.0 - 1e-9))

    def test_selection_frequencies(self):
        cs = constraint_set([((1.0, 0.0), 1.0), ((0.0, 1.0), 1.0), ((1.0, 1.0), 1.0)])
        x = np.array([0.2, 0.3, 0.5])
        indices, _ = sample_mixture_batch(MixtureWeights(x=x), cs, STANDARD_2D, make_stream(13), 100_000)
        freq = np.bincount(indices, minlength=3) / 100_000
        stderr = np.sqrt(x * (1 - x) / 100_000)
        self.assertTrue(np.all(np.abs(freq - x) < 4 * stderr))

    def test_single_draw(self):
        cs = orthogonal_pair()
        index, point = sample_mixture(MixtureWeights.aloe(cs), cs, STANDARD_2D, make_stream(14))
        self.assertIn(index, (0, 1))
        self.assertGreaterEqual(point[index], 2.0 - 1e-9)


class DensityRatioTests(SimpleTestCase):
    def test_single_constraint(self):
        cs = constraint_set([((1.0, 0.0), 1.0)])
        weights = MixtureWeights(x=np.array([1.0]))
        for p in ([1.5, 0.0], [3.0, -2.0]):
            self.assertAlmostEqual(density_ratio(p, weights, cs), cs.tail_prob[0], places=15)

    def test_both_violated_with_equal_tails(self):
        cs = orthogonal_pair()
        weights = MixtureWeights(x=np.array([0.5, 0.5]))
        self.assertAlmostEqual(density_ratio([3.0, 3.0], weights, cs) / PHI_BAR_2, 1.0, places=12)

    def test_one_violated(self):
        cs = orthogonal_pair()
        weights = MixtureWeights(x=np.array([0.5, 0.5]))
        self.assertAlmostEqual(density_ratio([3.0, 0.0], weights, cs) / (2 * PHI_BAR_2), 1.0, places=12)

    def test_inside_point(self):
        cs = orthogonal_pair()
        with self.assertRaises(ConstraintNotViolatedError):
            density_ratio([0.0, 0.0], MixtureWeights.aloe(cs), cs)

    def test_weights_are_bracketed(self):
        cs = constraint_set([((1.0, 0.0), 1.0), ((0.0, 1.0), 1.5), ((1.0, 1.0), 2.0)])
        weights = MixtureWeights(x=np.array([0.5, 0.3, 0.2]))
        _, points = sample_mixture_batch(weights, cs, STANDARD_2D, make_stream(27, "bracket"), 20_000)
        ratio, _ = density_ratio_batch(points, weights, cs)
        scaled = weights.x / cs.tail_prob
        self.assertTrue(np.all(ratio >= (1 - 1e-12) / scaled.sum()))
        self.assertTrue(np.all(ratio <= (1 + 1e-12) / scaled.min()))

    def test_constraint_order_does_not_matter(self):
        rows = [((1.0, 0.0), 1.0), ((0.0, 1.0), 1.5), ((1.0, 1.0), 2.0), ((-1.0, 0.5), 1.2)]
        x = np.array([0.4, 0.3, 0.2, 0.1])
        order = [2, 0, 3, 1]
        cs = constraint_set(rows)
        shuffled = constraint_set([rows[k] for k in order])
        _, points = sample_mixture_batch(MixtureWeights(x=x), cs, STANDARD_2D, make_stream(28, "order"), 5000)
        ratio, _ = density_ratio_batch(points, MixtureWeights(x=x), cs)
        moved, _ = density_ratio_batch(points, MixtureWeights(x=x[order]), shuffled)
        assert_allclose(moved, ratio, rtol=1e-12)
        first, _ = update_estimate_batch(EstimatorState(), points, MixtureWeights(x=x), cs)
        second, _ = update_estimate_batch(EstimatorState(), points, MixtureWeights(x=x[order]), shuffled)
        self.assertAlmostEqual(second.pi_hat / first.pi_hat, 1.0, places=12)
        self.assertAlmostEqual(second.std / first.std, 1.0, places=9)


class EstimatorTests(SimpleTestCase):
    def test_single_constraint_is_exact(self):
        cs = constraint_set([((0.6, 0.8), 2.5)])
        weights = MixtureWeights(x=np.array([1.0]))
        for n in (1, 2, 7, 1000):
            state = estimate_with_schedule(STANDARD_2D, cs, [(weights, n)], make_stream(15, n))
            self.assertAlmostEqual(state.pi_hat / cs.tail_prob[0], 1.0, places=12)
            self.assertLessEqual(state.std, 1e-12)

    def test_orthogonal_constraints(self):
        cs = orthogonal_pair()
        weights = MixtureWeights.aloe(cs)
        state = estimate_with_schedule(
            STANDARD_2D, cs, [(weights, 100_000)], make_stream(16), batch_size=8192
        )
        self.assertEqual(state.count, 100_000)
        self.assertLess(abs(state.pi_hat - ORTHOGONAL_PI), 3 * state.std)
        # 위반 제약 수 평균은 ΣΠᵢ/Π 를 추정
        expected = 2 * PHI_BAR_2 / ORTHOGONAL_PI
        self.assertAlmostEqual(state.violated_mean, expected, delta=5e-3)

    def test_aloe_violated_mean_recovers_estimate(self):
        cs = orthogonal_pair(1.5)
        weights = MixtureWeights.aloe(cs)
        state = estimate_with_schedule(STANDARD_2D, cs, [(weights, 4096)], make_stream(17))
        _, upper = union_bounds(cs)
        self.assertAlmostEqual(upper / state.violated_mean / state.pi_hat, 1.0, places=10)

    def test_merge_matches_single_pass(self):
        rng = make_stream(18)
        w = rng.exponential(size=1000)
        counts = rng.integers(1, 4, size=1000)
        whole = batch_state(w, counts)
        merged = EstimatorState().merge(batch_state(w[:337], counts[:337])).merge(
            batch_state(w[337:], counts[337:])
        )
        self.assertEqual(merged.count, whole.count)
        self.assertAlmostEqual(merged.mean, whole.mean, places=12)
        self.assertAlmostEqual(merged.m2 / whole.m2, 1.0, places=10)
        self.assertAlmostEqual(merged.violated_mean, whole.violated_mean, places=12)

    def test_update_one_point(self):
        cs = orthogonal_pair()
        weights = MixtureWeights(x=np.array([0.5, 0.5]))
        state = update_estimate(EstimatorState(), [3.0, 0.0], weights, cs)
        state = update_estimate(state, [3.0, 3.0], weights, cs)
        self.assertEqual(state.count, 2)
        self.assertAlmostEqual(state.pi_hat / (1.5 * PHI_BAR_2), 1.0, places=12)
        self.assertAlmostEqual(state.max_weight / (2 * PHI_BAR_2), 1.0, places=12)

    def test_weight_log(self):
        cs = orthogonal_pair()
        weights = MixtureWeights.aloe(cs)
        _, points = sample_mixture_batch(weights, cs, STANDARD_2D, make_stream(19), 10)
        state, ratio = update_estimate_batch(
            EstimatorState(weight_log=()), points, weights, cs, record_weights=True
        )
        self.assertEqual(len(state.weight_log), 1)
        assert_array_equal(state.weight_log[0], weights.x)
        self.assertEqual(ratio.shape, (10,))

    def test_unbiased_over_runs(self):
        cs = orthogonal_pair()
        weights = MixtureWeights(x=np.array([0.8, 0.2]))
        estimates = np.array(
            [
                estimate_with_schedule(STANDARD_2D, cs, [(weights, 64)], make_stream(20, run)).pi_hat
                for run in range(300)
            ]
        )
        stderr = estimates.std(ddof=1) / math.sqrt(len(estimates))
        self.assertLess(abs(estimates.mean() - ORTHOGONAL_PI), 4 * stderr)


class UnionBoundTests(SimpleTestCase):
    def test_single_constraint(self):
        cs = constraint_set([((1.0, 0.0), 1.0)])
        lower, upper = union_bounds(cs)
        self.assertEqual(lower, upper)

    def test_orthogonal_bracket(self):
        lower, upper = union_bounds(orthogonal_pair())
        self.assertAlmostEqual(lower, PHI_BAR_2, places=15)
        self.assertAlmostEqual(upper, 2 * PHI_BAR_2, places=15)
        self.assertLess(lower, ORTHOGONAL_PI)
        self.assertLess(ORTHOGONAL_PI, upper)

    def test_duplicated_row(self):
        single = constraint_set([((1.0, 0.0), 2.0)])
        double = constraint_set([((1.0, 0.0), 2.0), ((1.0, 0.0), 2.0)])
        self.assertEqual(union_bounds(double)[0], union_bounds(single)[0])
        self.assertAlmostEqual(union_bounds(double)[1], 2 * union_bounds(single)[1], places=15)

    def test_vacuous_rows_are_ignored(self):
        cs = ConstraintSet.from_constraints(
            [tail_probability(STANDARD_2D, (1.0, 0.0), 2.0), tail_probability(STANDARD_2D, (0.0, 1.0), 1e6)],
            vacuous=[False, True],
        )
        assert_allclose(union_bounds(cs), (PHI_BAR_2, PHI_BAR_2), rtol=1e-15)

    def test_analytic_short_cuts(self):
        g = NominalGaussian(mu=np.array([1.0, 0.0]), Sigma=np.diag([0.0, 1.0]))
        self.assertEqual(analytic_probability(constraint_set([((1.0, 0.0), 0.5)], g)), 1.0)
        self.assertEqual(analytic_probability(constraint_set([((1.0, 0.0), 2.0)], g)), 0.0)
        self.assertIsNone(analytic_probability(orthogonal_pair()))


class GradientTests(SimpleTestCase):
    def setUp(self):
        self.cs = orthogonal_pair(1.0)
        proposal = MixtureWeights(x=np.array([0.5, 0.5]))
        _, self.points = sample_mixture_batch(proposal, self.cs, STANDARD_2D, make_stream(21), 512)
        self.proposal = proposal.x

    def test_single_constraint_gradient(self):
        cs = constraint_set([((1.0, 0.0), 1.0)])
        g = stochastic_gradient_var(np.array([2.0, 0.0]), np.array([1.0]), cs)
        self.assertAlmostEqual(g[0] / -cs.tail_prob[0], 1.0, places=12)

    def test_both_violated_gradient(self):
        g = stochastic_gradient_var(np.array([3.0, 3.0]), np.array([0.5, 0.5]), orthogonal_pair())
        assert_allclose(g, [-PHI_BAR_2, -PHI_BAR_2], rtol=1e-12)

    def _central_difference(self, fn, x, h=1e-5):
        grad = np.zeros_like(x)
        for i in range(x.size):
            step = np.zeros_like(x)
            step[i] = h
            grad[i] = (fn(x + step) - fn(x - step)) / (2 * h)
        return grad

    def test_variance_gradient_matches_finite_differences(self):
        rng = make_stream(22)
        for _ in range(5):
            x = rng.dirichlet([2.0, 2.0])
            analytic = batch_gradient_var(self.points, x, self.cs)
            numeric = self._central_difference(lambda y: var_surrogate(self.points, y, self.cs), x)
            self.assertLess(np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic), 1e-6)

    def test_kl_gradient_matches_finite_differences(self):
        rng = make_stream(23)
        pi_hat = ORTHOGONAL_PI
        for _ in range(5):
            x = rng.dirichlet([2.0, 2.0])
            analytic = batch_gradient_kl(self.points, x, self.cs, pi_hat, proposal=self.proposal)
            numeric = self._central_difference(
                lambda y: kl_surrogate(self.points, y, self.cs, pi_hat, proposal=self.proposal), x
            )
            self.assertLess(np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic), 1e-4)

    def test_kl_gradient_is_symmetric(self):
        g = stochastic_gradient_kl(np.array([3.0, 3.0]), np.array([0.5, 0.5]), orthogonal_pair(), ORTHOGONAL_PI)
        self.assertAlmostEqual(g[0], g[1], places=15)
        swapped = stochastic_gradient_kl(np.array([3.0, 0.0]), np.array([0.5, 0.5]), orthogonal_pair(), ORTHOGONAL_PI)
        mirrored = stochastic_gradient_kl(np.array([0.0, 3.0]), np.array([0.5, 0.5]), orthogonal_pair(), ORTHOGONAL_PI)
        assert_allclose(swapped, mirrored[::-1], rtol=1e-14)

    def test_surrogate_is_midpoint_convex(self):
        rng = make_stream(24)
        for _ in range(20):
            a, b = rng.dirichlet([1.0, 1.0]), rng.dirichlet([1.0, 1.0])
            mid = var_surrogate(self.points, 0.5 * (a + b), self.cs)
            ends = 0.5 * (var_surrogate(self.points, a, self.cs) + var_surrogate(self.points, b, self.cs))
            self.assertLessEqual(mid, ends + 1e-9)


class MirrorStepTests(SimpleTestCase):
    def test_constant_gradient(self):
        state = OptimizerState(weights=MixtureWeights(x=np.array([0.2, 0.3, 0.5])), eta=0.7)
        assert_allclose(mirror_step(state, np.full(3, -4.0)).weights.x, [0.2, 0.3, 0.5], rtol=1e-14)

    def test_closed_form(self):
        state = OptimizerState(weights=MixtureWeights(x=np.array([0.5, 0.5])), eta=1.0)
        updated = mirror_step(state, np.array([-math.log(2.0), 0.0]))
        assert_allclose(updated.weights.x, [2 / 3, 1 / 3], rtol=1e-14)
        self.assertEqual(updated.iteration, 1)

    def test_floor(self):
        state = OptimizerState(weights=MixtureWeights(x=np.array([0.999, 0.001]), epsilon=0.01), eta=1.0)
        assert_allclose(mirror_step(state, np.zeros(2)).weights.x, [0.99, 0.01], rtol=1e-12)

    def test_zero_weight_stays_zero(self):
        state = OptimizerState(weights=MixtureWeights(x=np.array([0.6, 0.4, 0.0])), eta=1.0)
        self.assertEqual(mirror_step(state, np.array([1.0, -1.0, -50.0])).weights.x[2], 0.0)

    def test_non_finite_gradient(self):
        state = OptimizerState(weights=MixtureWeights(x=np.array([0.5, 0.5])), eta=1.0)
        with self.assertRaises(FloatingPointError):
            mirror_step(state, np.array([math.inf, 0.0]))


class StepSizeTests(SimpleTestCase):
    def test_formula(self):
        cfg = ObjectiveKind(epsilon=0.01, eta0=1.0, horizon=100, batch_size=1)
        eta = step_size(0, cfg, 0.1, 2)
        self.assertAlmostEqual(eta, 0.01 * 10 * math.sqrt(math.log(2) / 500), places=15)
        self.assertAlmostEqual(eta, 3.723e-3, delta=1e-6)

    def test_scales_with_horizon(self):
        short = ObjectiveKind(epsilon=0.01, horizon=100, batch_size=1)
        long = ObjectiveKind(epsilon=0.01, horizon=200, batch_size=1)
        self.assertAlmostEqual(step_size(0, short, 0.1, 2) / step_size(0, long, 0.1, 2), math.sqrt(2))

    def test_eta0_is_clamped(self):
        with self.assertLogs("sampling.optimizer", level="WARNING"):
            cfg = ObjectiveKind(epsilon=0.01, eta0=2.0, horizon=100, batch_size=1)
        self.assertEqual(cfg.eta0, 1.0)

    def test_single_constraint_does_not_move(self):
        cfg = ObjectiveKind(horizon=100, batch_size=1)
        self.assertEqual(step_size(0, cfg, 0.1, 1), 0.0)

    def test_invalid_settings(self):
        for kwargs in ({"horizon": 0}, {"batch_size": 0}, {"epsilon": 0.0}, {"pi_proxy": "max"}):
            with self.assertRaises(ValueError):
                ObjectiveKind(**kwargs)


class RunAdaptiveTests(SimpleTestCase):
    def test_single_constraint(self):
        cs = constraint_set([((1.0, 0.0), 2.0)])
        for objective in ("md-var", "md-kl"):
            cfg = ObjectiveKind(objective=objective, horizon=200, batch_size=16)
            state, opt, trace = run_adaptive(STANDARD_2D, cs, cfg, make_stream(25, objective))
            self.assertAlmostEqual(state.pi_hat / PHI_BAR_2, 1.0, places=12)
            self.assertLessEqual(state.std, 1e-12)
            assert_array_equal(opt.weights.x, [1.0])
            self.assertEqual(len(trace), 13)

    def test_trace_and_floor(self):
        cs = constraint_set([((1.0, 0.0), 1.5), ((0.0, 1.0), 2.0), ((-1.0, -1.0), 2.5)])
        cfg = ObjectiveKind(horizon=1000, batch_size=32, epsilon=0.05)
        state, opt, trace = run_adaptive(STANDARD_2D, cs, cfg, make_stream(26), record_weights=True)
        self.assertEqual(state.count, 1000)
        self.assertEqual(len(trace), cfg.steps)
        self.assertEqual(trace[-1].samples, 1000)
        self.assertTrue(opt.weights.satisfies_floor(cs.active))
        self.assertEqual(len(state.weight_log), cfg.steps)
        self.assertTrue(all(row.eta > 0 for row in trace))

    def test_same_seed_same_result(self):
        cs = orthogonal_pair()
        cfg = ObjectiveKind(objective="md-kl", horizon=300, batch_size=10)
        first = run_adaptive(STANDARD_2D, cs, cfg, make_stream(27))
        second = run_adaptive(STANDARD_2D, cs, cfg, make_stream(27))
        self.assertEqual(first[0].pi_hat, second[0].pi_hat)
        assert_array_equal(first[1].weights.x, second[1].weights.x)

    def test_unbiased_for_adaptive_methods(self):
        cs = orthogonal_pair()
        for objective in ("md-var", "md-kl"):
            with self.subTest(objective=objective):
                cfg = ObjectiveKind(objective=objective, horizon=256, batch_size=32)
                estimates = np.array(
                    [
                        run_adaptive(STANDARD_2D, cs, cfg, make_stream(28, objective, run))[0].pi_hat
                        for run in range(500)
                    ]
                )
                stderr = estimates.std(ddof=1) / math.sqrt(len(estimates))
                self.assertLess(abs(estimates.mean() - ORTHOGONAL_PI), 4 * stderr)

    def test_no_active_constraint(self):
        cs = constraint_set([((1.0, 0.0), 45.0)])
        with self.assertRaises(VacuousPolytopeError):
            run_adaptive(STANDARD_2D, cs, ObjectiveKind(horizon=10), make_stream(29))
