import math
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats
from scipy.integrate import quad

from grid.cases import load_case, with_theta_max
from grid.network import build_matrices
from grid.polytope import build_polytope
from sampling.gaussian import ConstraintSet, NominalGaussian, constraints_from_polytope, tail_probability
from sampling.mixture import MixtureWeights, estimate_with_schedule
from sampling.optimizer import ObjectiveKind, run_adaptive
from sampling.streams import make_stream

from .baselines import (
    Method,
    MethodOptions,
    Schedule,
    reference_probability,
    run_method,
    run_plain_mc,
    run_static,
    samples_to_tolerance,
    within_band,
)
from .oracle import failure_probability_2d, variance_2d
from .synthetic import SyntheticSpec, SyntheticSpecError, generate_polytope, synthetic_polytope

STANDARD_2D = NominalGaussian.standard(2)
CASE_DIR = Path(settings.GRID_RELIABILITY["CASE_DIR"])
IS_METHODS = (Method.ALOE, Method.MD_VAR, Method.MD_KL)


def constraint_set(rows, g=STANDARD_2D):
    return ConstraintSet.from_constraints(
        tail_probability(g, omega, b, index=k) for k, (omega, b) in enumerate(rows)
    )


def orthogonal_pair(b):
    return constraint_set([((1.0, 0.0), b), ((0.0, 1.0), b)])


def orthogonal_pi(b):
    tail = float(stats.norm.sf(b))
    return 2 * tail - tail * tail


def regular_limit(J, tau):
    """정다각형 바깥 질량: 면 하나의 반쪽 부채꼴을 2J 번"""
    value, _ = quad(lambda a: math.exp(-0.5 * tau**2 / math.cos(a) ** 2), 0.0, math.pi / J, epsabs=0, epsrel=1e-12)
    return J / math.pi * value


class SyntheticTests(SimpleTestCase):
    def test_regular_rows_are_unit(self):
        polytope = synthetic_polytope(SyntheticSpec("regular", 3, 1.0))
        self.assertEqual(polytope.J, 3)
        assert_allclose(np.linalg.norm(polytope.W, axis=1), 1.0, rtol=1e-15)
        assert_allclose(polytope.b, 1.0)
        self.assertEqual(polytope.labels, ("face:1", "face:2", "face:3"))

    def test_degenerate_is_seeded(self):
        first = synthetic_polytope(SyntheticSpec("degenerate", 1500, 1.0, seed=7))
        second = synthetic_polytope(SyntheticSpec("degenerate", 1500, 1.0, seed=7))
        other = synthetic_polytope(SyntheticSpec("degenerate", 1500, 1.0, seed=8))
        assert_array_equal(first.W, second.W)
        self.assertFalse(np.array_equal(first.W, other.W))
        assert_array_equal(first.W[0], [0.0, 1.0])
        xi = first.W[1:, 0]
        self.assertTrue(np.all(np.abs(xi) <= 1e-6))
        assert_allclose(first.W[1:, 1], -1.0 - xi)

    def test_normalized_degenerate(self):
        polytope = synthetic_polytope(SyntheticSpec("degenerate", 5, 1.0, perturbation=0.1, normalize=True))
        assert_allclose(np.linalg.norm(polytope.W, axis=1), 1.0, rtol=1e-14)

    def test_invalid_specs(self):
        for kwargs in (
            {"kind": "hexagon", "J": 6, "tau": 1.0},
            {"kind": "regular", "J": 2, "tau": 1.0},
            {"kind": "degenerate", "J": 0, "tau": 1.0},
            {"kind": "regular", "J": 6, "tau": 0.0},
            {"kind": "degenerate", "J": 6, "tau": 1.0, "perturbation": -1.0},
        ):
            with self.assertRaises(SyntheticSpecError):
                SyntheticSpec(**kwargs)

    def test_names(self):
        self.assertEqual(SyntheticSpec("regular", 360, 6.0).name, "regular:360:6")
        self.assertEqual(SyntheticSpec("degenerate", 1500, 1.0, seed=7).name, "degenerate:1500:1:7")

    def test_generate_returns_standard_normal(self):
        cs, g = generate_polytope(SyntheticSpec("regular", 8, 2.0))
        self.assertEqual(cs.J, 8)
        assert_array_equal(g.Sigma, np.eye(2))
        assert_allclose(cs.tail_prob, stats.norm.sf(2.0), rtol=1e-12)


class OracleTests(SimpleTestCase):
    def test_half_plane(self):
        self.assertAlmostEqual(failure_probability_2d(STANDARD_2D, constraint_set([((1.0, 0.0), 0.0)])), 0.5, places=10)

    def test_orthogonal_pair(self):
        value = failure_probability_2d(STANDARD_2D, orthogonal_pair(2.0))
        self.assertAlmostEqual(value / orthogonal_pi(2.0), 1.0, places=9)

    def test_square(self):
        polytope = synthetic_polytope(SyntheticSpec("regular", 4, 1.0))
        inside = (1 - 2 * stats.norm.sf(1.0)) ** 2
        self.assertAlmostEqual(failure_probability_2d(STANDARD_2D, polytope), 1 - inside, places=9)

    def test_regular_360(self):
        value = failure_probability_2d(STANDARD_2D, synthetic_polytope(SyntheticSpec("regular", 360, 6.0)))
        self.assertAlmostEqual(value / 1.523e-8, 1.0, delta=1e-3)
        self.assertAlmostEqual(value / regular_limit(360, 6.0), 1.0, places=6)
        # J → ∞ 이면 exp(−τ²/2) 에 가까워짐
        self.assertAlmostEqual(value / math.exp(-18.0), 1.0, delta=1e-3)

    def test_degenerate_1500(self):
        value = failure_probability_2d(STANDARD_2D, synthetic_polytope(SyntheticSpec("degenerate", 1500, 1.0, seed=7)))
        self.assertAlmostEqual(value, 2 * stats.norm.sf(1.0), delta=1e-4)

    def test_general_gaussian(self):
        g = NominalGaussian(mu=np.array([0.5, -0.3]), Sigma=np.array([[1.5, 0.4], [0.4, 0.8]]))
        cs = constraint_set([((1.0, 0.0), 2.0)], g)
        self.assertAlmostEqual(failure_probability_2d(g, cs) / cs.tail_prob[0], 1.0, places=9)

    def test_requires_two_dimensions(self):
        g = NominalGaussian.standard(3)
        cs = constraint_set([((1.0, 0.0, 0.0), 1.0)], g)
        with self.assertRaises(ValueError):
            failure_probability_2d(g, cs)

    def test_variance_closed_form(self):
        b = 2.0
        tail = float(stats.norm.sf(b))
        pi = orthogonal_pi(b)
        # x=(½,½): 하나만 위반하면 r=2Π₁, 둘 다 위반하면 r=Π₁ (D 에서 그 확률은 Φ̄(b))
        second = (1 - tail) * (2 * tail) ** 2 + tail * tail**2
        value = variance_2d(STANDARD_2D, orthogonal_pair(b), np.array([0.5, 0.5]))
        self.assertAlmostEqual(value / (second - pi * pi), 1.0, places=7)

    def test_variance_single_constraint(self):
        cs = constraint_set([((1.0, 0.0), 1.0)])
        self.assertLess(abs(variance_2d(STANDARD_2D, cs, np.array([1.0]))), 1e-12)


class PlainMonteCarloTests(SimpleTestCase):
    def test_half_plane(self):
        N = 40_000
        result = run_plain_mc(STANDARD_2D, constraint_set([((1.0, 0.0), 0.0)]), N, make_stream(1, "mc"))
        self.assertLess(abs(result.pi_hat - 0.5), 4 * math.sqrt(0.25 / N))
        self.assertEqual(result.samples, N)
        self.assertAlmostEqual(result.std, math.sqrt(result.pi_hat * (1 - result.pi_hat) / N))

    def test_duplicated_rows(self):
        single = constraint_set([((1.0, 1.0), 1.0)])
        double = constraint_set([((1.0, 1.0), 1.0), ((1.0, 1.0), 1.0)])
        a = run_plain_mc(STANDARD_2D, single, 5000, make_stream(2, "dup"))
        b = run_plain_mc(STANDARD_2D, double, 5000, make_stream(2, "dup"))
        self.assertEqual(a.pi_hat, b.pi_hat)

    def test_polytope_and_constraints_agree(self):
        polytope = synthetic_polytope(SyntheticSpec("regular", 6, 1.0))
        cs = constraints_from_polytope(STANDARD_2D, polytope)
        a = run_plain_mc(STANDARD_2D, polytope, 20_000, make_stream(3, "agree"), chunk=4096)
        b = run_plain_mc(STANDARD_2D, cs, 20_000, make_stream(3, "agree"), chunk=4096)
        self.assertEqual(a.pi_hat, b.pi_hat)

    def test_rare_event_is_missed(self):
        cs, g = generate_polytope(SyntheticSpec("regular", 360, 6.0))
        result = run_plain_mc(g, cs, 1_000_000, make_stream(4, "rare"))
        self.assertEqual(result.pi_hat, 0.0)
        self.assertEqual(result.std, 0.0)

    def test_needs_samples(self):
        with self.assertRaises(ValueError):
            run_plain_mc(STANDARD_2D, orthogonal_pair(2.0), 0, make_stream(5))


class StaticMethodTests(SimpleTestCase):
    def test_single_constraint_is_exact(self):
        cs = constraint_set([((0.0, 1.0), 2.5)])
        for method in IS_METHODS:
            for N in (1, 17, 500):
                with self.subTest(method=method.value, N=N):
                    result = run_static(method, STANDARD_2D, cs, N, make_stream(6, method.value, N))
                    self.assertAlmostEqual(result.pi_hat / cs.tail_prob[0], 1.0, places=12)
                    self.assertLessEqual(result.std, 1e-12)
                    self.assertEqual(result.samples, N)

    def test_analytic_zero(self):
        cs = constraint_set([((1.0, 0.0), 50.0)])
        result = run_static(Method.MD_VAR, STANDARD_2D, cs, 100, make_stream(7))
        self.assertTrue(result.analytic)
        self.assertEqual(result.pi_hat, 0.0)

    def test_mc_is_not_static(self):
        with self.assertRaises(ValueError):
            run_static(Method.MC, STANDARD_2D, orthogonal_pair(2.0), 10, make_stream(8))

    def test_method_labels(self):
        self.assertEqual([m.label for m in Method], ["MC", "ALOE", "MD-Var", "MD-KL"])
        self.assertIs(Method("md-kl"), Method.MD_KL)

    def test_run_method_dispatches(self):
        result = run_method("mc", STANDARD_2D, orthogonal_pair(1.0), 1000, make_stream(9))
        self.assertEqual(result.method, "MC")
        result = run_method("aloe", STANDARD_2D, orthogonal_pair(1.0), 1000, make_stream(9))
        self.assertEqual(result.method, "ALOE")
        self.assertGreater(result.avg_violated, 1.0)

    def test_regular_polytope_accuracy(self):
        cs, g = generate_polytope(SyntheticSpec("regular", 360, 6.0))
        oracle = failure_probability_2d(g, cs)
        for method in (Method.ALOE, Method.MD_VAR):
            with self.subTest(method=method.value):
                ratios = np.array(
                    [
                        run_static(method, g, cs, 1000, make_stream(10, method.value, run)).pi_hat / oracle
                        for run in range(100)
                    ]
                )
                self.assertGreaterEqual(int(np.count_nonzero((ratios >= 0.9) & (ratios <= 1.1))), 90)

    def test_variance_decomposition(self):
        cs = orthogonal_pair(2.0)
        schedule = [(MixtureWeights(x=np.array([0.5, 0.5])), 64), (MixtureWeights(x=np.array([0.9, 0.1])), 64)]
        N = 128
        expected = sum(n * variance_2d(STANDARD_2D, cs, w.x) for w, n in schedule) / N**2
        estimates = np.array(
            [estimate_with_schedule(STANDARD_2D, cs, schedule, make_stream(11, run)).pi_hat for run in range(2000)]
        )
        self.assertAlmostEqual(estimates.var(ddof=1) / expected, 1.0, delta=0.15)


class AdaptationTests(SimpleTestCase):
    def setUp(self):
        self.cs, self.g = generate_polytope(SyntheticSpec("degenerate", 3, 1.0))

    def test_weight_moves_to_distinct_face(self):
        cfg = ObjectiveKind(objective="md-var", epsilon=0.1, horizon=4000, batch_size=1, pi_proxy="estimate")
        _, opt, trace = run_adaptive(self.g, self.cs, cfg, make_stream(12, "adapt"))
        x = opt.weights.x
        # 시작점은 ALOE (세 면 모두 Πᵢ = Φ̄(1) 이므로 1/3씩)
        assert_allclose(trace[0].x, 1 / 3, rtol=1e-5)
        self.assertGreater(x[0], 0.4)
        self.assertLess(x[0], 0.6)
        self.assertAlmostEqual(float(x.sum()), 1.0, places=12)

    def test_adaptation_lowers_variance(self):
        cfg = ObjectiveKind(objective="md-var", horizon=8000, batch_size=8)
        x0 = MixtureWeights.aloe(self.cs, cfg.resolve_epsilon(3)).x
        start = variance_2d(self.g, self.cs, x0)
        finals = [
            variance_2d(self.g, self.cs, run_adaptive(self.g, self.cs, cfg, make_stream(13, run))[1].weights.x)
            for run in range(30)
        ]
        self.assertLess(float(np.mean(finals)), start)
        self.assertGreaterEqual(sum(v < start for v in finals), 24)


class DegeneratePolytopeTests(SimpleTestCase):
    """J=1500, τ=1: 면 (0, 1) 하나와 거의 같은 면 1499개, N=1000, 30회"""

    J = 1500
    RUNS = 30
    ADAPTED = 0.05

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.cs, cls.g = generate_polytope(SyntheticSpec("degenerate", cls.J, 1.0))
        cls.pi = failure_probability_2d(cls.g, cls.cs)
        # ε = 1/(2J) 이면 중복 면 전체가 항상 절반 이상을 가짐
        cls.cfg = ObjectiveKind(
            objective="md-var", epsilon=1 / (2 * cls.J), horizon=1000, batch_size=1, pi_proxy="estimate"
        )
        cls.x0 = MixtureWeights.aloe(cls.cs, cls.cfg.epsilon).x
        cls.runs = [
            run_adaptive(cls.g, cls.cs, cls.cfg, make_stream(14, "degenerate", run)) for run in range(cls.RUNS)
        ]

    def two_face_variance(self, x1):
        """중복 면을 하나로 본 V(x): Π₁²/x₁ + (Π − Π₁)²/(1 − x₁) − Π²"""
        upper = float(self.cs.tail_prob[0])
        lower = self.pi - upper
        return upper**2 / x1 + lower**2 / (1 - x1) - self.pi**2

    def distinct_weights(self):
        return np.array([opt.weights.x[0] for _, opt, _ in self.runs])

    def test_starts_from_aloe(self):
        self.assertAlmostEqual(self.pi, 2 * stats.norm.sf(1.0), delta=1e-4)
        assert_allclose(self.x0, 1 / self.J, rtol=1e-5)
        for _, _, trace in self.runs:
            assert_array_equal(trace[0].x, self.x0)

    def test_distinct_face_takes_weight_once_sampled(self):
        x1 = self.distinct_weights()
        adapted = x1 > self.ADAPTED
        self.assertGreaterEqual(int(np.count_nonzero(adapted)), 5)
        # 한 번이라도 뽑히면 ≥ 0.05, 한 번도 안 뽑히면 ALOE 값 근처에 머묾
        self.assertTrue(np.all(adapted | (x1 < 2 * self.x0[0])))
        self.assertTrue(np.all(x1 <= 1 - (self.J - 1) * self.cfg.epsilon + 1e-12))

    def test_adapted_weights_cut_variance(self):
        start = self.two_face_variance(self.x0[0])
        self.assertAlmostEqual(start, 37.7, delta=0.5)
        finals = np.array([self.two_face_variance(x) for x in self.distinct_weights()])
        self.assertLess(float(finals.mean()), start)
        adapted = self.distinct_weights() > self.ADAPTED
        self.assertTrue(np.all(finals[adapted] < start / 50))

    def test_unseen_face_leaves_lower_half(self):
        """면 (0, 1) 을 한 번도 뽑지 않은 실행은 아래쪽 절반 Φ̄(1) 만 추정"""
        lower = self.pi - float(self.cs.tail_prob[0])
        for (state, opt, _) in self.runs:
            if opt.weights.x[0] < 2 * self.x0[0]:
                self.assertAlmostEqual(state.pi_hat / lower, 1.0, delta=0.05)


class StoppingRuleTests(SimpleTestCase):
    def test_band(self):
        self.assertTrue(within_band(1.0, 0.2, 1.0))
        self.assertFalse(within_band(1.0, 0.6, 1.0))
        self.assertFalse(within_band(0.0, 0.0, 1.0))

    def test_schedule(self):
        self.assertEqual(Schedule(64, 1024).sizes(), [64, 128, 256, 512, 1024])
        with self.assertRaises(ValueError):
            Schedule(64, 32)

    def test_single_constraint_stops_immediately(self):
        cs = constraint_set([((1.0, 0.0), 2.0)])
        for method in IS_METHODS:
            result = samples_to_tolerance(method, STANDARD_2D, cs, cs.tail_prob[0], seed=1, key="one")
            self.assertTrue(result.stop_pass)
            self.assertEqual(result.samples, 64)

    def test_orthogonal_md_var(self):
        cs = orthogonal_pair(2.0)
        result = samples_to_tolerance(Method.MD_VAR, STANDARD_2D, cs, orthogonal_pi(2.0), seed=2, key="orth")
        self.assertTrue(result.stop_pass)
        self.assertLessEqual(result.samples, 512)

    def test_mc_needs_many_more_samples(self):
        cs = orthogonal_pair(3.02)
        oracle = orthogonal_pi(3.02)
        self.assertAlmostEqual(oracle, 2.5e-3, delta=5e-5)
        schedule = Schedule(64, 2**20)
        md = samples_to_tolerance(Method.MD_VAR, STANDARD_2D, cs, oracle, schedule, seed=3, key="ratio")
        mc = samples_to_tolerance(Method.MC, STANDARD_2D, cs, oracle, schedule, seed=3, key="ratio")
        self.assertTrue(md.stop_pass)
        self.assertGreaterEqual(mc.samples, 10 * md.samples)

    def test_mc_extrapolates_at_cap(self):
        cs, g = generate_polytope(SyntheticSpec("regular", 360, 6.0))
        oracle = failure_probability_2d(g, cs)
        result = samples_to_tolerance(Method.MC, g, cs, oracle, Schedule(64, 4096), seed=4, key="cap")
        self.assertFalse(result.stop_pass)
        self.assertTrue(result.extrapolated)
        self.assertEqual(result.pi_hat, 0.0)
        self.assertEqual(result.samples, math.ceil(1 / oracle))

    def test_audit(self):
        cs = constraint_set([((1.0, 0.0), 2.0)])
        result = samples_to_tolerance(Method.ALOE, STANDARD_2D, cs, cs.tail_prob[0], seed=5, audit=True)
        self.assertTrue(result.audit_pass)

    def test_rejects_zero_oracle(self):
        with self.assertRaises(ValueError):
            samples_to_tolerance(Method.ALOE, STANDARD_2D, orthogonal_pair(2.0), 0.0, seed=6)


class ReferenceRunTests(SimpleTestCase):
    def test_reference_on_grid_case(self):
        case = with_theta_max(load_case(CASE_DIR / "triangle.json"), 0.3)
        g = NominalGaussian.for_grid(case, 0.25)
        cs = constraints_from_polytope(g, build_polytope(build_matrices(case), case))
        reference = reference_probability(g, cs, 20_000, seed=1, key="triangle")
        mc = run_plain_mc(g, cs, 200_000, make_stream(1, "triangle-mc"))
        self.assertLess(abs(reference.pi_hat - mc.pi_hat), 4 * math.hypot(reference.std, mc.std))

    def test_ieee30_spot_check(self):
        case = with_theta_max(load_case(CASE_DIR / "ieee30.json"), math.pi / 8)
        g = NominalGaussian.for_grid(case, 0.25)
        cs = constraints_from_polytope(g, build_polytope(build_matrices(case), case))
        # 버스 13 발전기는 상한 40 MW 에 37 MW 로 운전 중이라 Π 가 큼
        self.assertGreater(float(cs.tail_prob.max()), 0.3)

        reference = reference_probability(g, cs, 50_000, seed=2, key="ieee30")
        options = MethodOptions()
        md = run_static(Method.MD_VAR, g, cs, 200, make_stream(2, "ieee30", "md-var"), options)
        aloe = run_static(Method.ALOE, g, cs, 200, make_stream(2, "ieee30", "aloe"), options)
        mc = run_plain_mc(g, cs, 200, make_stream(2, "ieee30", "mc"))
        self.assertAlmostEqual(md.pi_hat / reference.pi_hat, 1.0, delta=0.2)
        self.assertAlmostEqual(aloe.pi_hat / reference.pi_hat, 1.0, delta=0.2)
        self.assertLess(md.std, mc.std)
        self.assertLess(aloe.std, mc.std)
