import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from sampling.gaussian import CovarianceError, NominalGaussian
from sampling.streams import make_stream

from .cases import (
    CaseSchemaError,
    DisconnectedGridError,
    DuplicateBusError,
    SlackBusError,
    SusceptanceError,
    load_case,
    with_theta_max,
)
from .network import build_matrices
from .polytope import (
    BLOCKS,
    build_polytope,
    polytope_frame,
    polytope_from_frame,
    polytope_from_rows,
)

CASE_DIR = Path(settings.GRID_RELIABILITY["CASE_DIR"])


def two_bus_document(**overrides):
    document = {
        "name": "two_bus",
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "kind": "slack", "p_mean": -0.5, "p_min": -1.0, "p_max": 0.0},
            {"id": 2, "kind": "generator", "p_mean": 0.5, "p_min": 0.0, "p_max": 1.0},
        ],
        "lines": [{"from": 1, "to": 2, "susceptance": 1.0, "theta_max": math.pi / 4}],
    }
    document.update(overrides)
    return document


class LoadCaseTests(SimpleTestCase):
    def test_two_bus_case(self):
        case = load_case(two_bus_document())
        self.assertEqual((case.n, case.m), (2, 1))
        self.assertEqual(case.slack_id, 1)

    def test_triangle_fixture(self):
        case = load_case(CASE_DIR / "triangle.json")
        self.assertEqual((case.n, case.m), (3, 3))
        self.assertEqual(case.sigma_scale, 0.25)

    def test_missing_slack(self):
        document = two_bus_document()
        document["buses"][0]["kind"] = "generator"
        with self.assertRaisesMessage(SlackBusError, "no slack bus"):
            load_case(document)

    def test_two_slack_buses(self):
        document = two_bus_document()
        document["buses"][1]["kind"] = "slack"
        with self.assertRaises(SlackBusError):
            load_case(document)

    def test_duplicate_bus(self):
        document = two_bus_document()
        document["buses"][1]["id"] = 1
        with self.assertRaisesMessage(DuplicateBusError, "1"):
            load_case(document)

    def test_non_positive_susceptance_names_line(self):
        document = two_bus_document()
        document["lines"][0]["susceptance"] = 0.0
        with self.assertRaisesMessage(SusceptanceError, "1-2"):
            load_case(document)

    def test_disconnected_grid(self):
        document = two_bus_document()
        document["buses"].append({"id": 3, "kind": "load", "p_mean": 0.0})
        with self.assertRaises(DisconnectedGridError):
            load_case(document)

    def test_limits_must_bracket_mean(self):
        document = two_bus_document()
        document["buses"][1]["p_max"] = 0.25
        with self.assertRaises(CaseSchemaError):
            load_case(document)

    def test_missing_file(self):
        with self.assertRaises(CaseSchemaError):
            load_case(CASE_DIR / "does_not_exist.json")

    def test_absent_limits_become_sentinels(self):
        document = two_bus_document()
        del document["buses"][1]["p_max"]
        case = load_case(document)
        self.assertIsNone(case.buses[1].p_max)
        self.assertEqual(case.buses[1].upper, 1e6)

    def test_slack_imbalance_only_warns(self):
        document = two_bus_document()
        document["buses"][0]["p_mean"] = -0.4
        with self.assertLogs("grid.cases", level="WARNING"):
            load_case(document)

    def test_with_theta_max_replaces_every_line(self):
        case = with_theta_max(load_case(CASE_DIR / "triangle.json"), math.pi / 8)
        self.assertTrue(all(line.theta_max == math.pi / 8 for line in case.lines))
        with self.assertRaises(CaseSchemaError):
            with_theta_max(case, 0.0)


class NetworkMatricesTests(SimpleTestCase):
    def test_two_bus_laplacian(self):
        mats = build_matrices(load_case(two_bus_document()))
        assert_array_equal(mats.B, [[1.0, -1.0], [-1.0, 1.0]])
        assert_array_equal(mats.A, [[1.0, -1.0]])

    def test_triangle_pseudo_inverse(self):
        mats = build_matrices(load_case(CASE_DIR / "triangle.json"))
        ones = np.ones((3, 3))
        assert_allclose(mats.B, 3 * np.eye(3) - ones, atol=1e-12)
        assert_allclose(mats.Bdag, (np.eye(3) - ones / 3) / 3, atol=1e-10)

    def test_slack_column_of_C(self):
        for name in ("two_bus", "triangle", "ieee14", "ieee30"):
            case = load_case(CASE_DIR / f"{name}.json")
            mats = build_matrices(case)
            e_s = np.zeros(case.n)
            e_s[case.slack_index] = 1.0
            assert_array_equal(mats.C @ e_s, -np.ones(case.n) + e_s)

    def test_shipped_cases_satisfy_matrix_invariants(self):
        for name in ("two_bus", "triangle", "ieee14", "ieee30"):
            with self.subTest(case=name):
                mats = build_matrices(load_case(CASE_DIR / f"{name}.json"))
                B, Bdag = mats.B, mats.Bdag
                assert_allclose(B, B.T)
                assert_allclose(B.sum(axis=1), 0.0, atol=1e-12)
                norm = np.linalg.norm(B)
                self.assertLess(np.linalg.norm(B @ Bdag @ B - B) / norm, 1e-10)
                self.assertLess(
                    np.linalg.norm(Bdag @ B @ Bdag - Bdag) / np.linalg.norm(Bdag), 1e-10
                )
                self.assertTrue(np.all(np.abs(mats.A).sum(axis=1) == 2))
                self.assertTrue(np.all(mats.A.sum(axis=1) == 0))


class PolytopeTests(SimpleTestCase):
    def setUp(self):
        self.triangle = load_case(CASE_DIR / "triangle.json")
        self.tri_mats = build_matrices(self.triangle)
        self.tri_poly = build_polytope(self.tri_mats, self.triangle)

    def test_row_count(self):
        two_bus = load_case(two_bus_document())
        self.assertEqual(build_polytope(build_matrices(two_bus), two_bus).J, 6)
        self.assertEqual(self.tri_poly.J, 12)

    def test_two_bus_angle_row(self):
        case = load_case(two_bus_document())
        polytope = build_polytope(build_matrices(case), case)
        assert_allclose(polytope.W[0], [0.5, -1.0], atol=1e-12)
        self.assertAlmostEqual(polytope.b[0], math.pi / 4)

    def test_triangle_matches_hand_derivation(self):
        angle = np.array(
            [[1.0, -2.0, -1.0], [1.0, -1.0, -2.0], [0.0, 1.0, -1.0]]
        ) / 3.0
        C = np.array([[0.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
        expected_W = np.vstack([angle, -angle, C, -C])
        expected_b = np.array([0.5] * 6 + [0.0, 1.0, 1.0] + [2.0, 0.0, 0.0])
        assert_allclose(self.tri_poly.W, expected_W, atol=1e-10)
        assert_allclose(self.tri_poly.b, expected_b, atol=1e-10)

    def test_angle_rows_annihilate_ones_before_slack_reduction(self):
        mats = self.tri_mats
        assert_allclose(mats.A @ mats.Bdag @ np.ones(3), 0.0, atol=1e-12)

    def test_block_order_and_labels(self):
        for k, name in enumerate(BLOCKS):
            rows = self.tri_poly.block(name)
            assert_array_equal(rows, np.arange(3 * k, 3 * k + 3))
        self.assertEqual(self.tri_poly.labels[0], "angle+:L0(1-2)")
        self.assertEqual(self.tri_poly.labels[-1], "gen-lower:B3")

    def test_mean_injection_is_inside(self):
        for name in ("two_bus", "triangle", "ieee14", "ieee30"):
            with self.subTest(case=name):
                case = load_case(CASE_DIR / f"{name}.json")
                polytope = build_polytope(build_matrices(case), case)
                self.assertTrue(polytope.contains(case.mean_injection)[0])

    def test_label_round_trip(self):
        rows = [(label, W, b) for label, (W, b) in self.tri_poly.rows_by_label().items()]
        rebuilt = polytope_from_rows(rows, self.tri_poly.vacuous)
        assert_array_equal(rebuilt.W, self.tri_poly.W)
        assert_array_equal(rebuilt.b, self.tri_poly.b)
        self.assertEqual(rebuilt.labels, self.tri_poly.labels)

    def test_frame_round_trip(self):
        rebuilt = polytope_from_frame(polytope_frame(self.tri_poly))
        assert_array_equal(rebuilt.W, self.tri_poly.W)
        assert_array_equal(rebuilt.vacuous, self.tri_poly.vacuous)

    def test_load_buses_are_vacuous(self):
        case = load_case(CASE_DIR / "ieee14.json")
        polytope = build_polytope(build_matrices(case), case)
        self.assertEqual(polytope.J, 2 * case.m + 2 * case.n)
        vacuous = {label for label, flag in zip(polytope.labels, polytope.vacuous) if flag}
        self.assertIn("gen-upper:B5", vacuous)
        self.assertNotIn("gen-upper:B2", vacuous)

    def test_membership_matches_direct_angle_check(self):
        # θ̄=0.3 이면 표본의 상당수가 위상각 제약을 위반
        case = with_theta_max(self.triangle, 0.3)
        mats = build_matrices(case)
        polytope = build_polytope(mats, case)
        g = NominalGaussian.for_grid(case, 0.25)
        points = g.sample(make_stream(3, "grid-test"), 10_000)
        injections = points @ mats.C.T
        theta = injections @ mats.Bdag.T

        ok = np.ones(len(points), dtype=bool)
        for line in case.lines:
            i, j = case.index_of(line.from_bus), case.index_of(line.to_bus)
            ok &= np.abs(theta[:, i] - theta[:, j]) <= line.theta_max + 1e-10
        lower = np.array([bus.lower for bus in case.buses])
        upper = np.array([bus.upper for bus in case.buses])
        ok &= np.all((injections >= lower - 1e-10) & (injections <= upper + 1e-10), axis=1)

        # 경계에서 1e-10 이내인 점은 비교에서 제외
        gap = np.abs(points @ polytope.W.T - polytope.b).min(axis=1)
        clear = gap > 1e-10
        assert_array_equal(polytope.contains(points)[clear], ok[clear])
        self.assertGreater(int((~ok).sum()), 0)

    def test_relabeling_buses_keeps_membership(self):
        document = json.loads((CASE_DIR / "triangle.json").read_text(encoding="utf-8"))
        relabel = {1: 3, 2: 1, 3: 2}
        document["lines"] = [dict(line, theta_max=0.3) for line in document["lines"]]
        permuted = json.loads(json.dumps(document))
        for bus in permuted["buses"]:
            bus["id"] = relabel[bus["id"]]
        for line in permuted["lines"]:
            line["from"], line["to"] = relabel[line["from"]], relabel[line["to"]]

        original = load_case(document)
        reference = build_polytope(build_matrices(original), original)
        case = load_case(permuted)
        polytope = build_polytope(build_matrices(case), case)
        g = NominalGaussian.for_grid(original, 0.25)
        points = g.sample(make_stream(5, "relabel"), 2000)
        # 원래 순서의 좌표 k 는 새 케이스에서 relabel[k+1] 번 버스
        order = [case.index_of(relabel[k + 1]) for k in range(3)]
        moved = np.zeros_like(points)
        moved[:, order] = points
        assert_array_equal(polytope.contains(moved), reference.contains(points))

    def test_theta_override_changes_only_angle_rhs(self):
        tight = with_theta_max(self.triangle, 0.1)
        polytope = build_polytope(build_matrices(tight), tight)
        assert_allclose(polytope.b[:6], 0.1)
        assert_array_equal(polytope.b[6:], self.tri_poly.b[6:])

    def test_ieee14_fixture_loads_from_temp_copy(self):
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "copy.json"
            target.write_text((CASE_DIR / "ieee14.json").read_text(encoding="utf-8"), encoding="utf-8")
            case = load_case(target)
        self.assertEqual(case.n, 14)
        self.assertEqual(case.m, 20)
        self.assertTrue(case.provenance)

    def test_ieee30_fixture(self):
        with self.assertNoLogs("grid.cases", level="WARNING"):
            case = load_case(CASE_DIR / "ieee30.json")
        self.assertEqual((case.n, case.m), (30, 41))
        self.assertEqual(case.slack_id, 1)
        generators = [bus.id for bus in case.buses if bus.kind == "generator"]
        self.assertEqual(generators, [2, 13, 22, 23, 27])
        self.assertIn("case30", case.provenance)


class GridGaussianTests(SimpleTestCase):
    def test_case_scale_is_used(self):
        case = load_case(CASE_DIR / "triangle.json")
        g = NominalGaussian.for_grid(case)
        assert_allclose(np.diag(g.Sigma), [0.0, 0.075**2, 0.05**2], rtol=1e-12)

    def test_argument_overrides_case_scale(self):
        case = load_case(CASE_DIR / "triangle.json")
        g = NominalGaussian.for_grid(case, 0.5)
        assert_allclose(np.diag(g.Sigma), [0.0, 0.15**2, 0.1**2], rtol=1e-12)

    def test_scale_is_required(self):
        with self.assertRaises(CovarianceError):
            NominalGaussian.for_grid(load_case(two_bus_document()))
