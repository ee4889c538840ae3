import json
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from pandas.testing import assert_frame_equal

from bench.baselines import Method
from grid.cases import SlackBusError
from grid.network import SingularNetworkError
from grid.polytope import polytope_from_frame
from sampling.gaussian import TailUnderflowError
from sampling.mixture import VacuousPolytopeError

from .base import EXIT_CASE, EXIT_CONFIG, EXIT_NUMERICAL, exit_code_for
from .config import ConfigError, build_config
from .tables import SchemaError, expected_columns, frame_for, read_table, write_metadata, write_table

CASE_DIR = Path(settings.GRID_RELIABILITY["CASE_DIR"])
ESTIMATE_TABLES = ("estimate", "weights", "trace", "trace_weights")


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def call(self, name, *args, out=None):
        stdout = StringIO()
        target = self.tmp / (out or name)
        call_command(name, *args, "--out", str(target), stdout=stdout)
        return target, stdout.getvalue()

    def assertExitCode(self, code, name, *args):
        with self.assertRaises(CommandError) as cm:
            self.call(name, *args)
        self.assertEqual(cm.exception.returncode, code)
        return cm.exception


class EstimateCommandTests(CommandTestCase):
    TWO_BUS = ("--seed", "1", "--case", "two_bus", "--theta-max", str(math.pi / 4), "--sigma-scale", "0.25")

    def test_writes_tables(self):
        out, stdout = self.call("estimate", *self.TWO_BUS, "--samples", "1000")
        for schema in ESTIMATE_TABLES:
            self.assertTrue((out / f"{schema}.csv").exists(), schema)
        self.assertIn("MD-Var", stdout)

        row = read_table(out / "estimate.csv", "estimate").iloc[0]
        self.assertEqual(row["samples"], 1000)
        self.assertEqual(row["analytic"], 0)
        self.assertGreater(row["Pi_hat"], row["union_lower"] - 4 * row["std"])
        self.assertLess(row["Pi_hat"], row["union_upper"] + 4 * row["std"])

        weights = read_table(out / "weights.csv", "weights")
        self.assertEqual(len(weights), 6)
        self.assertAlmostEqual(weights["x_final"].sum(), 1.0, places=12)
        self.assertEqual(len(read_table(out / "trace.csv", "trace")), math.ceil(1000 / 32))
        trace_weights = read_table(out / "trace_weights.csv", "trace_weights")
        self.assertEqual(list(trace_weights.columns), ["batch"] + [f"x_{j}" for j in range(1, 7)])

    def test_repeated_runs_are_identical(self):
        first, _ = self.call("estimate", *self.TWO_BUS, "--samples", "500", out="a")
        second, _ = self.call("estimate", *self.TWO_BUS, "--samples", "500", out="b")
        for schema in ESTIMATE_TABLES:
            self.assertEqual(
                (first / f"{schema}.csv").read_bytes(), (second / f"{schema}.csv").read_bytes(), schema
            )

    def test_every_method(self):
        for method in Method:
            with self.subTest(method=method.value):
                out, _ = self.call("estimate", *self.TWO_BUS, "--samples", "300", "--method", method.value, out=method.value)
                row = read_table(out / "estimate.csv", "estimate").iloc[0]
                self.assertEqual(row["method"], method.label)
                self.assertGreaterEqual(row["Pi_hat"], 0.0)

    def test_aloe_ratio_column(self):
        out, _ = self.call("estimate", *self.TWO_BUS, "--samples", "400", "--method", "aloe")
        row = read_table(out / "estimate.csv", "estimate").iloc[0]
        self.assertAlmostEqual(row["sum_pi_over_avg_violated"] / row["Pi_hat"], 1.0, places=9)

    def test_synthetic_case(self):
        out, _ = self.call("estimate", "--seed", "3", "--case", "regular:8:2", "--samples", "256")
        row = read_table(out / "estimate.csv", "estimate").iloc[0]
        self.assertEqual(row["case"], "regular:8:2")
        self.assertTrue(pd.isna(row["theta_bound"]))

    def test_no_variation_is_analytic(self):
        out, stdout = self.call("estimate", "--seed", "1", "--case", "two_bus", "--sigma-scale", "0")
        row = read_table(out / "estimate.csv", "estimate").iloc[0]
        self.assertEqual(row["analytic"], 1)
        self.assertEqual(row["Pi_hat"], 0.0)
        self.assertEqual(row["samples"], 0)
        self.assertEqual(len(read_table(out / "trace.csv", "trace")), 0)
        self.assertIn("해석적", stdout)

    def test_generator_at_lower_limit_is_sampled(self):
        path = self.tmp / "idle.json"
        document = {
            "name": "idle",
            "base_mva": 100.0,
            "provenance": "3-bus cycle, generator 3 dispatched at its lower limit",
            "buses": [
                {"id": 1, "kind": "slack", "p_mean": -0.5, "p_min": -2.0, "p_max": 0.0},
                {"id": 2, "kind": "generator", "p_mean": 0.5, "p_min": 0.0, "p_max": 1.0},
                {"id": 3, "kind": "generator", "p_mean": 0.0, "p_min": 0.0, "p_max": 1.0},
            ],
            "lines": [
                {"from": 1, "to": 2, "susceptance": 1.0, "theta_max": 0.4},
                {"from": 1, "to": 3, "susceptance": 1.0, "theta_max": 0.4},
                {"from": 2, "to": 3, "susceptance": 1.0, "theta_max": 0.4},
            ],
            "sigma": {"scale": 0.25},
        }
        path.write_text(json.dumps(document), encoding="utf-8")

        rows = {}
        for method in ("mc", "md-var"):
            out, _ = self.call(
                "estimate", "--seed", "1", "--case", str(path), "--samples", "2000", "--method", method, out=method
            )
            rows[method] = read_table(out / "estimate.csv", "estimate").iloc[0]
            self.assertEqual(rows[method]["analytic"], 0)
            self.assertEqual(rows[method]["samples"], 2000)

        mc, md = rows["mc"], rows["md-var"]
        self.assertGreater(mc["Pi_hat"], 0.1)
        self.assertLess(mc["Pi_hat"], 0.5)
        self.assertLess(abs(md["Pi_hat"] - mc["Pi_hat"]), 4 * math.hypot(md["std"], mc["std"]))

    def test_case_without_sigma_uses_project_scale(self):
        document = json.loads((CASE_DIR / "two_bus.json").read_text(encoding="utf-8"))
        del document["sigma"]
        path = self.tmp / "bare.json"
        path.write_text(json.dumps(document), encoding="utf-8")

        out, _ = self.call("estimate", "--seed", "1", "--case", str(path), "--samples", "200", out="default")
        self.assertEqual(read_table(out / "estimate.csv", "estimate").iloc[0]["analytic"], 0)

        with override_settings(GRID_RELIABILITY={**settings.GRID_RELIABILITY, "SIGMA_SCALE": 0.0}):
            out, _ = self.call("estimate", "--seed", "1", "--case", str(path), "--samples", "200", out="flat")
        row = read_table(out / "estimate.csv", "estimate").iloc[0]
        self.assertEqual(row["analytic"], 1)
        self.assertEqual(row["Pi_hat"], 0.0)

    def test_zero_samples(self):
        self.assertExitCode(EXIT_CONFIG, "estimate", *self.TWO_BUS, "--samples", "0")

    def test_missing_seed(self):
        self.assertExitCode(EXIT_CONFIG, "estimate", "--case", "two_bus")

    def test_missing_case_file(self):
        self.assertExitCode(EXIT_CASE, "estimate", "--seed", "1", "--case", str(self.tmp / "nowhere.json"))

    def test_invalid_case_file(self):
        path = self.tmp / "broken.json"
        path.write_text(json.dumps({"name": "broken", "buses": [], "lines": []}), encoding="utf-8")
        self.assertExitCode(EXIT_CASE, "estimate", "--seed", "1", "--case", str(path))

    def test_theta_sweep_is_rejected(self):
        self.assertExitCode(EXIT_CONFIG, "estimate", *self.TWO_BUS, "--theta-max", "0.5")

    def test_epsilon_above_uniform(self):
        self.assertExitCode(EXIT_CONFIG, "estimate", *self.TWO_BUS, "--epsilon", "0.9")

    def test_config_file_and_flags(self):
        path = self.tmp / "run.json"
        path.write_text(json.dumps({"seed": 5, "case": "two_bus", "samples": 200, "method": "aloe"}), encoding="utf-8")
        out, _ = self.call("estimate", "--config", str(path), "--samples", "100")
        row = read_table(out / "estimate.csv", "estimate").iloc[0]
        self.assertEqual(row["samples"], 100)
        self.assertEqual(row["seed"], 5)
        self.assertEqual(row["method"], "ALOE")

    def test_unknown_config_key(self):
        path = self.tmp / "run.json"
        path.write_text(json.dumps({"seed": 5, "case": "two_bus", "step": 3}), encoding="utf-8")
        self.assertExitCode(EXIT_CONFIG, "estimate", "--config", str(path))


class GenerateCommandTests(CommandTestCase):
    def test_regular(self):
        out, _ = self.call("generate", "--seed", "1", "--case", "regular:3:1")
        polytope = polytope_from_frame(read_table(out / "polytope.csv", "polytope"))
        self.assertEqual(polytope.J, 3)
        np.testing.assert_allclose(np.linalg.norm(polytope.W, axis=1), 1.0, rtol=1e-15)
        metadata = json.loads((out / "metadata.json").read_text(encoding="utf-8"))
        self.assertEqual(metadata["oracle_source"], "polar-quadrature")
        self.assertLessEqual(metadata["union_lower"], metadata["oracle_Pi"])
        self.assertLessEqual(metadata["oracle_Pi"], metadata["union_upper"])

    def test_regular_360_oracle(self):
        out, _ = self.call("generate", "--seed", "1", "--case", "regular:360:6")
        metadata = json.loads((out / "metadata.json").read_text(encoding="utf-8"))
        self.assertAlmostEqual(metadata["oracle_Pi"] / 1.523e-8, 1.0, delta=1e-3)
        self.assertAlmostEqual(metadata["cited"]["circle_limit"] / 1.523e-8, 1.0, delta=1e-3)

    def test_degenerate_is_reproducible(self):
        first, _ = self.call("generate", "--seed", "1", "--case", "degenerate:1500:1:7", out="a")
        second, _ = self.call("generate", "--seed", "2", "--case", "degenerate:1500:1:7", out="b")
        self.assertEqual((first / "polytope.csv").read_bytes(), (second / "polytope.csv").read_bytes())
        metadata = json.loads((first / "metadata.json").read_text(encoding="utf-8"))
        self.assertEqual(metadata["J"], 1500)
        self.assertAlmostEqual(metadata["oracle_Pi"], 0.31731, delta=1e-4)

    def test_grid_case_is_rejected(self):
        self.assertExitCode(EXIT_CONFIG, "generate", "--seed", "1", "--case", "two_bus")

    def test_malformed_reference(self):
        self.assertExitCode(EXIT_CONFIG, "generate", "--seed", "1", "--case", "regular:2:1")
        self.assertExitCode(EXIT_CONFIG, "generate", "--seed", "1", "--case", "regular:many:1")


class PolytopeExportCommandTests(CommandTestCase):
    def test_ieee14(self):
        out, _ = self.call("polytope_export", "--seed", "1", "--case", "ieee14", "--theta-max", "0.3")
        frame = read_table(out / "polytope.csv", "polytope")
        self.assertEqual(list(frame.columns[:2]), ["row_label", "b"])
        self.assertEqual(len(frame.columns), 2 + 14)
        metadata = json.loads((out / "metadata.json").read_text(encoding="utf-8"))
        self.assertEqual(metadata["J"], len(frame))
        self.assertEqual(metadata["theta_bound"], 0.3)
        self.assertIn("gen-upper:B5", metadata["vacuous_rows"])
        self.assertTrue(np.all(frame.loc[frame["row_label"].str.startswith("angle"), "b"] == 0.3))


class BenchmarkCommandTests(CommandTestCase):
    ARGS = (
        "--seed", "11",
        "--case", "regular:8:2",
        "--method", "mc",
        "--method", "aloe",
        "--method", "md-var",
        "--runs", "3",
        "--samples", "256",
    )

    def frames(self, out):
        return read_table(out / "benchmark.csv", "benchmark"), read_table(out / "histogram.csv", "histogram")

    def test_tables(self):
        out, stdout = self.call("benchmark", *self.ARGS)
        benchmark, histogram = self.frames(out)
        self.assertEqual(len(benchmark), 9)
        self.assertEqual(list(benchmark["method"]), ["MC"] * 3 + ["ALOE"] * 3 + ["MD-Var"] * 3)
        self.assertEqual(list(benchmark["run"]), [0, 1, 2] * 3)
        self.assertEqual(tuple(histogram.columns), expected_columns("histogram"))
        np.testing.assert_allclose(histogram["ratio"], histogram["Pi_hat"] / histogram["oracle_Pi"])
        self.assertTrue(benchmark["error"].isna().all())
        metadata = json.loads((out / "benchmark_meta.json").read_text(encoding="utf-8"))
        self.assertEqual(metadata["oracles"][0]["source"], "polar-quadrature")
        self.assertIn("9칸", stdout)

    def test_deterministic_across_workers(self):
        first, _ = self.call("benchmark", *self.ARGS, "--workers", "1", out="a")
        second, _ = self.call("benchmark", *self.ARGS, "--workers", "3", out="b")
        a, _ = self.frames(first)
        b, _ = self.frames(second)
        assert_frame_equal(a.drop(columns="wall_ms"), b.drop(columns="wall_ms"))
        self.assertEqual(
            (first / "histogram.csv").read_bytes(), (second / "histogram.csv").read_bytes()
        )

    def test_mc_misses_rare_event(self):
        path = self.tmp / "cap.json"
        path.write_text(json.dumps({"schedule_cap": 1024}), encoding="utf-8")
        out, _ = self.call(
            "benchmark",
            "--config", str(path),
            "--seed", "2",
            "--case", "regular:360:6",
            "--method", "mc",
            "--to-tolerance",
        )
        row = read_table(out / "benchmark.csv", "benchmark").iloc[0]
        self.assertEqual(row["Pi_hat"], 0.0)
        self.assertFalse(row["stop_pass"])
        self.assertTrue(row["extrapolated"])
        self.assertEqual(row["N"], math.ceil(1 / row["oracle_Pi"]))

    def test_failed_cell_is_recorded(self):
        out, stdout = self.call(
            "benchmark",
            "--seed", "4",
            "--case", "regular:8:2",
            "--method", "mc",
            "--method", "md-var",
            "--samples", "128",
            "--epsilon", "0.5",
        )
        benchmark, histogram = self.frames(out)
        mc, md = benchmark.iloc[0], benchmark.iloc[1]
        self.assertTrue(pd.isna(mc["error"]))
        self.assertTrue(md["error"].startswith("ValueError"))
        self.assertTrue(pd.isna(md["Pi_hat"]))
        self.assertTrue(pd.isna(histogram.iloc[1]["ratio"]))
        self.assertIn("실패 1칸", stdout)

    def test_grid_case_uses_reference_run(self):
        out, _ = self.call(
            "benchmark",
            "--seed", "6",
            "--case", "two_bus",
            "--theta-max", "0.5",
            "--method", "aloe",
            "--samples", "200",
            "--reference-samples", "2000",
        )
        metadata = json.loads((out / "benchmark_meta.json").read_text(encoding="utf-8"))
        self.assertEqual(metadata["oracles"][0]["source"], "reference-run")
        self.assertEqual(metadata["oracles"][0]["samples"], 2000)
        row = read_table(out / "benchmark.csv", "benchmark").iloc[0]
        self.assertEqual(row["theta_bound"], 0.5)

    def test_requires_case(self):
        self.assertExitCode(EXIT_CONFIG, "benchmark", "--seed", "1")


class BuildConfigTests(SimpleTestCase):
    def test_defaults_from_settings(self):
        cfg = build_config("estimate", {"seed": 0})
        self.assertEqual(cfg.batch, 32)
        self.assertIsNone(cfg.epsilon)
        self.assertEqual(cfg.pi_proxy, "union")
        self.assertEqual(cfg.methods, ("md-var",))
        self.assertEqual(cfg.thetas, (None,))
        self.assertEqual(cfg.schedule.sizes()[:3], [64, 128, 256])

    @override_settings(GRID_RELIABILITY={"BATCH_SIZE": 8, "PI_PROXY": "estimate"})
    def test_settings_override(self):
        cfg = build_config("estimate", {"seed": 0})
        self.assertEqual(cfg.batch, 8)
        self.assertEqual(cfg.pi_proxy, "estimate")

    def test_flags_ignore_unset_and_django_options(self):
        cfg = build_config("benchmark", {"seed": 1, "samples": None, "verbosity": 1, "method": ["MC", "aloe"]})
        self.assertEqual(cfg.samples, 1000)
        self.assertEqual(cfg.methods, ("mc", "aloe"))
        self.assertEqual(cfg.options.batch_size, 32)

    def test_invalid_values(self):
        for flags in (
            {},
            {"seed": -1},
            {"seed": True},
            {"seed": 1, "samples": 0},
            {"seed": 1, "method": "newton"},
            {"seed": 1, "pi_proxy": "oracle"},
            {"seed": 1, "theta_max": [0.0]},
            {"seed": 1, "eta0": -1.0},
            {"seed": 1, "schedule_start": 128, "schedule_cap": 64},
        ):
            with self.subTest(flags=flags), self.assertRaises(ConfigError):
                build_config("estimate", flags)

    def test_unknown_command(self):
        with self.assertRaises(ConfigError):
            build_config("plot", {"seed": 1})

    def test_missing_config_file(self):
        with self.assertRaises(ConfigError):
            build_config("estimate", {"config": "/nonexistent/run.json"})


class TableTests(SimpleTestCase):
    def test_round_trip(self):
        frame = frame_for("trace_weights", {"batch": [0, 1], "x_1": [0.25, 0.5], "x_2": [0.75, 0.5]}, width=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_table(frame, Path(tmp) / "trace_weights.csv", "trace_weights")
            text = path.read_text(encoding="utf-8")
            self.assertTrue(text.startswith("batch,x_1,x_2\n"))
            self.assertIn("2.5000000000000000e-01", text)
            self.assertNotIn("\r", text)
            assert_frame_equal(read_table(path, "trace_weights"), frame)

    def test_header_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "trace.csv"
            path.write_text("batch,samples\n0,1\n", encoding="utf-8")
            with self.assertRaises(SchemaError):
                read_table(path, "trace")

    def test_missing_column(self):
        with self.assertRaises(SchemaError):
            frame_for("weights", {"row_label": ["a"], "Pi_i": [0.1]})

    def test_metadata_is_sorted_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_metadata(Path(tmp) / "meta.json", {"b": 1, "a": Path("x")})
            self.assertEqual(json.loads(path.read_text(encoding="utf-8")), {"a": "x", "b": 1})


class ExitCodeTests(SimpleTestCase):
    def test_mapping(self):
        self.assertEqual(exit_code_for(ConfigError("x")), EXIT_CONFIG)
        self.assertEqual(exit_code_for(SchemaError("x")), EXIT_CONFIG)
        self.assertEqual(exit_code_for(ValueError("x")), EXIT_CONFIG)
        self.assertEqual(exit_code_for(SlackBusError("x")), EXIT_CASE)
        self.assertEqual(exit_code_for(SingularNetworkError("x")), EXIT_CASE)
        self.assertEqual(exit_code_for(TailUnderflowError(0, 40.0)), EXIT_NUMERICAL)
        self.assertEqual(exit_code_for(VacuousPolytopeError("x")), EXIT_NUMERICAL)
        self.assertEqual(exit_code_for(FloatingPointError("x")), EXIT_NUMERICAL)
        self.assertEqual(exit_code_for(RuntimeError("x")), EXIT_NUMERICAL)
