import json
import math

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from semrd.ba import BAConfig, ba_solve
from semrd.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, bisect_to_target, load_config, parse_config, run, verify, verify_rows
from semrd.cli.main import cli
from semrd.cli.points import CORE_COLUMNS, read_points, render_csv
from semrd.core import binary_entropy, d_max
from semrd.exceptions import ConfigError, ParseError, TargetUnreachable
from semrd.sources import load_samples

from _instances import binary_identity, random_instance


def write_config(tmp_path, body, name="run.yaml"):
    body = dict({"version": 1, "output": {"dir": "out"}}, **body)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(body))
    return path


BINARY_ZERO = {"mode": "ba", "source": {"fixture": "binary"}, "grid": {"points": [[0, 0]]}}


class TestConfig:
    def test_defaults_filled(self, tmp_path):
        cfg = load_config(write_config(tmp_path, BINARY_ZERO))
        assert cfg["seed"] == 0 and cfg["nesrd"]["learning_rate"] == 1e-4 and cfg["nesrd"]["epochs"] == 50

    @pytest.mark.parametrize(
        "patch, field",
        [
            ({"nesrd": {"lr": 1}}, "nesrd.lr"),
            ({"colour": 1}, "colour"),
            ({"version": 2}, "version"),
            ({"mode": "fast"}, "mode"),
            ({"grid": {"points": [[0.5, 0]]}}, "grid.points[0][0]"),
            ({"grid": {"lambda1": [-1, 1]}}, "grid.lambda1[1]"),
            ({"source": {"fixture": "binary", "joint": [[1]]}}, "source"),
            ({"source": {"pond": 1}}, "source.pond"),
            ({"ba": {"tol": -1}}, "ba.tol"),
            ({"nesrd": {"epochs": 1.5}}, "nesrd.epochs"),
            ({"distortion": {"observation": "cross-entropy"}}, "distortion.observation"),
            ({"output": {"format": "xml"}}, "output.format"),
            ({"targets": [[0.1]]}, "targets[0]"),
        ],
    )
    def test_errors_name_the_field(self, patch, field):
        raw = dict({"version": 1}, **BINARY_ZERO)
        raw.update(patch)
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        assert info.value.field == field

    def test_missing_required(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"version": 1, "mode": "ba"})
        assert info.value.field == "source"

    def test_seed_and_worker_overrides(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, dict(BINARY_ZERO, seed=3, workers=1))
        monkeypatch.setenv("SEMRD_WORKERS", "4")
        cfg = load_config(path, seed=9)
        assert cfg["seed"] == 9 and cfg["workers"] == 4
        monkeypatch.setenv("SEMRD_WORKERS", "many")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_relative_paths_follow_config(self, tmp_path):
        cfg = load_config(write_config(tmp_path, BINARY_ZERO))
        assert cfg["output"]["dir"] == str(tmp_path / "out")


class TestBisect:
    def test_slack_target_gives_zero_rate(self):
        src, spec = binary_identity()
        point = bisect_to_target(src, spec, d_max(src, spec))
        assert point.alpha1 == 0.0 and point.alpha2 == 0.0 and point.rate_bits == pytest.approx(0.0, abs=1e-12)

    def test_fixture_at_max_distortion_is_exactly_zero(self):
        src, spec = random_instance(4)
        point = bisect_to_target(src, spec, d_max(src, spec))
        assert point.rate_nats == 0.0 and (point.d_o, point.d_s) == d_max(src, spec)

    def test_binary_known_value(self):
        src, spec = binary_identity()
        point = bisect_to_target(src, spec, (0.1, 0.5))
        assert point.rate_bits == pytest.approx(1 - binary_entropy(0.1), abs=1e-3)
        assert abs(point.d_o - 0.1) <= 1e-4 and point.info["target_met"]

    @pytest.mark.parametrize("target", [(-0.1, 0.2), (0.1, 0.7), (np.nan, 0.1)])
    def test_unreachable(self, target):
        src, spec = binary_identity()
        with pytest.raises(TargetUnreachable):
            bisect_to_target(src, spec, target)

    def test_below_floor_unreachable(self):
        src, spec = random_instance(3)
        floor = float(src.px @ spec.d_o.min(axis=1))
        with pytest.raises(TargetUnreachable):
            bisect_to_target(src, spec, (0.5 * floor, d_max(src, spec)[1]))

    @pytest.mark.parametrize("seed", range(4))
    def test_random_instances_meet_targets(self, seed):
        src, spec = random_instance(seed)
        mid = ba_solve(src, spec, BAConfig(-2.0, -2.0))[0]
        point = bisect_to_target(src, spec, (mid.d_o, mid.d_s))
        assert abs(point.d_o - mid.d_o) <= 1e-4 and abs(point.d_s - mid.d_s) <= 1e-4
        assert point.rate_nats == pytest.approx(mid.rate_nats, abs=2e-3)


class TestRun:
    def test_binary_zero_slopes(self, tmp_path):
        out = run(write_config(tmp_path, BINARY_ZERO))
        assert out.exit_code == EXIT_OK
        assert len(out.rows) == 1 and out.rows[0]["rate_bits"] == 0.0
        rows = read_points(tmp_path / "out" / "points.csv")
        assert rows[0]["rate_bits"] == 0.0
        assert list(rows[0])[: len(CORE_COLUMNS)] == list(CORE_COLUMNS)

    def test_outputs_and_manifest(self, tmp_path):
        run(write_config(tmp_path, BINARY_ZERO))
        out = tmp_path / "out"
        mirror = json.loads((out / "points.json").read_text())
        assert mirror["columns"][:9] == list(CORE_COLUMNS)
        manifest = json.loads((out / "manifest.json").read_text())
        assert {"config_hash", "seed", "versions", "wall_seconds", "workers"} <= manifest.keys()
        assert len(manifest["wall_seconds"]["points"]) == 1

    def test_config_error_exit(self, tmp_path):
        out = run(write_config(tmp_path, dict(BINARY_ZERO, extra=1)))
        assert out.exit_code == EXIT_CONFIG and "extra" in out.message

    def test_missing_file_is_config_error(self, tmp_path):
        assert run(tmp_path / "nope.yaml").exit_code == EXIT_CONFIG

    def test_partial_failure(self, tmp_path):
        body = {"mode": "ba", "source": {"fixture": "binary"}, "grid": {"points": [[0, 0]]}, "targets": [[0.1, 0.5], [0.1, 0.9]]}
        out = run(write_config(tmp_path, body))
        assert out.exit_code == EXIT_PARTIAL
        assert out.rows[1]["error"] == "" and "TargetUnreachable" in out.rows[2]["error"]
        assert math.isnan(out.rows[2]["rate_bits"])

    def test_sweep_discretized_gaussian_monotone(self, tmp_path):
        body = {
            "mode": "sweep",
            "source": {"gaussian": "benchmark"},
            "discretization": {"levels": 3, "mc_samples": 20000},
            "grid": {"lambda1": [0, -0.1, -0.3, -1, -3], "lambda2": [0, -0.1, -0.3, -1, -3]},
        }
        out = run(write_config(tmp_path, body))
        assert out.exit_code == EXIT_OK and len(out.rows) == 25
        report = verify(tmp_path / "out" / "points.csv")
        assert report.passed

    def test_binary_sweep_bounds(self, tmp_path):
        body = {
            "mode": "sweep",
            "source": {"fixture": "binary"},
            "grid": {"lambda1": [0, -1, -3], "lambda2": [0, -0.5, -2]},
            "bounds": True,
        }
        run(write_config(tmp_path, body))
        report = verify(tmp_path / "out" / "points.csv", eps=1e-3)
        assert report.passed and [c.name for c in report.checks] == ["nonnegativity", "monotonicity", "bounds"]

    def test_worker_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        body = {"mode": "sweep", "source": {"fixture": "binary"}, "grid": {"lambda1": [0, -1, -2], "lambda2": [0, -1]}}
        path = write_config(tmp_path, body)
        run(path)
        first = (tmp_path / "out" / "points.csv").read_bytes()
        monkeypatch.setenv("SEMRD_WORKERS", "2")
        run(path)
        assert (tmp_path / "out" / "points.csv").read_bytes() == first

    def test_nesrd_defaults_recorded(self, tmp_path):
        body = {
            "mode": "nesrd",
            "source": {"gaussian": "benchmark"},
            "grid": {"points": [[-0.5, -1]]},
            "nesrd": {"n1": 200, "n2": 2, "m": 200, "eval_n1": 200, "epochs": 1},
        }
        out = run(write_config(tmp_path, body))
        assert out.exit_code == EXIT_OK and out.rows[0]["method"] == "nesrd"
        settings = json.loads((tmp_path / "out" / "manifest.json").read_text())["settings"]["nesrd"]
        assert settings["learning_rate"] == 1e-4 and settings["latent_dim"] == 10

    def test_nesrd_discrete_source(self, tmp_path):
        body = {
            "mode": "nesrd",
            "source": {"joint": [[0.4, 0.0], [0.3, 0.0], [0.0, 0.2], [0.0, 0.1]]},
            "distortion": {"observation": "squared-error", "semantic": "squared-error"},
            "grid": {"points": [[0, 0], [-1, -1]]},
            "nesrd": {"layers": [2, 4, 2], "n1": 100, "n2": 1, "m": 100, "eval_n1": 100, "epochs": 1},
        }
        out = run(write_config(tmp_path, body))
        assert out.exit_code == EXIT_OK and out.rows[0]["rate_bits"] == 0.0

    def test_cascade(self, tmp_path):
        body = {
            "mode": "cascade",
            "source": {"labeled": {"classes": 2, "means": [[-3, -3], [3, 3]], "cov": [[1, 0], [0, 1]], "n": 400}},
            "grid": {"points": [[0, 0]]},
            "cascade": {"epochs": 1, "generator_pretrain_epochs": 1, "classifier_pretrain_epochs": 1},
        }
        out = run(write_config(tmp_path, body))
        assert out.exit_code == EXIT_OK and out.rows[0]["rate_bits"] == 0.0

    def test_oracle(self, tmp_path):
        body = {"mode": "oracle", "source": {"fixture": "binary"}, "targets": [[0.1, 0.5]], "oracle": {"restarts": 2}}
        out = run(write_config(tmp_path, body))
        assert out.rows[0]["rate_bits"] == pytest.approx(1 - binary_entropy(0.1), abs=1e-3)

    def test_gaussian_gen_mode(self, tmp_path):
        body = {"mode": "gaussian-gen", "source": {"gaussian": "benchmark"}, "generate": {"n1": 5, "n2": 2}}
        out = run(write_config(tmp_path, body))
        samples = load_samples(tmp_path / "out" / "samples.csv")
        assert out.exit_code == EXIT_OK and samples.n1 == 5 and samples.n2 == 2

    def test_source_file(self, tmp_path):
        (tmp_path / "src.json").write_text(json.dumps({"joint": [[0.5, 0], [0, 0.5]], "d_o": "hamming", "d_s": "hamming"}))
        out = run(write_config(tmp_path, {"mode": "ba", "source": {"file": "src.json"}, "grid": {"points": [[-1, -1]]}}))
        assert out.exit_code == EXIT_OK and out.rows[0]["rate_bits"] > 0

    def test_capacity_column(self, tmp_path):
        body = dict(BINARY_ZERO, grid={"points": [[0, 0], [-3, -3]]}, capacity_bits=0.5)
        out = run(write_config(tmp_path, body))
        assert [r["achievable"] for r in out.rows] == [True, False]
        assert verify(tmp_path / "out" / "points.csv").passed


def rows_of(rates, d_o=None, d_s=None):
    n = len(rates)
    d_o = d_o or [0.1 * (i + 1) for i in range(n)]
    d_s = d_s or [0.1 * (i + 1) for i in range(n)]
    return [
        {"method": "ba", "d_o": a, "d_s": b, "rate_bits": r, "error": "", "line": i + 2}
        for i, (a, b, r) in enumerate(zip(d_o, d_s, rates))
    ]


class TestVerify:
    def test_all_zero_passes(self):
        assert verify_rows(rows_of([0.0, 0.0, 0.0])).passed

    def test_negative_rate_names_row(self, tmp_path):
        path = tmp_path / "p.csv"
        rows = [dict(r, alpha1=0.0, alpha2=0.0, rate_nats=r["rate_bits"], iterations=1, converged=True) for r in rows_of([0.3, -0.1, 0.0])]
        path.write_text(render_csv(rows))
        report = verify(path)
        check = report.checks[0]
        assert not report.passed and not check.passed and "row 1 (line 3)" in check.failures[0]

    def test_monotonicity_violation(self):
        report = verify_rows(rows_of([0.2, 0.5]))
        assert not report.passed and "monotonicity" in [c.name for c in report.checks if not c.passed]

    def test_incomparable_rows_not_checked(self):
        report = verify_rows(rows_of([0.2, 0.5], d_o=[0.1, 0.2], d_s=[0.3, 0.1]))
        assert report.passed and report.checks[1].checked == 0

    def test_bounds(self):
        rows = rows_of([0.5])
        rows[0].update(r_o_bits=0.1, r_s_bits=0.2)
        assert not verify_rows(rows).passed
        rows[0].update(r_o_bits=0.4, r_s_bits=0.2)
        assert verify_rows(rows).passed

    def test_failed_rows_skipped(self):
        rows = rows_of([0.2, float("nan")])
        rows[1]["error"] = "Diverged: boom"
        report = verify_rows(rows)
        assert report.passed and report.skipped_rows == [1]

    def test_parse_error_line(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("method,d_o,d_s,rate_bits\nba,0.1,0.1,0.2\nba,0.1,zero,0.2\n")
        with pytest.raises(ParseError) as info:
            verify(path)
        assert info.value.line == 3

    def test_json_mirror(self, tmp_path):
        run(write_config(tmp_path, dict(BINARY_ZERO, grid={"points": [[0, 0], [-1, -1]]})))
        assert verify(tmp_path / "out" / "points.json").passed


class TestCommandLine:
    def test_run_and_verify(self, tmp_path):
        runner = CliRunner()
        path = write_config(tmp_path, BINARY_ZERO)
        result = runner.invoke(cli, ["run", str(path), "--seed", "5"])
        assert result.exit_code == 0, result.output
        assert json.loads((tmp_path / "out" / "manifest.json").read_text())["seed"] == 5
        result = runner.invoke(cli, ["verify", str(tmp_path / "out" / "points.csv")])
        assert result.exit_code == 0 and "PASS monotonicity" in result.output

    def test_run_config_error(self, tmp_path):
        result = CliRunner().invoke(cli, ["run", str(write_config(tmp_path, dict(BINARY_ZERO, bogus=1)))])
        assert result.exit_code == 1

    def test_verify_failure_exit(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("method,d_o,d_s,rate_bits\nba,0.1,0.1,-0.2\n")
        result = CliRunner().invoke(cli, ["verify", str(path)])
        assert result.exit_code == 1 and "FAIL nonnegativity" in result.output

    def test_gaussian_gen(self, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text(yaml.safe_dump({"k_x": [[1.0, 0.0], [0.0, 2.0]], "h": [[1.0, 1.0]], "k_w": [[0.5]]}))
        out = tmp_path / "g.jsonl"
        result = CliRunner().invoke(cli, ["gaussian-gen", str(spec), str(out), "--n1", "4", "--n2", "3", "--seed", "1"])
        assert result.exit_code == 0, result.output
        samples = load_samples(out)
        assert samples.n1 == 4 and samples.n2 == 3 and samples.x_dim == 2 and samples.s_dim == 1

    def test_gaussian_gen_bad_spec(self, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text(yaml.safe_dump({"k_x": [[1.0, 2.0], [2.0, 1.0]], "h": [[1.0, 1.0]], "k_w": [[0.5]]}))
        result = CliRunner().invoke(cli, ["gaussian-gen", str(spec), str(tmp_path / "g.csv")])
        assert result.exit_code == 1
