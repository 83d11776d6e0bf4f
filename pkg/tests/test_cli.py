"""Problem loading, the CLI surface, run persistence, replay, and reports."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import pytest

from lessonloop.cli import main
from lessonloop.problems import ProblemLoadError, load_problem_set
from lessonloop.runner import config_digest, derived_seed, effective_config

from scripted import BASELINE_CPP, GENERATE_SIGNATURE, build_scripted_run, default_plan, step


def materialize(tmp_path: Path, scripted, config_extras: dict | None = None) -> dict:
    """Write a scripted run to disk as a problem set, fixtures, and config."""
    pset = tmp_path / "pset"
    problem_dir = pset / scripted.problem.id
    problem_dir.mkdir(parents=True)
    meta = {
        "id": scripted.problem.id,
        "mode": scripted.problem.mode,
        "task": scripted.problem.task,
    }
    if scripted.problem.tests:
        meta["tests"] = scripted.problem.tests
    (problem_dir / "problem.json").write_text(json.dumps(meta))
    (problem_dir / "baseline.src").write_text(scripted.problem.baseline_source)

    fixtures_dir = tmp_path / "fixtures"
    fixtures_dir.mkdir(exist_ok=True)
    agent_configs = []
    for i, agent in enumerate(scripted.agents):
        fixture_path = fixtures_dir / f"{agent.name}.json"
        fixture_path.write_text(json.dumps(scripted.fixtures[i]))
        agent_configs.append(
            {"name": agent.name, "kind": "scripted", "fixture_path": f"fixtures/{agent.name}.json"}
        )

    evals_path = tmp_path / "evals.json"
    evals_path.write_text(json.dumps({scripted.problem.id: scripted.eval_table}))

    config = {
        "agents": agent_configs,
        "toolchain": {"kind": "scripted", "table_path": "evals.json"},
        "rounds": scripted.config.rounds,
        "mode": scripted.config.mode,
        "ablation": scripted.config.ablation.value,
        "seed": scripted.config.rng_seed,
        "selection": {
            "k": scripted.config.selection.k,
            "threshold": scripted.config.selection.threshold,
            "epsilon": scripted.config.selection.epsilon,
        },
    }
    config.update(config_extras or {})
    (tmp_path / "config.json").write_text(json.dumps(config))
    return {
        "pset": pset,
        "config": tmp_path / "config.json",
        "out": tmp_path / "runs",
    }


def only_run_dir(out_root: Path) -> Path:
    run_dirs = [p for p in out_root.iterdir() if p.is_dir()]
    assert len(run_dirs) == 1
    return run_dirs[0]


class TestLoadProblemSet:
    def test_empty_directory(self, tmp_path):
        assert load_problem_set(tmp_path) == []

    def test_well_formed_problem(self, tmp_path):
        problem_dir = tmp_path / "p0"
        problem_dir.mkdir()
        (problem_dir / "problem.json").write_text(
            json.dumps({"id": "p0", "mode": "serial", "task": "optimize"})
        )
        (problem_dir / "baseline.src").write_text("int main() {}")
        problems = load_problem_set(tmp_path)
        assert len(problems) == 1
        assert problems[0].id == "p0"
        assert problems[0].baseline_source == "int main() {}"

    def test_unknown_mode_cites_field(self, tmp_path):
        problem_dir = tmp_path / "p0"
        problem_dir.mkdir()
        (problem_dir / "problem.json").write_text(
            json.dumps({"id": "p0", "mode": "quantum"})
        )
        (problem_dir / "baseline.src").write_text("int main() {}")
        with pytest.raises(ProblemLoadError, match="mode"):
            load_problem_set(tmp_path)

    def test_missing_file_names_path(self, tmp_path):
        problem_dir = tmp_path / "p0"
        problem_dir.mkdir()
        (problem_dir / "problem.json").write_text(json.dumps({"id": "p0"}))
        with pytest.raises(ProblemLoadError, match="baseline.src"):
            load_problem_set(tmp_path)

    def test_sorted_by_id(self, tmp_path):
        for name in ("zz", "aa"):
            d = tmp_path / name
            d.mkdir()
            (d / "problem.json").write_text(json.dumps({"id": name}))
            (d / "baseline.src").write_text("x")
        assert [p.id for p in load_problem_set(tmp_path)] == ["aa", "zz"]


class TestConfigMerging:
    def test_precedence(self):
        file_config = {"rounds": 2, "selection": {"k": 6}}
        overrides = {"rounds": 9}
        merged = effective_config(file_config, overrides)
        assert merged["rounds"] == 9  # CLI wins
        assert merged["selection"]["k"] == 6  # file beats defaults
        assert merged["selection"]["threshold"] == 1.1  # default survives

    def test_defaults_follow_reference_setup(self):
        merged = effective_config(None, None)
        assert merged["rounds"] == 4
        assert merged["selection"] == {"k": 4, "threshold": 1.1, "epsilon": 0.1}

    def test_digest_stable_under_key_order(self):
        a = {"rounds": 4, "seed": 1}
        b = {"seed": 1, "rounds": 4}
        assert config_digest(a) == config_digest(b)

    def test_derived_seeds_distinct(self):
        seeds = {derived_seed(7, r) for r in range(5)}
        assert len(seeds) == 5
        assert derived_seed(7, 0) == 7


class TestRunCommand:
    def test_end_to_end(self, tmp_path, capsys):
        scripted = build_scripted_run(2, 2)
        paths = materialize(tmp_path, scripted)
        code = main(
            [
                "run",
                "--problems",
                str(paths["pset"]),
                "--config",
                str(paths["config"]),
                "--out-root",
                str(paths["out"]),
            ]
        )
        assert code == 0
        run_dir = only_run_dir(paths["out"])
        assert (run_dir / "report.json").is_file()
        assert (run_dir / "report.csv").is_file()
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["completed"] is True
        result = json.loads(
            (run_dir / "problems" / "p0" / "rep0" / "result.json").read_text()
        )
        assert result["best"]["speedup"] is not None
        report = json.loads((run_dir / "report.json").read_text())
        assert report["summary"]["geomean_speedup"] > 1

    def test_no_lessons_selections_empty(self, tmp_path):
        scripted = build_scripted_run(2, 2, ablation="no_lessons")
        paths = materialize(tmp_path, scripted)
        assert (
            main(
                [
                    "run",
                    "--problems",
                    str(paths["pset"]),
                    "--config",
                    str(paths["config"]),
                    "--out-root",
                    str(paths["out"]),
                ]
            )
            == 0
        )
        run_dir = only_run_dir(paths["out"])
        result = json.loads(
            (run_dir / "problems" / "p0" / "rep0" / "result.json").read_text()
        )
        assert result["selections_per_round"] == [[], []]

    def test_generate_early_termination_recorded(self, tmp_path):
        plan = {
            (0, 0): step(
                "def scale(x):\n    return 3 * x",
                status="pass",
                speedup=None,
                tests_passed=6,
                tests_total=6,
            )
        }
        scripted = build_scripted_run(1, 4, plan, mode="generate")
        paths = materialize(tmp_path, scripted)
        assert (
            main(
                [
                    "run",
                    "--problems",
                    str(paths["pset"]),
                    "--config",
                    str(paths["config"]),
                    "--out-root",
                    str(paths["out"]),
                ]
            )
            == 0
        )
        run_dir = only_run_dir(paths["out"])
        result = json.loads(
            (run_dir / "problems" / "gen" / "rep0" / "result.json").read_text()
        ) if (run_dir / "problems" / "gen").exists() else json.loads(
            (run_dir / "problems" / "p0" / "rep0" / "result.json").read_text()
        )
        assert result["terminated_early"] is True

    def test_incorrect_candidates_are_results_not_errors(self, tmp_path):
        plan = {
            (0, 0): step("int bad;", status="incorrect", speedup=None,
                         tests_passed=1, tests_total=3),
            (1, 0): step("int worse;", status="compile_error", speedup=None,
                         compiler_output="error: expected ';'"),
        }
        scripted = build_scripted_run(2, 0, plan)
        paths = materialize(tmp_path, scripted)
        code = main(
            [
                "run",
                "--problems",
                str(paths["pset"]),
                "--config",
                str(paths["config"]),
                "--out-root",
                str(paths["out"]),
            ]
        )
        assert code == 0
        report = json.loads((only_run_dir(paths["out"]) / "report.json").read_text())
        assert report["summary"]["correct_fraction"] == 0.0
        assert report["summary"]["geomean_speedup"] == 1.0

    def test_missing_config_file_is_graceful(self, tmp_path):
        code = main(
            ["run", "--problems", str(tmp_path), "--config", str(tmp_path / "nope.json")]
        )
        assert code == 2

    def test_cli_flag_overrides_config(self, tmp_path):
        scripted = build_scripted_run(2, 2)
        paths = materialize(tmp_path, scripted)
        code = main(
            [
                "run",
                "--problems",
                str(paths["pset"]),
                "--config",
                str(paths["config"]),
                "--out-root",
                str(paths["out"]),
                "--rounds",
                "1",
            ]
        )
        assert code == 0
        run_dir = only_run_dir(paths["out"])
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["config"]["rounds"] == 1

    def test_secrets_never_persisted(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOOP_TEST_API_KEY", "topsecret-value-9177")
        scripted = build_scripted_run(2, 1)
        paths = materialize(tmp_path, scripted)
        config = json.loads(paths["config"].read_text())
        config["agents"][0]["api_key_env"] = "LOOP_TEST_API_KEY"
        paths["config"].write_text(json.dumps(config))
        assert (
            main(
                [
                    "run",
                    "--problems",
                    str(paths["pset"]),
                    "--config",
                    str(paths["config"]),
                    "--out-root",
                    str(paths["out"]),
                ]
            )
            == 0
        )
        run_dir = only_run_dir(paths["out"])
        for artifact in run_dir.rglob("*"):
            if artifact.is_file():
                assert "topsecret-value-9177" not in artifact.read_text()

    def test_config_digest_round_trips(self, tmp_path):
        digests = []
        for attempt in ("a", "b"):
            sub = tmp_path / attempt
            sub.mkdir()
            scripted = build_scripted_run(2, 1)
            paths = materialize(sub, scripted)
            assert (
                main(
                    [
                        "run",
                        "--problems",
                        str(paths["pset"]),
                        "--config",
                        str(paths["config"]),
                        "--out-root",
                        str(paths["out"]),
                    ]
                )
                == 0
            )
            run_dir = only_run_dir(paths["out"])
            manifest = json.loads((run_dir / "manifest.json").read_text())
            digests.append(manifest["config_digest"])
        assert digests[0] == digests[1]

    def test_repeats_report_mean_std(self, tmp_path):
        scripted = build_scripted_run(2, 1)
        paths = materialize(tmp_path, scripted, {"repeats": 2})
        assert (
            main(
                [
                    "run",
                    "--problems",
                    str(paths["pset"]),
                    "--config",
                    str(paths["config"]),
                    "--out-root",
                    str(paths["out"]),
                ]
            )
            == 0
        )
        run_dir = only_run_dir(paths["out"])
        assert (run_dir / "problems" / "p0" / "rep1" / "result.json").is_file()
        report = json.loads((run_dir / "report.json").read_text())
        assert report["repeats"]["count"] == 2
        assert "mean" in report["repeats"]["geomean_speedup"]

    def test_run_root_env_fallback(self, tmp_path, monkeypatch):
        scripted = build_scripted_run(1, 0)
        paths = materialize(tmp_path, scripted)
        env_root = tmp_path / "from-env"
        monkeypatch.setenv("LESSONL_RUN_ROOT", str(env_root))
        assert (
            main(
                ["run", "--problems", str(paths["pset"]), "--config", str(paths["config"])]
            )
            == 0
        )
        assert env_root.is_dir() and list(env_root.iterdir())


class TestReplayCommand:
    def run_once(self, tmp_path, **kwargs):
        scripted = build_scripted_run(2, 2, **kwargs)
        paths = materialize(tmp_path, scripted)
        assert (
            main(
                [
                    "run",
                    "--problems",
                    str(paths["pset"]),
                    "--config",
                    str(paths["config"]),
                    "--out-root",
                    str(paths["out"]),
                ]
            )
            == 0
        )
        return paths, only_run_dir(paths["out"])

    def test_replay_identical(self, tmp_path):
        paths, run_dir = self.run_once(tmp_path)
        assert main(["replay", str(run_dir), "--problems", str(paths["pset"])]) == 0

    def test_tampered_manifest_diverges(self, tmp_path):
        paths, run_dir = self.run_once(tmp_path)
        manifest_path = run_dir / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["config"]["selection"]["k"] = 2
        manifest_path.write_text(json.dumps(manifest))
        assert main(["replay", str(run_dir), "--problems", str(paths["pset"])]) != 0

    def test_missing_capture_file(self, tmp_path):
        paths, run_dir = self.run_once(tmp_path)
        (run_dir / "captured_replies.json").unlink()
        assert main(["replay", str(run_dir), "--problems", str(paths["pset"])]) != 0


class TestReportCommand:
    def test_json_and_csv_consistent(self, tmp_path):
        scripted = build_scripted_run(2, 1)
        paths = materialize(tmp_path, scripted)
        main(
            [
                "run",
                "--problems",
                str(paths["pset"]),
                "--config",
                str(paths["config"]),
                "--out-root",
                str(paths["out"]),
            ]
        )
        run_dir = only_run_dir(paths["out"])
        assert main(["report", str(run_dir)]) == 0
        report = json.loads((run_dir / "report.json").read_text())
        with open(run_dir / "report.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == len(report["summary"]["per_problem"])
        assert float(rows[0]["clamped_speedup"]) == pytest.approx(
            report["summary"]["per_problem"][0]["clamped_speedup"]
        )

    def test_unknown_format_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["report", str(tmp_path), "--format", "yaml"])
        assert excinfo.value.code == 2

    def test_partial_run_flagged(self, tmp_path):
        scripted = build_scripted_run(2, 1)
        paths = materialize(tmp_path, scripted)
        main(
            [
                "run",
                "--problems",
                str(paths["pset"]),
                "--config",
                str(paths["config"]),
                "--out-root",
                str(paths["out"]),
            ]
        )
        run_dir = only_run_dir(paths["out"])
        (run_dir / "manifest.json").unlink()  # simulate an in-progress run
        assert main(["report", str(run_dir)]) == 0
        report = json.loads((run_dir / "report.json").read_text())
        assert report["partial"] is True

    def test_report_without_results_fails(self, tmp_path):
        empty = tmp_path / "empty-run"
        empty.mkdir()
        assert main(["report", str(empty)]) == 1


class TestAblateCommand:
    def test_variant_sweep(self, tmp_path):
        scripted = build_scripted_run(2, 1)
        paths = materialize(tmp_path, scripted)
        code = main(
            [
                "ablate",
                "--problems",
                str(paths["pset"]),
                "--config",
                str(paths["config"]),
                "--out-root",
                str(paths["out"]),
                "--variants",
                "full",
                "no_lessons",
            ]
        )
        assert code == 0
        sweep_dirs = [p for p in paths["out"].iterdir() if p.name.startswith("ablate-")]
        assert len(sweep_dirs) == 1
        summary = json.loads((sweep_dirs[0] / "ablate_summary.json").read_text())
        variants = {row["variant"] for row in summary["variants"]}
        assert variants == {"full", "no_lessons"}
        for row in summary["variants"]:
            assert row["geomean_speedup"] > 0
