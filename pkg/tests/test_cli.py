import json

import pytest

import issue2test
from issue2test import cli
from issue2test.pipeline import Issue2TestPipeline

from .conftest import ScriptedBackend, StubLinter, calc_replies, golden_test_patch_for


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    """Log files land under tmp_path."""
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def recorded(run_config, calc_instances):
    """Transcript recorded from a scripted run over all calc instances."""
    Issue2TestPipeline(
        run_config, backend=ScriptedBackend(calc_replies()), linter=StubLinter()
    ).run_suite(list(calc_instances.values()))
    return run_config.transcript_path


@pytest.fixture
def replay_args(tmp_path, manifest_path, recorded):
    return [
        "--manifest",
        str(manifest_path),
        "--transcript",
        recorded,
        "--transcript-mode",
        "replay",
        "--output-dir",
        str(tmp_path / "cli-out"),
    ]


class TestGeneration:
    """Test generation commands against a recorded transcript."""

    def test_generate(self, replay_args, capsys):
        """Test the generate command prints the patch for one instance."""
        code = cli.main(["generate", *replay_args, "--instance", "calc-clamp"])
        assert code == 0
        [response] = json.loads(capsys.readouterr().out)
        assert response["patch"]["test_ids"] == ["tests/test_stats.py::test_clamp_high"]
        assert response["error_response"] is None

    def test_run(self, replay_args, tmp_path, capsys):
        """Test the run command over the whole manifest."""
        assert cli.main(["run", *replay_args]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["instances"] == 3
        assert summary["failures"] == 0
        assert (tmp_path / "cli-out" / "cost_report.txt").exists()

    def test_replay_miss_is_stage_failure(self, tmp_path, manifest_path, capsys):
        """Test an instance missing from the transcript exits 1 with its stage."""
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        code = cli.main(
            [
                "generate",
                "--manifest",
                str(manifest_path),
                "--transcript",
                str(empty),
                "--transcript-mode",
                "replay",
                "--output-dir",
                str(tmp_path / "out"),
            ]
        )
        assert code == 1
        assert "calc-clamp: [localize] REPLAY_MISS" in capsys.readouterr().err

    def test_missing_transcript_is_config_error(self, tmp_path, manifest_path, capsys):
        """Test replay without a transcript exits 2."""
        code = cli.main(
            [
                "run",
                "--manifest",
                str(manifest_path),
                "--transcript",
                str(tmp_path / "absent.jsonl"),
                "--transcript-mode",
                "replay",
            ]
        )
        assert code == 2
        assert "TRANSCRIPT_MISSING" in capsys.readouterr().err


class TestConfigErrors:
    """Test configuration failures exit with 2."""

    def test_unknown_key(self, manifest_path, capsys):
        """Test --set with an unknown key."""
        assert cli.main(["run", "--manifest", str(manifest_path), "--set", "bogus=1"]) == 2
        assert "UNKNOWN_CONFIG_KEY" in capsys.readouterr().err

    def test_bad_override(self, manifest_path):
        """Test --set without '='."""
        assert cli.main(["run", "--manifest", str(manifest_path), "--set", "jobs"]) == 2

    def test_mistyped_override(self, manifest_path, capsys):
        """Test a value of the wrong type exits 2 instead of raising."""
        assert cli.main(["run", "--manifest", str(manifest_path), "--set", "jobs=abc"]) == 2
        assert "INVALID_CONFIG_VALUE" in capsys.readouterr().err


    def test_no_manifest(self, capsys):
        """Test commands needing instances require a manifest."""
        assert cli.main(["localize"]) == 2
        assert "NO_MANIFEST" in capsys.readouterr().err

    def test_unknown_instance(self, manifest_path, capsys):
        """Test an instance id absent from the manifest."""
        assert cli.main(["plan", "--manifest", str(manifest_path), "--instance", "calc-nope"]) == 2
        assert "UNKNOWN_INSTANCE" in capsys.readouterr().err

    def test_overrides_reach_config(self, manifest_path):
        """Test flags and --set pairs are applied over the config file."""
        args = cli.build_parser().parse_args(
            ["run", "--manifest", str(manifest_path), "--set", "max_plan_turns=3", "--jobs", "2", "--no-fix-imports"]
        )
        config = cli.load_config(args)
        assert config.max_plan_turns == 3
        assert config.jobs == 2
        assert config.fix_imports is False
        assert config.manifest_path == str(manifest_path)

    def test_version(self, capsys):
        """Test --version prints the package version."""
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["--version"])
        assert exc_info.value.code == 0
        assert issue2test.__version__ in capsys.readouterr().out


class TestEvaluationCommands:
    """Test commands that run the subject's tests."""

    def test_evaluate_patch(self, tmp_path, manifest_path, capsys):
        """Test scoring a single test patch."""
        patch = tmp_path / "clamp.diff"
        patch.write_text(golden_test_patch_for("clamp"), encoding="utf-8")
        code = cli.main(
            [
                "evaluate",
                "--manifest",
                str(manifest_path),
                "--instance",
                "calc-clamp",
                "--patch",
                str(patch),
                "--output-dir",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["summary"]["fail_to_pass_count"] == 1
        assert report["summary"]["tdd_score"] == 100.0

    def test_evaluate_without_patch(self, manifest_path):
        """Test evaluate needs a patch source."""
        assert cli.main(["evaluate", "--manifest", str(manifest_path)]) == 2

    def test_golden_check(self, tmp_path, manifest_path, capsys):
        """Test golden tests of one instance are confirmed fail-to-pass."""
        code = cli.main(
            [
                "golden-check",
                "--manifest",
                str(manifest_path),
                "--instance",
                "calc-slugify",
                "--output-dir",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["checked"] == 1
        assert report["not_fail_to_pass"] == []

    def test_similarity(self, tmp_path, manifest_path, capsys):
        """Test similarity over a directory of patches."""
        patches = tmp_path / "patches"
        patches.mkdir()
        for name in ("clamp", "mean"):
            (patches / f"calc-{name}.diff").write_text(golden_test_patch_for(name), encoding="utf-8")
        code = cli.main(
            [
                "similarity",
                "--manifest",
                str(manifest_path),
                "--patches-dir",
                str(patches),
                "--output-dir",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["count"] == 2

    def test_filter(self, tmp_path, manifest_path, calc_instances, capsys):
        """Test filtering system patches with generated tests."""
        tests_dir = tmp_path / "tests"
        tests_dir.mkdir()
        (tests_dir / "calc-clamp.diff").write_text(golden_test_patch_for("clamp"), encoding="utf-8")
        system_dir = tmp_path / "systems" / "fixer"
        system_dir.mkdir(parents=True)
        (system_dir / "calc-clamp.diff").write_text(
            calc_instances["calc-clamp"].golden_code_patch, encoding="utf-8"
        )
        truth = tmp_path / "truth.json"
        truth.write_text(json.dumps({"fixer": {"calc-clamp": True}}), encoding="utf-8")
        code = cli.main(
            [
                "filter",
                "--manifest",
                str(manifest_path),
                "--instance",
                "calc-clamp",
                "--tests-dir",
                str(tests_dir),
                "--patches-dir",
                str(tmp_path / "systems"),
                "--truth",
                str(truth),
                "--output-dir",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        row = capsys.readouterr().out.splitlines()[2].split()
        assert row[:4] == ["fixer", "1", "1", "1"]


class TestCostReport:
    """Test the cost report command."""

    def test_from_transcript(self, tmp_path, recorded, capsys):
        """Test the table is rebuilt from a recorded transcript."""
        out = tmp_path / "costs"
        code = cli.main(
            ["cost-report", "--transcript", recorded, "--instances", "3", "--output-dir", str(out)]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "Total for Otter++" in table
        report = json.loads((out / "cost_report.json").read_text(encoding="utf-8"))
        assert report["instances"] == 3
        assert report["total_otter"]["calls"] > 0
        assert report["total_otter_plus_plus"]["calls"] == sum(r["calls"] for r in report["rows"])

    def test_missing_transcript(self, tmp_path):
        """Test a missing transcript is a config error."""
        assert cli.main(["cost-report", "--transcript", str(tmp_path / "none.jsonl")]) == 2


class TestPackageApi:
    """Test the top-level helpers."""

    def test_generate_tests(self, tmp_path, manifest_path, recorded):
        """Test the suite helper replays a recorded run."""
        outcome = issue2test.generate_tests(
            str(manifest_path),
            transcript_mode="replay",
            transcript_path=recorded,
            output_dir=str(tmp_path / "api-out"),
        )
        assert outcome["error_response"] is None
        assert outcome["summary"]["instances"] == 3

    def test_evaluate_unknown_instance(self, manifest_path):
        """Test an unknown instance id yields an error response."""
        response = issue2test.evaluate_test_patch(str(manifest_path), "calc-nope", "")
        assert response["error_response"]["error_code"] == "UNKNOWN_INSTANCE"
