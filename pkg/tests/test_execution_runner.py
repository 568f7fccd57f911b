import json
import sys
from pathlib import Path

import pytest

from issue2test.core import execution_runner as runner
from issue2test.exceptions import ExecutionError, PatchApplyError
from issue2test.models import ExecutionReport, RunSpec, TestOutcome

from .conftest import STATS_CLAMP_FIXED, golden_test_patch_for

CLAMP_LOW = "tests/test_stats.py::test_clamp_low"
CLAMP_HIGH = "tests/test_stats.py::test_clamp_high"
MEAN_EMPTY = "tests/test_stats.py::TestMean::test_empty"

JUNIT = """<?xml version="1.0" encoding="utf-8"?>
<testsuites><testsuite name="pytest">
  <testcase classname="tests.test_stats" name="test_clamp_low" time="0.001"/>
  <testcase classname="tests.test_stats" name="test_clamp_high" time="0.001">
    <failure message="AssertionError: assert 15 == 10">assert 15 == 10</failure>
  </testcase>
  <testcase classname="tests.test_stats.TestMean" name="test_empty" time="0.001">
    <failure message="ZeroDivisionError: division by zero">ZeroDivisionError</failure>
  </testcase>
  <testcase classname="tests.test_text" name="test_skip" time="0.0">
    <skipped message="not today"/>
  </testcase>
  <testcase classname="tests.test_text" name="test_param[a]" time="0.0"/>
  <testcase classname="tests.test_text" name="test_param[b]" time="0.0">
    <error message="fixture 'db' not found">E fixture 'db' not found</error>
  </testcase>
</testsuite></testsuites>
"""


def outcome(status, kind="none", phase="call"):
    return TestOutcome(test_id="t.py::test_a", status=status, failure_kind=kind, phase=phase)


class TestPrepare:
    """Test workspace preparation."""

    def test_applies_patches_in_order(self, clamp_instance):
        """Test code and test patches land in the copy, not the snapshot."""
        with runner.prepare(
            clamp_instance,
            [("code", clamp_instance.golden_code_patch), golden_test_patch_for("clamp")],
        ) as ws:
            assert (ws.dir / "calc/stats.py").read_text(encoding="utf-8") == STATS_CLAMP_FIXED
            assert "test_clamp_high" in (ws.dir / "tests/test_stats.py").read_text(encoding="utf-8")
            assert ws.applied_patches == ["code", "patch-1"]
        assert not ws.root.exists()
        assert "min(" not in (Path(clamp_instance.snapshot) / "calc/stats.py").read_text(encoding="utf-8")

    def test_missing_snapshot(self, clamp_instance):
        """Test a missing snapshot directory raises ExecutionError."""
        instance = clamp_instance.model_copy(update={"snapshot": "/nonexistent/snapshot"})
        with pytest.raises(ExecutionError) as exc_info:
            runner.prepare(instance)
        assert exc_info.value.error_code == "SNAPSHOT_NOT_FOUND"

    def test_rejected_patch(self, clamp_instance):
        """Test a rejected patch raises with its id in the details."""
        bad = clamp_instance.golden_code_patch.replace("return max(low, value)", "return low")
        with pytest.raises(PatchApplyError) as exc_info:
            runner.prepare(clamp_instance, [("bad", bad)])
        assert exc_info.value.details["patch_id"] == "bad"

    def test_run_spec_overrides(self, clamp_instance, run_config):
        """Test per-instance run settings win over the config."""
        instance = clamp_instance.model_copy(
            update={"run": RunSpec(timeout_s=7.0, coverage_reliable=False)}
        )
        with runner.prepare(instance, config=run_config) as ws:
            assert ws.timeout_s == 7.0
            assert ws.coverage_reliable is False
            assert ws.test_command_template == run_config.test_command_template


class TestRenderCommand:
    """Test command template rendering."""

    def test_test_ids_expand(self):
        """Test each test id becomes its own argument."""
        argv = runner.render_command(
            "{python} -m pytest --junitxml={junit_out} {test_ids}",
            ["a.py::t1", "b.py::t2"],
            junit_out="/tmp/j.xml",
        )
        assert argv == [sys.executable, "-m", "pytest", "--junitxml=/tmp/j.xml", "a.py::t1", "b.py::t2"]

    def test_quoted_tokens(self):
        """Test quoted arguments stay whole."""
        argv = runner.render_command('{python} -c "print(1)"', python="py")
        assert argv == ["py", "-c", "print(1)"]


class TestParseReports:
    """Test JUnit and summary-line parsing."""

    def test_junit(self, tmp_path):
        """Test statuses, failure kinds, skips and parametrized worst status."""
        path = tmp_path / "junit.xml"
        path.write_text(JUNIT, encoding="utf-8")
        ids = [
            CLAMP_LOW,
            CLAMP_HIGH,
            MEAN_EMPTY,
            "tests/test_text.py::test_skip",
            "tests/test_text.py::test_param",
            "tests/test_text.py::test_absent",
        ]
        found = runner.parse_junit_report(path, ids)
        assert found[CLAMP_LOW].status == "pass"
        assert (found[CLAMP_HIGH].status, found[CLAMP_HIGH].failure_kind) == ("fail", "assertion")
        assert (found[MEAN_EMPTY].status, found[MEAN_EMPTY].failure_kind) == ("fail", "other")
        assert found["tests/test_text.py::test_skip"].status == "pass"
        assert found["tests/test_text.py::test_param"].status == "error"
        assert "tests/test_text.py::test_absent" not in found

    def test_bad_junit(self, tmp_path):
        """Test an unparsable report raises ExecutionError."""
        path = tmp_path / "junit.xml"
        path.write_text("<testsuite", encoding="utf-8")
        with pytest.raises(ExecutionError) as exc_info:
            runner.parse_junit_report(path, [CLAMP_LOW])
        assert exc_info.value.error_code == "BAD_JUNIT"

    def test_summary_lines(self):
        """Test -rA and verbose status lines."""
        output = "\n".join(
            [
                "tests/test_stats.py::test_clamp_low PASSED   [ 33%]",
                f"FAILED {CLAMP_HIGH} - AssertionError: assert 15 == 10",
                f"FAILED {MEAN_EMPTY} - ZeroDivisionError: division by zero",
                "ERROR tests/test_text.py::test_x - fixture 'db' not found",
                "SKIPPED tests/test_text.py::test_y",
            ]
        )
        ids = [CLAMP_LOW, CLAMP_HIGH, MEAN_EMPTY, "tests/test_text.py::test_x", "tests/test_text.py::test_y"]
        found = runner.parse_summary_lines(output, ids)
        assert found[CLAMP_LOW].status == "pass"
        assert found[CLAMP_HIGH].failure_kind == "assertion"
        assert found[MEAN_EMPTY].failure_kind == "other"
        assert found["tests/test_text.py::test_x"].status == "error"
        assert found["tests/test_text.py::test_y"].status == "pass"


class TestClassify:
    """Test report classification."""

    @pytest.mark.parametrize(
        "outcomes, expected",
        [
            ([], "error"),
            ([outcome("pass")], "pass"),
            ([outcome("pass"), outcome("fail", "assertion")], "assertion_failure"),
            ([outcome("fail", "assertion"), outcome("fail", "other")], "assertion_failure"),
            ([outcome("fail", "other")], "other_failure"),
            ([outcome("error", "timeout")], "error"),
            ([outcome("error", "other", "collect"), outcome("fail", "assertion")], "error"),
            ([outcome("error", "other", "collect"), outcome("fail", "other")], "other_failure"),
        ],
    )
    def test_classes(self, outcomes, expected):
        """Test each combination of outcomes."""
        assert runner.classify(ExecutionReport(outcomes=outcomes)) == expected


class TestRun:
    """Test running the subject's tests in a subprocess."""

    def test_fail_on_old_pass_on_new(self, clamp_instance):
        """Test the golden test fails with an assertion before the fix and passes after."""
        test_patch = golden_test_patch_for("clamp")
        with runner.prepare(clamp_instance, [test_patch]) as ws:
            report = runner.run(ws, [CLAMP_LOW, CLAMP_HIGH])
            assert report.status_of(CLAMP_LOW) == "pass"
            assert report.status_of(CLAMP_HIGH) == "fail"
            assert runner.classify(report) == "assertion_failure"
        with runner.prepare(clamp_instance, [clamp_instance.golden_code_patch, test_patch]) as ws:
            assert runner.classify(runner.run(ws, [CLAMP_HIGH])) == "pass"

    def test_exception_is_other_failure(self, calc_instances):
        """Test an exception other than AssertionError is an other failure."""
        instance = calc_instances["calc-mean"]
        with runner.prepare(instance, [golden_test_patch_for("mean")]) as ws:
            report = runner.run(ws, [MEAN_EMPTY])
        assert report.outcomes[0].failure_kind == "other"
        assert runner.classify(report) == "other_failure"

    def test_missing_test_is_collect_error(self, clamp_instance):
        """Test an id the runner never reports is a collect-phase error."""
        with runner.prepare(clamp_instance) as ws:
            report = runner.run(ws, [CLAMP_HIGH])
        assert report.outcomes[0].status == "error"
        assert report.outcomes[0].phase == "collect"
        assert runner.classify(report) == "error"

    def test_empty_selection_rejected(self, clamp_instance):
        """Test no ids raises instead of running the whole suite."""
        with runner.prepare(clamp_instance) as ws:
            with pytest.raises(ExecutionError) as exc_info:
                runner.run(ws, [])
            assert ws.runs == 0
        assert exc_info.value.error_code == "NO_TEST_IDS"

    def test_timeout(self, clamp_instance):
        """Test a command exceeding the timeout yields timeout errors."""
        instance = clamp_instance.model_copy(
            update={
                "run": RunSpec(
                    test_command_template='{python} -c "import time; time.sleep(10)"', timeout_s=0.5
                )
            }
        )
        with runner.prepare(instance) as ws:
            report = runner.run(ws, [CLAMP_LOW])
        assert report.outcomes[0].failure_kind == "timeout"
        assert runner.classify(report) == "error"


class TestCoverage:
    """Test coverage measurement and parsing."""

    def test_real_coverage(self, clamp_instance):
        """Test the clamp test covers clamp but not mean."""
        with runner.prepare(clamp_instance) as ws:
            report = runner.coverage(ws, [CLAMP_LOW])
        assert report.reliable
        assert 9 in report.lines_for("calc/stats.py")
        assert 5 not in report.lines_for("calc/stats.py")
        assert {5, 9} <= report.coverable["calc/stats.py"]
        assert report.tests_run == [CLAMP_LOW]

    def test_skipped_by_policy(self, clamp_instance):
        """Test unreliable repos skip measurement."""
        instance = clamp_instance.model_copy(update={"run": RunSpec(coverage_reliable=False)})
        with runner.prepare(instance) as ws:
            report = runner.coverage(ws, [CLAMP_LOW])
        assert report.reliable is False
        assert report.covered == {}

    def test_parse_relativizes(self, tmp_path):
        """Test absolute paths inside the base become relative and others are dropped."""
        base = tmp_path / "repo"
        base.mkdir()
        data = {
            "files": {
                str(base / "calc" / "stats.py"): {"executed_lines": [4, 9], "missing_lines": [5]},
                "/elsewhere/site.py": {"executed_lines": [1], "missing_lines": []},
                "calc/text.py": {"executed_lines": [1], "missing_lines": [2]},
            }
        }
        path = tmp_path / "cov.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        report = runner.parse_coverage_json(path, base)
        assert report.covered == {"calc/stats.py": {4, 9}, "calc/text.py": {1}}
        assert report.coverable["calc/stats.py"] == {4, 5, 9}

    def test_parse_missing(self, tmp_path):
        """Test a missing report is empty and unreliable."""
        report = runner.parse_coverage_json(tmp_path / "none.json")
        assert report.reliable is False
        assert report.covered == {}
