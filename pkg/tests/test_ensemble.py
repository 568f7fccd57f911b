import itertools

import pytest

from issue2test.core import ensemble, localizer
from issue2test.core.diffs import make_unified_diff
from issue2test.models import CandidateResult, TestPatch

from .conftest import ISSUE_CLAMP, StubLinter, calc_replies, golden_test_patch_for

CLASSES = ("pass", "assertion_failure", "other_failure", "error", "failed_to_generate")
IDS = ("T1", "T2", "T3", "T4", "T5")


def expected_choice(classes):
    """Reference selection: first non-empty failure group, lowest rank inside it."""
    for group in ("assertion_failure", "other_failure", "error"):
        members = [vid for vid, cls in zip(IDS, classes) if cls == group]
        if members:
            return members[0]
    return None


class TestVariants:
    """Test the variant table."""

    def test_order_and_flags(self):
        """Test five variants in priority order with their context flags."""
        variants = ensemble.build_variants()
        assert [v.id for v in variants] == list(IDS)
        assert [v.priority_rank for v in variants] == [1, 2, 3, 4, 5]
        assert [v.uses_planner for v in variants] == [True, False, False, False, False]
        assert [(v.uses_focal_loc, v.uses_test_loc) for v in variants] == [
            (True, True),
            (True, True),
            (False, True),
            (True, False),
            (False, False),
        ]


class TestSelect:
    """Test candidate selection."""

    def test_exhaustive(self):
        """Test every assignment of classes to the five variants."""
        for classes in itertools.product(CLASSES, repeat=len(IDS)):
            results = [
                CandidateResult(variant_id=vid, class_on_old=cls) for vid, cls in zip(IDS, classes)
            ]
            assert ensemble.select(results) == expected_choice(classes)

    def test_input_order_irrelevant(self):
        """Test rank decides, not list position."""
        results = [
            CandidateResult(variant_id="T4", class_on_old="assertion_failure"),
            CandidateResult(variant_id="T2", class_on_old="assertion_failure"),
        ]
        assert ensemble.select(results) == "T2"

    def test_empty(self):
        """Test no candidates selects nothing."""
        assert ensemble.select([]) is None


class TestSuccessReport:
    """Test pass@k and overlap reporting."""

    def test_pass_at_k(self):
        """Test instances solved by any variant are counted once."""
        assert ensemble.pass_at_k({"T1": ["a", "b"], "T2": ["b", "c"], "T3": []}) == 3
        assert ensemble.pass_at_k({}) == 0

    def test_overlaps(self):
        """Test exclusive, pairwise and region counts."""
        report = ensemble.variant_success_report({"T2": ["b", "c"], "T1": ["a", "b"], "T3": []})
        assert report["variants"] == {"T1": 2, "T2": 2, "T3": 0}
        assert report["exclusive"] == {"T1": 1, "T2": 1, "T3": 0}
        assert report["pairwise"] == {"T1&T2": 1, "T1&T3": 0, "T2&T3": 0}
        assert report["regions"] == {"T1": 1, "T1+T2": 1, "T2": 1}
        assert report["intersection_all"] == 0
        assert report["union"] == 3
        assert report["pass_at_k"] == 3

    def test_empty_report(self):
        """Test no variants give zero counts."""
        report = ensemble.variant_success_report({})
        assert report["union"] == 0
        assert report["regions"] == {}


class TestRunVariants:
    """Test generating and classifying all variants."""

    @pytest.fixture
    def localizations(self, calc_index, make_gateway):
        gw = make_gateway()
        return (
            localizer.localize(ISSUE_CLAMP, calc_index, "test", gw),
            localizer.localize(ISSUE_CLAMP, calc_index, "focal", gw),
        )

    def test_clamp_selects_planner_variant(
        self, clamp_instance, calc_index, localizations, make_gateway, run_config
    ):
        """Test all variants fail with an assertion and the planner variant wins."""
        test_loc, focal_loc = localizations
        gw = make_gateway()
        results, plans = ensemble.run_variants(
            clamp_instance, calc_index, test_loc, focal_loc, gw, StubLinter(), run_config
        )
        assert [r.variant_id for r in results] == list(IDS)
        assert {r.class_on_old for r in results} == {"assertion_failure"}
        assert list(plans) == ["T1"]
        assert ensemble.select(results) == "T1"
        assert gw.ledger.stages["extra_variants"].calls == 4

    def test_generation_failures(
        self, clamp_instance, calc_index, localizations, make_gateway, run_config
    ):
        """Test outputs without code are marked failed_to_generate and nothing is selected."""
        test_loc, focal_loc = localizations
        replies = calc_replies()
        replies["gen_write"] = "I am not sure how to test this."
        results, _ = ensemble.run_variants(
            clamp_instance,
            calc_index,
            test_loc,
            focal_loc,
            make_gateway(replies),
            StubLinter(),
            run_config,
        )
        assert {r.class_on_old for r in results} == {"failed_to_generate"}
        assert results[0].error["error_code"] == "NO_CODE_BLOCK"
        assert ensemble.select(results) is None


class TestEvaluateCandidate:
    """Test classifying a single candidate."""

    def test_golden_test_on_old_code(self, clamp_instance, run_config):
        """Test the golden clamp test is an assertion failure on the old code."""
        patch = TestPatch(
            diff=golden_test_patch_for("clamp"),
            target_file="tests/test_stats.py",
            test_ids=["tests/test_stats.py::test_clamp_high"],
        )
        result = ensemble.evaluate_candidate(clamp_instance, "T1", patch, run_config)
        assert result.class_on_old == "assertion_failure"
        assert result.error is None

    def test_patch_without_tests(self, clamp_instance, run_config, monkeypatch):
        """Test a candidate with no test function is an error without running anything."""
        patch = TestPatch(
            diff=make_unified_diff(
                "", "def reproduce_issue():\n    assert False\n", "tests/test_repro.py"
            ),
            target_file="tests/test_repro.py",
            test_ids=[],
        )

        def _never(*args, **kwargs):
            raise AssertionError("workspace should not be prepared")

        monkeypatch.setattr(ensemble.execution_runner, "prepare", _never)
        result = ensemble.evaluate_candidate(clamp_instance, "T3", patch, run_config)
        assert result.class_on_old == "error"
        assert result.error["error_code"] == "NO_TEST_IDS"

    def test_unappliable_patch(self, clamp_instance, run_config):
        """Test a patch that does not apply is an error with details."""
        patch = TestPatch(
            diff=make_unified_diff("x = 1\n", "x = 2\n", "tests/nowhere.py"),
            target_file="tests/nowhere.py",
            test_ids=["tests/nowhere.py::test_a"],
        )
        result = ensemble.evaluate_candidate(clamp_instance, "T2", patch, run_config)
        assert result.class_on_old == "error"
        assert result.error is not None
