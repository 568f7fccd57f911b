from statistics import mean
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

from Levenshtein import distance

from ..config import RunConfig, get_logger
from ..exceptions import MetricError
from ..models import (
    CoverageReport,
    ExecutionReport,
    FilterOutcome,
    FilterRow,
    InstanceSpec,
    SourceIndex,
    SystemFilterSummary,
    TddResult,
    TestPatch,
)
from . import execution_runner
from .diffs import FileDiff, apply_file_diff, parse_patch
from .repo_model import (
    build_index,
    list_test_files,
    parse_structure,
    read_function_source,
    read_source,
    tests_touching_lines,
)

logger = get_logger(__name__)

LineSets = Dict[str, Set[int]]

DEFAULT_SIMILARITY_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def resolve_contributed_tests(test_patch: str, patched_index: SourceIndex) -> List[str]:
    """
    Ids of test functions added or modified by a test patch.

    Hunk lines are intersected with function spans in the patched files, so
    an added method comes back with its enclosing suite.
    """
    ids: List[str] = []
    for file_diff in parse_patch(test_patch):
        if file_diff.is_deleted:
            continue
        structure = patched_index.modules.get(file_diff.path)
        if structure is None:
            logger.warning(f"Patched file {file_diff.path} is not in the index")
            continue
        for test_id in tests_touching_lines(structure, file_diff.touched_new_lines()):
            if test_id not in ids:
                ids.append(test_id)
    return ids


def _not_passing(report: ExecutionReport) -> List[str]:
    return [o.test_id for o in report.outcomes if o.status in ("fail", "error")]


def fail_to_pass(report_old: ExecutionReport, report_new: ExecutionReport) -> int:
    """1 if some test fails on the old code and none fails on the new code."""
    if not report_old.outcomes or not report_new.outcomes:
        return 0
    return int(bool(_not_passing(report_old)) and not _not_passing(report_new))


def _diff_lines(file_diff: FileDiff) -> Tuple[Dict[int, str], Dict[int, str]]:
    deleted: Dict[int, str] = {}
    added: Dict[int, str] = {}
    for hunk in file_diff.hunks:
        old_no, new_no = hunk.old_start, hunk.new_start
        for tag, text in hunk.lines:
            if tag == " ":
                old_no += 1
                new_no += 1
            elif tag == "-":
                deleted[old_no] = text
                old_no += 1
            else:
                added[new_no] = text
                new_no += 1
    return deleted, added


def changed_lines(code_patch: str) -> Tuple[Dict[str, Dict[int, str]], Dict[str, Dict[int, str]]]:
    """
    Deleted lines (old numbering, keyed by old path) and added lines (new
    numbering, keyed by new path) of a code patch, with their text.
    """
    deleted: Dict[str, Dict[int, str]] = {}
    added: Dict[str, Dict[int, str]] = {}
    for file_diff in parse_patch(code_patch):
        d, a = _diff_lines(file_diff)
        if d and file_diff.old_path:
            deleted.setdefault(file_diff.old_path, {}).update(d)
        if a and file_diff.new_path:
            added.setdefault(file_diff.new_path, {}).update(a)
    return deleted, added


def _looks_executable(text: str) -> bool:
    stripped = text.strip()
    return bool(stripped) and not stripped.startswith("#")


def executable_lines(lines: Mapping[str, Mapping[int, str]], cov: CoverageReport) -> LineSets:
    """
    Restrict changed lines to those the coverage tool reports as coverable.

    Files the tool never saw fall back to non-blank, non-comment lines.
    """
    result: LineSets = {}
    for path, numbered in lines.items():
        if path in cov.coverable:
            kept = set(numbered) & cov.coverable[path]
        else:
            kept = {n for n, text in numbered.items() if _looks_executable(text)}
        if kept:
            result[path] = kept
    return result


def adequacy_ratio(
    deleted: LineSets, added: LineSets, covered_old: LineSets, covered_new: LineSets
) -> Optional[float]:
    """(|cov_old ∩ D| + |cov_new ∩ A|) / (|D| + |A|), or None when D and A are empty."""
    total = sum(len(v) for v in deleted.values()) + sum(len(v) for v in added.values())
    if total == 0:
        return None
    hit = sum(len(lines & covered_old.get(path, set())) for path, lines in deleted.items())
    hit += sum(len(lines & covered_new.get(path, set())) for path, lines in added.items())
    return hit / total


def adequacy(cov_old: CoverageReport, cov_new: CoverageReport, code_patch: str) -> Optional[float]:
    """
    Fraction of the code patch's executable deleted and added lines that the
    tests cover on the old and new code respectively.

    Returns None when either coverage report is unreliable or the patch has
    no executable changed lines.
    """
    if not (cov_old.reliable and cov_new.reliable):
        return None
    deleted, added = changed_lines(code_patch)
    return adequacy_ratio(
        executable_lines(deleted, cov_old),
        executable_lines(added, cov_new),
        cov_old.covered,
        cov_new.covered,
    )


def tdd_score_instance(
    fail_to_pass_value: int, adequacy_value: Optional[float], coverage_excluded: bool = False
) -> float:
    """failToPass x adequacy; without a usable adequacy the score is failToPass alone."""
    if coverage_excluded or adequacy_value is None:
        return float(fail_to_pass_value)
    return fail_to_pass_value * adequacy_value


def tdd_score_suite(results: Sequence[Any]) -> float:
    """
    100 x the mean per-instance score. Accepts TddResults or plain numbers.

    TddResults flagged adequacy_undefined are left out of the mean.

    Raises:
        MetricError: If results is empty or every result is left out
    """
    if not results:
        raise MetricError("Cannot score an empty suite", error_code="EMPTY_SUITE")
    scores = [
        r.tdd_score if isinstance(r, TddResult) else float(r)
        for r in results
        if not _adequacy_undefined(r)
    ]
    if not scores:
        raise MetricError(
            "No instance in the suite has a defined adequacy",
            error_code="NO_SCORABLE_INSTANCES",
            details={"instances": len(results)},
        )
    return 100.0 * sum(scores) / len(scores)


def _adequacy_undefined(result: Any) -> bool:
    return isinstance(result, TddResult) and "adequacy_undefined" in result.flags


def _normalize(text: str) -> str:
    return "\n".join(line.rstrip() for line in text.splitlines())


def similarity(gen_test: str, repo_tests: Sequence[str]) -> float:
    """Highest 1 - edit_distance / max_length against any repository test."""
    target = _normalize(gen_test)
    best = 0.0
    for other in repo_tests:
        candidate = _normalize(other)
        longest = max(len(target), len(candidate))
        score = 1.0 if longest == 0 else 1.0 - distance(target, candidate) / longest
        best = max(best, score)
    return best


def similarity_distribution(
    scores: Sequence[float], thresholds: Sequence[float] = DEFAULT_SIMILARITY_THRESHOLDS
) -> Dict[str, float]:
    """Cumulative fraction of scores below each threshold (1.0 includes identical tests)."""
    result = {}
    for threshold in thresholds:
        if not scores:
            result[f"{threshold:.1f}"] = 0.0
            continue
        below = sum(1 for s in scores if s < threshold or (threshold >= 1.0 and s <= threshold))
        result[f"{threshold:.1f}"] = below / len(scores)
    return result


def similarity_report(entries: Sequence[Tuple[str, str, float]]) -> Dict[str, Any]:
    """Distributions over (instance_id, mode, score) entries, split into new and modified tests."""
    by_mode: Dict[str, List[float]] = {"write": [], "modify": []}
    for _, mode, score in entries:
        by_mode.setdefault(mode, []).append(score)
    all_scores = [score for _, _, score in entries]
    return {
        "count": len(all_scores),
        "mean": mean(all_scores) if all_scores else None,
        "all": similarity_distribution(all_scores),
        "new": similarity_distribution(by_mode["write"]),
        "modified": similarity_distribution(by_mode["modify"]),
        "new_count": len(by_mode["write"]),
        "modified_count": len(by_mode["modify"]),
    }


def _patched_tests(test_patch: str, index: SourceIndex) -> Iterator[Tuple[str, str, bool]]:
    """Yield (test_id, source, existed_before) for tests a patch adds or modifies."""
    for file_diff in parse_patch(test_patch):
        if file_diff.is_deleted:
            continue
        old_structure = index.modules.get(file_diff.path)
        old_text = "" if file_diff.is_new else read_source(index, file_diff.path)
        new_text = apply_file_diff(old_text, file_diff)
        structure = parse_structure(file_diff.path, new_text)
        lines = new_text.splitlines()
        existing = {ref.test_id for ref in old_structure.test_functions} if old_structure else set()
        touched = set(tests_touching_lines(structure, file_diff.touched_new_lines()))
        for ref in structure.test_functions:
            if ref.test_id in touched:
                body = "\n".join(lines[ref.decorator_line - 1 : ref.end_line])
                yield ref.test_id, body, ref.test_id in existing


def wrap_test_patch(test_patch: str, index: SourceIndex) -> TestPatch:
    """Wrap a raw diff, resolving its contributed test ids against the unpatched snapshot."""
    files = [fd.path for fd in parse_patch(test_patch) if not fd.is_deleted]
    test_ids = [test_id for test_id, _, _ in _patched_tests(test_patch, index)]
    return TestPatch(diff=test_patch, target_file=files[0] if files else "", test_ids=test_ids)


def generated_test_similarity(test_patch: str, index: SourceIndex) -> List[Tuple[str, float]]:
    """
    (mode, score) for every test a patch adds or modifies, scored against
    all test functions already in the snapshot.
    """
    repo_tests = []
    for path in list_test_files(index):
        for ref in index.modules[path].test_functions:
            repo_tests.append(read_function_source(index, ref))
    return [
        ("modify" if existed else "write", similarity(body, repo_tests))
        for _, body, existed in _patched_tests(test_patch, index)
    ]


def filter_metrics(rows: Sequence[FilterRow]) -> List[SystemFilterSummary]:
    """Per-system precision and recall of surviving patches; zero denominators give None."""
    systems: Dict[str, List[FilterRow]] = {}
    for row in rows:
        systems.setdefault(row.system, []).append(row)
    summaries = []
    for system in sorted(systems):
        members = systems[system]
        total = len(members)
        survived = sum(r.survived for r in members)
        correct = sum(r.correct for r in members)
        both = sum(r.survived and r.correct for r in members)
        summaries.append(
            SystemFilterSummary(
                system=system,
                total=total,
                survived=survived,
                correct=correct,
                survived_correct=both,
                precision=both / survived if survived else None,
                recall=both / correct if correct else None,
                base_precision=correct / total if total else None,
            )
        )
    return summaries


PatchRunner = Callable[[str, str, TestPatch], bool]


def filter_patches(
    tests: Mapping[str, Optional[TestPatch]],
    system_patches: Mapping[str, Mapping[str, str]],
    ground_truth: Mapping[str, Mapping[str, bool]],
    run_tests: PatchRunner,
) -> FilterOutcome:
    """
    Keep a system's code patch only if at least one generated test passes on it.

    run_tests(instance_id, code_patch, test_patch) reports whether any
    generated test passes. Entries without ground truth are listed and
    excluded; instances without generated tests never survive.
    """
    outcome = FilterOutcome()
    for system in sorted(system_patches):
        for instance_id in sorted(system_patches[system]):
            truth = ground_truth.get(system, {}).get(instance_id)
            if truth is None:
                outcome.missing_truth.append(f"{system}/{instance_id}")
                continue
            test_patch = tests.get(instance_id)
            if test_patch is None or not test_patch.test_ids:
                logger.info(f"{system}/{instance_id}: no generated tests; patch filtered out")
                survived = False
            else:
                survived = run_tests(instance_id, system_patches[system][instance_id], test_patch)
            outcome.rows.append(
                FilterRow(system=system, instance_id=instance_id, survived=survived, correct=truth)
            )
    if outcome.missing_truth:
        logger.warning(f"{len(outcome.missing_truth)} patch(es) without ground truth excluded")
    outcome.systems = filter_metrics(outcome.rows)
    return outcome


def make_patch_runner(instances: Mapping[str, InstanceSpec], config: RunConfig) -> PatchRunner:
    """Runner executing generated tests on old code plus a candidate code patch."""

    def _run(instance_id: str, code_patch: str, test_patch: TestPatch) -> bool:
        instance = instances[instance_id]
        try:
            with execution_runner.prepare(
                instance, [("candidate", code_patch), ("test", test_patch.diff)], config
            ) as ws:
                report = execution_runner.run(ws, test_patch.test_ids)
        except Exception as err:
            logger.warning(f"{instance_id}: candidate patch not runnable: {err}")
            return False
        return any(o.status == "pass" for o in report.outcomes)

    return _run


def evaluate_instance(
    instance: InstanceSpec,
    test_patch: str,
    config: Optional[RunConfig] = None,
    selected_variant: Optional[str] = None,
) -> TddResult:
    """
    Run contributed tests on old and new code, measure coverage and score.

    Raises:
        PatchApplyError: If the test or golden code patch does not apply
        ExecutionError: If the test command cannot run
    """
    config = config or RunConfig()
    flags: List[str] = []

    with execution_runner.prepare(instance, [("test", test_patch)], config) as ws_old:
        test_ids = resolve_contributed_tests(test_patch, build_index(str(ws_old.dir)))
        if not test_ids:
            logger.warning(f"{instance.instance_id}: test patch contributes no tests")
            return TddResult(
                instance_id=instance.instance_id,
                fail_to_pass=0,
                tdd_score=0.0,
                coverage_reliable=ws_old.coverage_reliable,
                flags=["no_contributed_tests"],
                selected_variant=selected_variant,
            )
        report_old = execution_runner.run(ws_old, test_ids)
        cov_old = execution_runner.coverage(ws_old, test_ids)

    with execution_runner.prepare(
        instance, [("test", test_patch), ("golden_code", instance.golden_code_patch)], config
    ) as ws_new:
        report_new = execution_runner.run(ws_new, test_ids)
        cov_new = execution_runner.coverage(ws_new, test_ids)

    ftp = fail_to_pass(report_old, report_new)
    reliable = cov_old.reliable and cov_new.reliable
    adequacy_value = adequacy(cov_old, cov_new, instance.golden_code_patch) if reliable else None
    if not reliable:
        flags.append("coverage_unreliable")
    elif adequacy_value is None:
        flags.append("adequacy_undefined")
    elif adequacy_value == 0.0:
        flags.append("zero_coverage")

    result = TddResult(
        instance_id=instance.instance_id,
        fail_to_pass=ftp,
        adequacy=adequacy_value,
        tdd_score=tdd_score_instance(ftp, adequacy_value, coverage_excluded=not reliable),
        coverage_reliable=reliable,
        test_ids=test_ids,
        flags=flags,
        classes={
            "old": execution_runner.classify(report_old),
            "new": execution_runner.classify(report_new),
        },
        selected_variant=selected_variant,
    )
    logger.info(
        f"{instance.instance_id}: fail_to_pass={ftp} adequacy={adequacy_value} "
        f"tdd_score={result.tdd_score:.3f}"
    )
    return result


def golden_validation(instance: InstanceSpec, config: Optional[RunConfig] = None) -> TddResult:
    """
    Evaluate the instance's own golden tests in place of generated ones.

    Raises:
        MetricError: If the instance has no golden test patch
    """
    if not instance.golden_test_patch:
        raise MetricError(
            f"Instance {instance.instance_id} has no golden tests",
            error_code="MISSING_GOLDEN_TESTS",
            details={"instance_id": instance.instance_id},
        )
    result = evaluate_instance(instance, instance.golden_test_patch, config)
    if result.fail_to_pass == 0:
        result.flags.append("not_fail_to_pass")
        logger.warning(f"{instance.instance_id}: golden tests do not go from failing to passing")
    return result


def suite_report(results: Sequence[TddResult], pass_at_5: Optional[int] = None) -> Dict[str, Any]:
    """Per-instance rows plus the suite summary row."""
    rows = [
        {
            "instance_id": r.instance_id,
            "fail_to_pass": r.fail_to_pass,
            "adequacy": r.adequacy,
            "tdd_score": r.tdd_score,
            "selected_variant": r.selected_variant,
            "classes": dict(r.classes),
            "flags": list(r.flags),
        }
        for r in sorted(results, key=lambda r: r.instance_id)
    ]
    n = len(results)
    ftp_count = sum(r.fail_to_pass for r in results)
    undefined = sum(1 for r in results if _adequacy_undefined(r))
    summary: Dict[str, Any] = {
        "instances": n,
        "fail_to_pass_count": ftp_count,
        "fail_to_pass_pct": round(100.0 * ftp_count / n, 1) if n else None,
        "tdd_score": round(tdd_score_suite(results), 1) if n > undefined else None,
        "adequacy_undefined": undefined,
        "pass_at_5": pass_at_5,
        "pass_at_5_pct": round(100.0 * pass_at_5 / n, 1) if n and pass_at_5 is not None else None,
    }
    return {"instances": rows, "summary": summary}


def _fmt(value: Optional[float], pattern: str = "{:.1f}") -> str:
    return "n/a" if value is None else pattern.format(value)


def render_suite_table(report: Dict[str, Any], label: str = "issue2test") -> str:
    summary = report["summary"]
    header = f"{'System':<20} {'# of fail-to-pass test':>24} {'%':>7} {'tddScore':>9} {'pass@5':>8}"
    pass_at_5 = summary.get("pass_at_5")
    row = (
        f"{label:<20} {summary['fail_to_pass_count']:>24} {_fmt(summary['fail_to_pass_pct']):>7} "
        f"{_fmt(summary['tdd_score']):>9} {'-' if pass_at_5 is None else pass_at_5:>8}"
    )
    return "\n".join([header, "-" * len(header), row])


def render_filter_table(outcome: FilterOutcome) -> str:
    header = (
        f"{'System':<24} {'Total':>6} {'Correct':>8} {'Survived':>9} "
        f"{'Precision':>10} {'Filtered':>10} {'Recall':>8}"
    )
    lines = [header, "-" * len(header)]
    for s in outcome.systems:
        lines.append(
            f"{s.system:<24} {s.total:>6} {s.correct:>8} {s.survived:>9} "
            f"{_fmt(s.base_precision, '{:.3f}'):>10} {_fmt(s.precision, '{:.3f}'):>10} "
            f"{_fmt(s.recall, '{:.3f}'):>8}"
        )
    if outcome.missing_truth:
        lines.append(f"missing ground truth: {', '.join(outcome.missing_truth)}")
    return "\n".join(lines)


def coverage_comparison(
    generated: Sequence[TddResult], golden: Sequence[TddResult]
) -> Dict[str, Dict[str, Optional[float]]]:
    """Mean adequacy of generated and golden tests, split by fail-to-pass outcome."""

    def _means(results: Sequence[TddResult]) -> Dict[str, Optional[float]]:
        def _avg(items: List[TddResult]) -> Optional[float]:
            values = [r.adequacy for r in items if r.adequacy is not None]
            return mean(values) if values else None

        return {
            "all": _avg(list(results)),
            "fail_to_pass": _avg([r for r in results if r.fail_to_pass]),
            "not_fail_to_pass": _avg([r for r in results if not r.fail_to_pass]),
        }

    return {"generated": _means(generated), "golden": _means(golden)}
