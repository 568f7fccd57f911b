import json
import os
import re
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from lxml import etree

from ..config import RunConfig, get_logger
from ..constants import (
    CLASS_ASSERTION,
    CLASS_ERROR,
    CLASS_OTHER,
    CLASS_PASS,
    DEFAULT_COVERAGE_COMMAND_TEMPLATES,
    DEFAULT_TEST_COMMAND_TEMPLATE,
)
from ..exceptions import ExecutionError, PatchApplyError
from ..models import CoverageReport, ExecutionReport, InstanceSpec, TestOutcome
from .diffs import apply_patch_to_tree
from .repo_model import normalize_path

logger = get_logger(__name__)

LOG_TAIL_CHARS = 20_000
EXCERPT_CHARS = 2_000
ASSERTION_TOKEN = "AssertionError"

_PARAMS = re.compile(r"\[.*\]$")
_SUMMARY_PREFIX = re.compile(
    r"^(PASSED|FAILED|ERROR|SKIPPED|XFAIL|XPASS)\s+(\S+::\S+?)(?:\s+-\s+(.*))?$"
)
_SUMMARY_SUFFIX = re.compile(r"^(\S+::\S+)\s+(PASSED|FAILED|ERROR|SKIPPED|XFAIL|XPASS)\b")

PatchInput = Union[str, Tuple[str, str]]


@dataclass
class Workspace:
    """Isolated copy of a snapshot with patches applied in order."""

    root: Path
    dir: Path
    instance_id: str
    applied_patches: List[str] = field(default_factory=list)
    test_command_template: str = DEFAULT_TEST_COMMAND_TEMPLATE
    coverage_command_templates: Tuple[str, ...] = DEFAULT_COVERAGE_COMMAND_TEMPLATES
    timeout_s: float = 600.0
    coverage_reliable: bool = True
    runs: int = 0

    def __enter__(self) -> "Workspace":
        return self

    def __exit__(self, *exc) -> None:
        cleanup(self)


def _strip_params(name: str) -> str:
    return _PARAMS.sub("", name)


def prepare(
    instance: InstanceSpec,
    patches: Sequence[PatchInput] = (),
    config: Optional[RunConfig] = None,
) -> Workspace:
    """
    Copy the snapshot into a fresh directory and apply patches in order.

    Patches are diff texts or (patch_id, diff) pairs.

    Raises:
        ExecutionError: If the snapshot is missing
        PatchApplyError: If any patch is rejected; details carry the reject hunk
    """
    config = config or RunConfig()
    snapshot = Path(instance.snapshot)
    if not snapshot.is_dir():
        raise ExecutionError(
            f"Snapshot not found: {instance.snapshot}",
            error_code="SNAPSHOT_NOT_FOUND",
            details={"instance_id": instance.instance_id},
        )

    root = Path(tempfile.mkdtemp(prefix=f"issue2test-{instance.instance_id.replace('/', '_')}-"))
    repo_dir = root / "repo"
    shutil.copytree(
        snapshot,
        repo_dir,
        ignore=shutil.ignore_patterns("__pycache__", "*.pyc", ".pytest_cache"),
    )

    run = instance.run
    reliable = run.coverage_reliable
    if reliable is None:
        reliable = instance.repo not in config.coverage_unreliable_repos
    ws = Workspace(
        root=root,
        dir=repo_dir,
        instance_id=instance.instance_id,
        test_command_template=run.test_command_template or config.test_command_template,
        coverage_command_templates=tuple(
            run.coverage_command_templates or config.coverage_command_templates
        ),
        timeout_s=run.timeout_s or config.run_timeout_s,
        coverage_reliable=reliable,
    )

    for i, item in enumerate(patches):
        patch_id, text = item if isinstance(item, tuple) else (f"patch-{i}", item)
        try:
            touched = apply_patch_to_tree(str(repo_dir), text)
        except PatchApplyError as e:
            cleanup(ws)
            e.details.setdefault("patch_id", patch_id)
            logger.error(f"{instance.instance_id}: patch {patch_id} rejected: {e.message}")
            raise
        ws.applied_patches.append(patch_id)
        logger.debug(f"{instance.instance_id}: applied {patch_id} to {touched}")
    return ws


def render_command(template: str, test_ids: Sequence[str] = (), **values: str) -> List[str]:
    """Split a command template and substitute placeholders; {test_ids} expands to one argument per id."""
    values.setdefault("python", sys.executable)
    argv: List[str] = []
    for token in shlex.split(template):
        if token == "{test_ids}":
            argv.extend(test_ids)
            continue
        for key, value in values.items():
            token = token.replace("{" + key + "}", str(value))
        argv.append(token)
    return argv


def _junit_key(test_id: str) -> Tuple[str, str]:
    """(classname, name) pytest writes for a test id."""
    parts = test_id.split("::")
    path, suites, name = normalize_path(parts[0]), parts[1:-1], parts[-1]
    module = path[: -len(".py")] if path.endswith(".py") else path
    classname = ".".join([module.replace("/", ".")] + suites)
    return classname, _strip_params(name)


def _failure_kind(text: str) -> str:
    return "assertion" if ASSERTION_TOKEN in text else "other"


def _merge(existing: Optional[TestOutcome], new: TestOutcome) -> TestOutcome:
    """Parametrized cases collapse to their worst status."""
    if existing is None:
        return new
    rank = {"pass": 0, "fail": 1, "error": 2}
    return new if rank[new.status] > rank[existing.status] else existing


def parse_junit_report(path: Union[str, Path], test_ids: Sequence[str]) -> Dict[str, TestOutcome]:
    """
    Outcomes of the requested tests found in a JUnit XML report.

    Skipped cases count as passing. Requested tests missing from the report
    are absent from the result.

    Raises:
        ExecutionError: If the report cannot be parsed
    """
    try:
        tree = etree.parse(str(path))
    except (OSError, etree.XMLSyntaxError) as e:
        raise ExecutionError(f"Unreadable JUnit report {path}: {e}", error_code="BAD_JUNIT") from e

    wanted = {_junit_key(tid): tid for tid in test_ids}
    found: Dict[str, TestOutcome] = {}
    for case in tree.iter("testcase"):
        key = (case.get("classname", ""), _strip_params(case.get("name", "")))
        test_id = wanted.get(key)
        if test_id is None:
            continue
        failure = case.find("failure")
        error = case.find("error")
        if failure is not None:
            text = f"{failure.get('message', '')}\n{failure.text or ''}"
            outcome = TestOutcome(
                test_id=test_id,
                status="fail",
                failure_kind=_failure_kind(text),
                log_excerpt=text.strip()[:EXCERPT_CHARS],
            )
        elif error is not None:
            text = f"{error.get('message', '')}\n{error.text or ''}"
            outcome = TestOutcome(
                test_id=test_id,
                status="error",
                failure_kind="other",
                log_excerpt=text.strip()[:EXCERPT_CHARS],
            )
        else:
            outcome = TestOutcome(test_id=test_id, status="pass")
        found[test_id] = _merge(found.get(test_id), outcome)
    return found


def parse_summary_lines(output: str, test_ids: Sequence[str]) -> Dict[str, TestOutcome]:
    """Outcomes from '-rA' summary or verbose status lines."""
    wanted = {tid: tid for tid in test_ids}
    found: Dict[str, TestOutcome] = {}
    for raw in output.splitlines():
        line = raw.strip()
        reason = ""
        match = _SUMMARY_PREFIX.match(line)
        if match:
            status, node, reason = match.group(1), match.group(2), match.group(3) or ""
        else:
            match = _SUMMARY_SUFFIX.match(line)
            if not match:
                continue
            node, status = match.group(1), match.group(2)
        test_id = wanted.get(_strip_params(node))
        if test_id is None:
            continue
        if status in ("PASSED", "SKIPPED", "XFAIL", "XPASS"):
            outcome = TestOutcome(test_id=test_id, status="pass")
        elif status == "FAILED":
            kind = "assertion" if ASSERTION_TOKEN in reason or reason.startswith("assert ") else "other"
            outcome = TestOutcome(test_id=test_id, status="fail", failure_kind=kind, log_excerpt=reason)
        else:
            outcome = TestOutcome(test_id=test_id, status="error", failure_kind="other", log_excerpt=reason)
        found[test_id] = _merge(found.get(test_id), outcome)
    return found


_INHERITED_ENV_PREFIXES = ("COV_CORE_", "COVERAGE_", "PYTEST_")


def _env() -> Dict[str, str]:
    """Parent environment minus any enclosing pytest or coverage session settings."""
    env = {k: v for k, v in os.environ.items() if not k.startswith(_INHERITED_ENV_PREFIXES)}
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    return env


def _as_text(value: Union[str, bytes, None]) -> str:
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    return value or ""


def _exec(argv: List[str], cwd: Path, timeout_s: float) -> Tuple[int, str, bool]:
    """(exit code, combined output, timed out)."""
    try:
        proc = subprocess.run(
            argv, cwd=cwd, capture_output=True, text=True, timeout=timeout_s, env=_env()
        )
    except subprocess.TimeoutExpired as e:
        return -1, _as_text(e.stdout) + _as_text(e.stderr), True
    except OSError as e:
        raise ExecutionError(
            f"Cannot execute {argv[0]}: {e}", error_code="COMMAND_UNAVAILABLE", details={"argv": argv}
        ) from e
    return proc.returncode, proc.stdout + proc.stderr, False


def run(ws: Workspace, test_ids: Sequence[str]) -> ExecutionReport:
    """
    Run exactly the given tests in the workspace.

    Every requested id gets one outcome; ids the runner never reported are
    errors in the collect phase, or timeouts when the command timed out.

    Raises:
        ExecutionError: If test_ids is empty
    """
    if not test_ids:
        raise ExecutionError(
            "No test ids to run",
            error_code="NO_TEST_IDS",
            details={"instance_id": ws.instance_id},
        )
    ws.runs += 1
    junit_out = ws.root / f"junit-{ws.runs}.xml"
    argv = render_command(ws.test_command_template, test_ids, junit_out=str(junit_out))
    logger.debug(f"{ws.instance_id}: running {len(test_ids)} test(s)")

    started = time.monotonic()
    exit_code, output, timed_out = _exec(argv, ws.dir, ws.timeout_s)
    wall_time = time.monotonic() - started

    found: Dict[str, TestOutcome] = {}
    if junit_out.exists():
        try:
            found = parse_junit_report(junit_out, test_ids)
        except ExecutionError as e:
            logger.warning(f"{ws.instance_id}: {e.message}; falling back to summary lines")
    if not found:
        found = parse_summary_lines(output, test_ids)

    outcomes = []
    for test_id in test_ids:
        outcome = found.get(test_id)
        if outcome is None:
            if timed_out:
                outcome = TestOutcome(
                    test_id=test_id, status="error", failure_kind="timeout", log_excerpt="timeout"
                )
            else:
                outcome = TestOutcome(
                    test_id=test_id,
                    status="error",
                    phase="collect",
                    failure_kind="other",
                    log_excerpt=output[-EXCERPT_CHARS:],
                )
        outcomes.append(outcome)

    if timed_out:
        logger.warning(f"{ws.instance_id}: test command timed out after {ws.timeout_s}s")
    report = ExecutionReport(
        outcomes=outcomes, exit_code=exit_code, wall_time=wall_time, log=output[-LOG_TAIL_CHARS:]
    )
    logger.info(
        f"{ws.instance_id}: {sum(o.status == 'pass' for o in outcomes)}/{len(outcomes)} passed "
        f"(exit {exit_code}, {wall_time:.1f}s)"
    )
    return report


def classify(report: ExecutionReport) -> str:
    """pass, assertion_failure, other_failure or error for a whole report."""
    outcomes = report.outcomes
    if not outcomes:
        return CLASS_ERROR
    if all(o.status == "pass" for o in outcomes):
        return CLASS_PASS
    collect_error = any(o.status == "error" and o.phase == "collect" for o in outcomes)
    if not collect_error and any(o.status == "fail" and o.failure_kind == "assertion" for o in outcomes):
        return CLASS_ASSERTION
    if any(o.status == "fail" and o.failure_kind != "assertion" for o in outcomes):
        return CLASS_OTHER
    return CLASS_ERROR


def _lines(values: Iterable) -> Set[int]:
    return {int(v) for v in values}


def parse_coverage_json(path: Union[str, Path], base_dir: Union[str, Path, None] = None) -> CoverageReport:
    """
    Covered and coverable lines per file from a coverage JSON report.

    Missing or invalid reports yield an empty report flagged unreliable.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        files = data["files"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        logger.warning(f"Coverage report unusable ({path}): {e.__class__.__name__}")
        return CoverageReport(reliable=False)

    base = Path(base_dir).resolve() if base_dir else None
    covered: Dict[str, Set[int]] = {}
    coverable: Dict[str, Set[int]] = {}
    for raw, info in files.items():
        file_path = Path(raw)
        if file_path.is_absolute():
            if base is None:
                continue
            try:
                file_path = file_path.resolve().relative_to(base)
            except ValueError:
                continue
        rel = normalize_path(file_path.as_posix())
        executed = _lines(info.get("executed_lines", []))
        missing = _lines(info.get("missing_lines", []))
        covered[rel] = executed
        coverable[rel] = executed | missing
    return CoverageReport(covered=covered, coverable=coverable)


def coverage(ws: Workspace, test_ids: Sequence[str]) -> CoverageReport:
    """Line coverage of the given tests; never raises on tool failure."""
    if not ws.coverage_reliable:
        logger.info(f"{ws.instance_id}: coverage skipped by policy")
        return CoverageReport(tests_run=list(test_ids), reliable=False)

    ws.runs += 1
    coverage_out = ws.root / f"coverage-{ws.runs}.json"
    coverage_data = ws.root / f"coverage-{ws.runs}.data"
    for template in ws.coverage_command_templates:
        argv = render_command(
            template,
            test_ids,
            coverage_out=str(coverage_out),
            coverage_data=str(coverage_data),
        )
        try:
            exit_code, output, timed_out = _exec(argv, ws.dir, ws.timeout_s)
        except ExecutionError as e:
            logger.warning(f"{ws.instance_id}: coverage command unavailable: {e.message}")
            return CoverageReport(tests_run=list(test_ids), reliable=False)
        if timed_out:
            logger.warning(f"{ws.instance_id}: coverage command timed out")
            return CoverageReport(tests_run=list(test_ids), reliable=False)
        logger.debug(f"{ws.instance_id}: coverage step exited {exit_code}")

    report = parse_coverage_json(coverage_out, ws.dir)
    report.tests_run = list(test_ids)
    return report


def cleanup(ws: Workspace) -> None:
    shutil.rmtree(ws.root, ignore_errors=True)
