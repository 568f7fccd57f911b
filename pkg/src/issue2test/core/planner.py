"""Self-reflective action planner.

A plan is a list of READ/WRITE/MODIFY actions. The model proposes reads,
the plan is validated against the index, and the model reflects on the
validation feedback until it declares itself satisfied or the turn cap is
reached. The final plan always carries exactly one write-or-modify action.
"""

import re
from statistics import mean
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..config import get_logger
from ..constants import (
    TRUNCATION_MARKER,
    UNAVAILABLE_MARKER,
    VERDICT_SATISFIED,
    VERDICT_UNSURE,
    VERDICTS,
    ZERO_SHOT_TEST_PATH,
)
from ..exceptions import NotFoundError
from ..models import Action, Localization, Plan, SourceIndex, ValidationEntry, ValidationReport
from .llm_gateway import LlmGateway
from .repo_model import list_test_files, lookup_function, normalize_path, read_function_source

logger = get_logger(__name__)

MAX_PLAN_TURNS = 5
DEFAULT_TEST_NAME = "test_issue_reproduction"

_ACTION_LINE = re.compile(r"^(READ|WRITE|MODIFY)\s+(\S+)\s*$", re.IGNORECASE)
_VERDICT_LINE = re.compile(r"VERDICT\s*:\s*\**\s*(Satisfied|Unsatisfied|Unsure)\b", re.IGNORECASE)
_BULLET = re.compile(r"^(?:[-*+]\s+|\d+[.)]\s+)")


def parse_actions(text: str) -> Tuple[List[Action], List[str]]:
    """Parse action lines; returns (actions, unparseable lines)."""
    actions: List[Action] = []
    rejected: List[str] = []
    for raw in text.splitlines():
        line = _BULLET.sub("", raw.strip()).strip().strip("`").strip()
        if not line or line.startswith("```") or _VERDICT_LINE.search(line):
            continue
        match = _ACTION_LINE.match(line)
        parts = match.group(2).split("::") if match else []
        if not match or len(parts) < 2 or not parts[-1]:
            rejected.append(line)
            continue
        actions.append(
            Action(
                kind=match.group(1).lower(),
                file=normalize_path(parts[0]),
                function=parts[-1],
                suite="::".join(parts[1:-1]) or None,
            )
        )
    return actions, rejected


def parse_verdict(text: str) -> str:
    """Last declared verdict; anything unparseable counts as Unsure."""
    found = _VERDICT_LINE.findall(text)
    if not found:
        return VERDICT_UNSURE
    wanted = found[-1].lower()
    return next(v for v in VERDICTS if v.lower() == wanted)


def truncate_body(body: str, budget_bytes: int) -> str:
    """Keep leading lines within budget and mark the cut."""
    if len(body.encode("utf-8")) <= budget_bytes:
        return body
    kept: List[str] = []
    used = 0
    for line in body.splitlines():
        size = len(line.encode("utf-8")) + 1
        if used + size > budget_bytes:
            break
        kept.append(line)
        used += size
    kept.append(TRUNCATION_MARKER)
    return "\n".join(kept)


def read_action_body(index: SourceIndex, action: Action, budget_bytes: int) -> str:
    """Source of a read target, or the unavailable marker when it cannot be read."""
    structure = index.modules.get(action.file)
    ref = lookup_function(structure, action.function, action.suite) if structure else None
    if ref is None:
        logger.warning(f"Read target unavailable: {action.render()}")
        return UNAVAILABLE_MARKER
    try:
        return truncate_body(read_function_source(index, ref), budget_bytes)
    except NotFoundError as e:
        logger.warning(f"Read target unavailable: {action.render()} ({e.message})")
        return UNAVAILABLE_MARKER


def render_context(index: SourceIndex, actions: Sequence[Action], budget_bytes: int) -> str:
    blocks = []
    for action in actions:
        if action.kind != "read":
            continue
        target = action.render().split(" ", 1)[1]
        blocks.append(f"### {target}\n{read_action_body(index, action, budget_bytes)}")
    return "\n\n".join(blocks) if blocks else "(none)"


def _dedup(actions: Sequence[Action]) -> List[Action]:
    seen = set()
    out = []
    for action in actions:
        if action not in seen:
            seen.add(action)
            out.append(action)
    return out


def seed_plan(test_loc: Localization, focal_loc: Localization) -> Plan:
    """Read actions for every localized function, focal functions first."""
    reads = [
        Action(kind="read", file=ref.file, function=ref.name, suite=ref.suite)
        for ref in list(focal_loc.functions) + list(test_loc.functions)
    ]
    return Plan(actions=_dedup(reads))


def propose_initial(issue: str, context: str, gw: LlmGateway) -> Plan:
    """Initial plan from the model; only read actions are allowed at this stage."""
    response = gw.complete("plan_initial", {"issue": issue, "context": context})
    actions, rejected = parse_actions(response.text)
    log = [ValidationEntry(subject=line, accepted=False, reason="unparseable") for line in rejected]
    coerced = []
    for action in actions:
        if action.kind != "read":
            logger.warning(f"Coercing {action.render()} to read in initial plan")
            log.append(
                ValidationEntry(subject=action.render(), accepted=False, reason="coerced to read")
            )
            action = action.model_copy(update={"kind": "read"})
        coerced.append(action)
    return Plan(actions=_dedup(coerced), validation_log=log)


def validate_plan(
    plan: Plan, index: SourceIndex, new_files: Sequence[str] = ()
) -> ValidationReport:
    """
    Check every action against the index.

    Reads and modifies must resolve to an existing function. Writes must
    target an existing file (or one of new_files) and a name not yet defined
    there.
    """
    allowed_new = {normalize_path(p) for p in new_files}
    report = ValidationReport()
    for action in plan.actions:
        subject = action.render()
        structure = index.modules.get(action.file)
        if structure is None:
            if action.kind == "write" and action.file in allowed_new:
                report.entries.append(ValidationEntry(subject=subject, accepted=True))
            else:
                report.entries.append(
                    ValidationEntry(subject=subject, accepted=False, reason="missing file")
                )
            continue
        ref = lookup_function(structure, action.function, action.suite)
        if action.kind == "write":
            if ref is not None and ref.suite == action.suite:
                report.entries.append(
                    ValidationEntry(
                        subject=subject, accepted=False, reason="function already exists"
                    )
                )
            elif action.suite and not any(s.name == action.suite for s in structure.suites):
                report.entries.append(
                    ValidationEntry(subject=subject, accepted=False, reason="missing suite")
                )
            else:
                report.entries.append(ValidationEntry(subject=subject, accepted=True))
        elif ref is None:
            report.entries.append(
                ValidationEntry(subject=subject, accepted=False, reason="missing function")
            )
        else:
            report.entries.append(ValidationEntry(subject=subject, accepted=True))
    return report


def _accepted(plan: Plan, report: ValidationReport) -> List[Action]:
    return [a for a, e in zip(plan.actions, report.entries) if e.accepted]


def reflect_improve(
    plan: Plan, report: ValidationReport, issue: str, context: str, gw: LlmGateway
) -> Tuple[Plan, str]:
    """One reflect-and-improve turn; returns the revised plan and the model's verdict."""
    response = gw.complete(
        "plan_reflect",
        {
            "issue": issue,
            "context": context,
            "plan": plan.render() or "(empty)",
            "feedback": report.render(),
        },
    )
    actions, rejected = parse_actions(response.text)
    verdict = parse_verdict(response.text)
    log = [ValidationEntry(subject=line, accepted=False, reason="unparseable") for line in rejected]
    return Plan(actions=_dedup(actions), validation_log=log), verdict


def count_actions(actions: Sequence[Action]) -> Dict[str, int]:
    stats = {"read": 0, "write": 0, "modify": 0}
    for action in actions:
        stats[action.kind] += 1
    return stats


def default_target_file(
    test_loc: Optional[Localization], index: SourceIndex, fallback: str = ZERO_SHOT_TEST_PATH
) -> str:
    """Top localized test file, else the first test file of the index, else fallback."""
    if test_loc is not None and test_loc.files:
        return test_loc.files[0]
    test_files = list_test_files(index)
    return test_files[0] if test_files else normalize_path(fallback)


def free_test_name(index: SourceIndex, target_file: str, base: str = DEFAULT_TEST_NAME) -> str:
    """base, or base_2, base_3, ... when the target file already defines that name."""
    structure = index.modules.get(target_file)
    taken = {f.name for f in structure.functions} if structure else set()
    name, n = base, 1
    while name in taken:
        n += 1
        name = f"{base}_{n}"
    return name


def _fallback_read(
    target: Action, index: SourceIndex, focal_loc: Optional[Localization]
) -> Optional[Action]:
    """First test of the target file, else a focal function, else any function of the index."""
    structure = index.modules.get(target.file)
    if structure and structure.test_functions:
        ref = structure.test_functions[0]
    else:
        focal_files = list(focal_loc.files) if focal_loc is not None else []
        candidates = [
            f
            for path in focal_files + [p for p in index.files if p not in focal_files]
            if path in index.modules
            for f in index.modules[path].functions
            if not f.is_test
        ]
        if not candidates:
            return None
        ref = candidates[0]
    return Action(kind="read", file=ref.file, function=ref.name, suite=ref.suite)


def finalize_plan(
    actions: Sequence[Action],
    seed: Plan,
    index: SourceIndex,
    target_file: str,
    log: List[ValidationEntry],
    focal_loc: Optional[Localization] = None,
) -> List[Action]:
    """Keep validated reads and the first write/modify; fill in defaults when missing."""
    reads = _dedup([a for a in actions if a.kind == "read"])
    targets = [a for a in actions if a.kind != "read"]
    for extra in targets[1:]:
        logger.warning(f"Dropping extra target action {extra.render()}")
        log.append(ValidationEntry(subject=extra.render(), accepted=False, reason="extra target"))

    if targets:
        target = targets[0]
    else:
        target = Action(kind="write", file=target_file, function=free_test_name(index, target_file))
        logger.warning(f"No write/modify action survived; defaulting to {target.render()}")
        log.append(ValidationEntry(subject=target.render(), accepted=True, reason="default target"))

    if not reads:
        reads = list(seed.reads)
    if not reads:
        fallback = _fallback_read(target, index, focal_loc)
        if fallback is None:
            logger.warning("Index holds no function to read; plan has no read action")
        else:
            reads = [fallback]
    return reads + [target]



def run_planner(
    issue: str,
    test_loc: Localization,
    focal_loc: Localization,
    index: SourceIndex,
    gw: LlmGateway,
    max_turns: int = MAX_PLAN_TURNS,
    read_budget_bytes: int = 4_000,
    new_file_path: str = ZERO_SHOT_TEST_PATH,
) -> Plan:
    """
    Seed, propose, then validate and reflect up to max_turns times.

    The returned plan has turns == len(verdicts) <= max_turns, only validated
    actions, and stats counted on the last model-proposed plan.
    """
    seed = seed_plan(test_loc, focal_loc)
    target_file = default_target_file(test_loc, index, new_file_path)
    new_files = [target_file] if target_file not in index.modules else []

    context = render_context(index, seed.actions, read_budget_bytes)
    current = propose_initial(issue, context, gw)
    log: List[ValidationEntry] = list(current.validation_log)
    verdicts: List[str] = []
    model_actions: List[Action] = list(current.actions)
    latest_valid: List[Action] = []

    for turn in range(1, max_turns + 1):
        report = validate_plan(current, index, new_files)
        log.extend(e for e in report.entries if not e.accepted)
        accepted = _accepted(current, report)
        if accepted:
            latest_valid = accepted
        reads = _dedup(list(seed.actions) + [a for a in latest_valid if a.kind == "read"])
        context = render_context(index, reads, read_budget_bytes)

        revised, verdict = reflect_improve(current, report, issue, context, gw)
        verdicts.append(verdict)
        log.extend(revised.validation_log)
        model_actions = list(revised.actions)
        current = revised
        logger.debug(f"Planner turn {turn}: {len(revised.actions)} action(s), verdict {verdict}")
        if verdict == VERDICT_SATISFIED:
            break

    report = validate_plan(current, index, new_files)
    log.extend(e for e in report.entries if not e.accepted)
    accepted = _accepted(current, report)
    if accepted:
        latest_valid = accepted

    final_actions = finalize_plan(latest_valid, seed, index, target_file, log, focal_loc)
    plan = Plan(
        actions=final_actions,
        verdicts=verdicts,
        turns=len(verdicts),
        validation_log=log,
        stats=count_actions(model_actions),
    )
    logger.info(
        f"Planner finished after {plan.turns} turn(s): {len(plan.reads)} read(s), "
        f"target {plan.target.render() if plan.target else 'none'}"
    )
    return plan


def dump_plan(plan: Plan) -> Dict[str, Any]:
    return {
        "actions": [
            {"kind": a.kind, "file": a.file, "suite": a.suite, "function": a.function}
            for a in plan.actions
        ],
        "verdicts": list(plan.verdicts),
        "turns": plan.turns,
        "stats": dict(plan.stats),
        "validation_log": [e.model_dump(mode="json") for e in plan.validation_log],
    }


def action_count_summary(plans: Sequence[Plan]) -> Dict[str, Dict[str, float]]:
    """Average, max and min count per action kind across plans."""
    summary: Dict[str, Dict[str, float]] = {}
    for kind in ("read", "write", "modify"):
        counts = [p.stats.get(kind, 0) for p in plans]
        summary[kind] = {
            "avg": round(mean(counts), 2) if counts else 0.0,
            "max": max(counts) if counts else 0,
            "min": min(counts) if counts else 0,
        }
    return summary


def turn_distribution(plans: Sequence[Plan]) -> Dict[int, int]:
    """Number of plans per reflect-turn count."""
    dist: Dict[int, int] = {}
    for plan in plans:
        dist[plan.turns] = dist.get(plan.turns, 0) + 1
    return dict(sorted(dist.items()))
