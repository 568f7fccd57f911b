from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from ..config import RunConfig, get_logger
from ..constants import (
    CLASS_ERROR,
    CLASS_FAILED_TO_GENERATE,
    FAILURE_GROUP_ORDER,
    VARIANT_TABLE,
)
from ..exceptions import ExecutionError, Issue2TestException
from ..models import (
    CandidateResult,
    InstanceSpec,
    Localization,
    Plan,
    SourceIndex,
    TestPatch,
    VariantSpec,
)
from . import execution_runner
from .linter import Linter
from .llm_gateway import LlmGateway
from .test_generator import generate_for_variant

logger = get_logger(__name__)

_Generated = Tuple[VariantSpec, Optional[TestPatch], Optional[dict]]


def build_variants() -> List[VariantSpec]:
    """The five prompt variants in priority order."""
    return [
        VariantSpec(
            id=variant_id,
            uses_planner=planner,
            uses_focal_loc=focal,
            uses_test_loc=test,
            priority_rank=rank,
        )
        for variant_id, (planner, focal, test, rank) in sorted(
            VARIANT_TABLE.items(), key=lambda item: item[1][3]
        )
    ]


def _rank(variant_id: str) -> int:
    entry = VARIANT_TABLE.get(variant_id)
    return entry[3] if entry else len(VARIANT_TABLE) + 1


def select(results: Sequence[CandidateResult]) -> Optional[str]:
    """
    Pick one failing candidate.

    Passing and ungenerated candidates are discarded. The first non-empty
    group in assertion, other, error order wins; inside it the lowest
    priority rank wins.
    """
    for group in FAILURE_GROUP_ORDER:
        members = [r for r in results if r.class_on_old == group]
        if members:
            return min(members, key=lambda r: (_rank(r.variant_id), r.variant_id)).variant_id
    return None


def evaluate_candidate(
    instance: InstanceSpec, variant_id: str, patch: TestPatch, config: RunConfig
) -> CandidateResult:
    """Run one candidate patch on the old code and classify it."""
    if not patch.test_ids:
        logger.warning(f"{instance.instance_id}/{variant_id}: candidate contributes no tests")
        error = ExecutionError(
            "Candidate patch adds or modifies no test function",
            error_code="NO_TEST_IDS",
            details={"target_file": patch.target_file},
        )
        return CandidateResult(
            variant_id=variant_id, patch=patch, error=error.to_dict(), class_on_old=CLASS_ERROR
        )
    try:
        with execution_runner.prepare(instance, [(variant_id, patch.diff)], config) as ws:
            report = execution_runner.run(ws, patch.test_ids)
    except Issue2TestException as e:
        logger.warning(f"{instance.instance_id}/{variant_id}: execution failed: {e.message}")
        return CandidateResult(
            variant_id=variant_id, patch=patch, error=e.to_dict(), class_on_old=CLASS_ERROR
        )
    return CandidateResult(
        variant_id=variant_id, patch=patch, class_on_old=execution_runner.classify(report)
    )


def run_variants(
    instance: InstanceSpec,
    index: SourceIndex,
    test_loc: Localization,
    focal_loc: Localization,
    gw: LlmGateway,
    linter: Optional[Linter],
    config: RunConfig,
    variants: Optional[Sequence[VariantSpec]] = None,
) -> Tuple[List[CandidateResult], Dict[str, Plan]]:
    """
    Generate every variant's candidate, then classify them on the old code.

    Generation runs in variant order so record-mode transcripts stay stable;
    candidate execution fans out over config.jobs threads.
    """
    variants = list(variants) if variants is not None else build_variants()
    generated: List[_Generated] = []
    plans: Dict[str, Plan] = {}
    for variant in variants:
        try:
            patch, plan = generate_for_variant(
                variant,
                instance.issue_text,
                test_loc,
                focal_loc,
                index,
                gw,
                linter,
                fix_imports=config.fix_imports,
                max_plan_turns=config.max_plan_turns,
                read_budget_bytes=config.read_body_budget_bytes,
                new_file_path=config.zero_shot_path,
            )
        except Issue2TestException as e:
            logger.warning(f"{instance.instance_id}/{variant.id}: generation failed: {e.message}")
            generated.append((variant, None, e.to_dict()))
            continue
        if plan is not None:
            plans[variant.id] = plan
        generated.append((variant, patch, None))

    def _evaluate(item: _Generated) -> CandidateResult:
        variant, patch, error = item
        if patch is None:
            return CandidateResult(
                variant_id=variant.id, error=error, class_on_old=CLASS_FAILED_TO_GENERATE
            )
        return evaluate_candidate(instance, variant.id, patch, config)

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        results = list(pool.map(_evaluate, generated))

    summary = ", ".join(f"{r.variant_id}={r.class_on_old}" for r in results)
    logger.info(f"{instance.instance_id}: candidates {summary}")
    return results, plans


def pass_at_k(success_sets: Mapping[str, Iterable[str]]) -> int:
    """Instances where at least one variant's test is fail-to-pass."""
    union: Set[str] = set()
    for members in success_sets.values():
        union.update(members)
    return len(union)


def variant_success_report(success_sets: Mapping[str, Iterable[str]]) -> Dict[str, Any]:
    """
    Overlap counts between per-variant fail-to-pass instance sets.

    Regions map each exact combination of variants (joined by '+') to the
    number of instances solved by exactly that combination.
    """
    ordered = sorted(success_sets.items(), key=lambda kv: (_rank(kv[0]), kv[0]))
    sets = {vid: set(members) for vid, members in ordered}
    ids = list(sets)
    union: Set[str] = set().union(*sets.values()) if sets else set()

    exclusive = {}
    for vid in ids:
        others = set().union(*(sets[o] for o in ids if o != vid)) if len(ids) > 1 else set()
        exclusive[vid] = len(sets[vid] - others)

    pairwise = {f"{a}&{b}": len(sets[a] & sets[b]) for a, b in combinations(ids, 2)}

    regions: Dict[str, int] = {}
    for instance_id in sorted(union):
        key = "+".join(vid for vid in ids if instance_id in sets[vid])
        regions[key] = regions.get(key, 0) + 1

    return {
        "variants": {vid: len(members) for vid, members in sets.items()},
        "exclusive": exclusive,
        "pairwise": pairwise,
        "regions": dict(sorted(regions.items())),
        "intersection_all": len(set.intersection(*sets.values())) if sets else 0,
        "union": len(union),
        "pass_at_k": pass_at_k(sets),
    }
