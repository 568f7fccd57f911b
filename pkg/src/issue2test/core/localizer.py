import re
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from Levenshtein import distance

from ..config import get_logger
from ..models import FunctionRef, Localization, SourceIndex
from .llm_gateway import LlmGateway
from .repo_model import list_test_files, lookup_function, normalize_path

logger = get_logger(__name__)

MAX_LOCALIZED_FILES = 10

_FENCE = re.compile(r"^```")
_BULLET = re.compile(r"^(?:[-*+]\s+|\d+[.)]\s+)")


def looks_like_path(entry: str) -> bool:
    """Entries worth repairing: a separator, a .py suffix or a :: qualifier."""
    return "/" in entry or entry.endswith(".py") or "::" in entry


def repair_name(candidate: str, pool: Iterable[str]) -> str:
    """
    Pool element with the smallest character edit distance to candidate.

    Ties go to the lexicographically smallest element.

    Raises:
        ValueError: If pool is empty
    """
    ordered = sorted(set(pool))
    if not ordered:
        raise ValueError("cannot repair a name against an empty pool")
    if candidate in ordered:
        return candidate
    return min(ordered, key=lambda name: (distance(candidate, name), name))


def parse_name_lines(text: str) -> List[str]:
    """One name per line; fences, bullets, numbering and backticks are ignored."""
    names = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or _FENCE.match(line):
            continue
        line = _BULLET.sub("", line).strip().strip("`").strip()
        if line:
            names.append(line)
    return names


def candidate_pool(index: SourceIndex, kind: str) -> List[str]:
    if kind == "test":
        return list_test_files(index)
    return [path for path in index.files if index.modules[path].parse_ok]


def _budgeted(lines: Sequence[str], budget_bytes: int) -> str:
    kept: List[str] = []
    used = 0
    for line in lines:
        size = len(line.encode("utf-8")) + 1
        if kept and used + size > budget_bytes:
            logger.debug(f"Prompt list truncated at {len(kept)}/{len(lines)} entries")
            break
        kept.append(line)
        used += size
    return "\n".join(kept)


def localize_files(
    issue: str,
    index: SourceIndex,
    kind: str,
    gw: LlmGateway,
    max_files: int = MAX_LOCALIZED_FILES,
    budget_bytes: int = 60_000,
    dropped: Optional[List[str]] = None,
) -> List[str]:
    """
    First localization call: pick files from the candidate pool.

    Outputs not in the pool are dropped (and appended to `dropped` when
    given); duplicates keep their first position; at most max_files survive.
    """
    pool = candidate_pool(index, kind)
    if not pool:
        logger.warning(f"No {kind} candidate files in index; skipping file localization")
        return []
    template_id = "test_loc_1" if kind == "test" else "focal_loc_1"
    response = gw.complete(
        template_id, {"issue": issue, "files": _budgeted(sorted(pool), budget_bytes)}
    )

    pool_set = set(pool)
    files: List[str] = []
    for name in parse_name_lines(response.text):
        path = normalize_path(name)
        if path not in pool_set:
            logger.warning(f"Dropping {kind} file not in pool: {name}")
            if dropped is not None:
                dropped.append(name)
            continue
        if path not in files:
            files.append(path)
    if len(files) > max_files:
        logger.debug(f"Capping {len(files)} localized {kind} files to {max_files}")
        files = files[:max_files]
    logger.info(f"Localized {len(files)} {kind} file(s)")
    return files


def _candidate_listing(index: SourceIndex, files: Sequence[str], kind: str) -> str:
    blocks = []
    for path in files:
        structure = index.modules[path]
        refs = [f for f in structure.functions if f.is_test or kind == "focal"]
        entries = "\n".join(f"  {path}::{ref.qualified_name}" for ref in refs)
        blocks.append(f"{path}\n{entries}" if entries else path)
    return "\n".join(blocks)


def _split_entry(entry: str) -> Tuple[str, Optional[str], Optional[str]]:
    """'path::Suite::func' -> (path, suite, func)."""
    parts = [p.strip() for p in entry.split("::")]
    path = parts[0]
    if len(parts) == 1:
        return path, None, None
    suite = "::".join(parts[1:-1]) or None
    return path, suite, parts[-1] or None


def localize_functions(
    issue: str,
    files: Sequence[str],
    index: SourceIndex,
    kind: str,
    gw: LlmGateway,
    max_files: int = MAX_LOCALIZED_FILES,
    budget_bytes: int = 60_000,
) -> Localization:
    """
    Second localization call: pick functions from the localized files.

    Hallucinated file names are repaired to the nearest pool file; lines that
    name no file and function names that do not resolve in their file are
    dropped.
    """
    loc = Localization(kind=kind, files=list(files))
    if not files:
        return loc
    pool = candidate_pool(index, kind)
    template_id = "test_loc_2" if kind == "test" else "focal_loc_2"
    listing = _budgeted(_candidate_listing(index, files, kind).splitlines(), budget_bytes)
    response = gw.complete(template_id, {"issue": issue, "candidates": listing})

    pool_set = set(pool)
    seen: Set[Tuple[str, Optional[str], str]] = set()
    stage_files: List[str] = []
    functions: List[FunctionRef] = []
    for entry in parse_name_lines(response.text):
        if not looks_like_path(entry):
            logger.warning(f"Dropping {kind} entry that names no file: {entry}")
            loc.dropped.append(entry)
            continue
        raw_path, suite, name = _split_entry(entry)
        path = normalize_path(raw_path)
        if path not in pool_set:
            repaired = repair_name(path, pool)
            logger.warning(f"Repaired hallucinated {kind} file {raw_path} -> {repaired}")
            loc.repaired.append((raw_path, repaired))
            path = repaired
        if path not in stage_files:
            stage_files.append(path)
        if name is None:
            continue
        ref = lookup_function(index.modules[path], name, suite)
        if ref is None:
            logger.warning(f"Dropping unresolved {kind} function {entry}")
            loc.dropped.append(entry)
            continue
        key = (ref.file, ref.suite, ref.name)
        if key not in seen:
            seen.add(key)
            functions.append(ref)

    if stage_files:
        loc.files = stage_files[:max_files]
    loc.functions = [f for f in functions if f.file in loc.files]
    logger.info(
        f"Localized {len(loc.functions)} {kind} function(s) across {len(loc.files)} file(s)"
    )
    return loc


def localize(
    issue: str,
    index: SourceIndex,
    kind: str,
    gw: LlmGateway,
    max_files: int = MAX_LOCALIZED_FILES,
    budget_bytes: int = 60_000,
) -> Localization:
    """Both localization calls for one kind ('test' or 'focal')."""
    dropped: List[str] = []
    files = localize_files(
        issue, index, kind, gw, max_files=max_files, budget_bytes=budget_bytes, dropped=dropped
    )
    loc = localize_functions(
        issue, files, index, kind, gw, max_files=max_files, budget_bytes=budget_bytes
    )
    loc.dropped = dropped + loc.dropped
    return loc


def dump_localization(loc: Localization) -> Dict[str, Any]:
    return {
        "kind": loc.kind,
        "files": list(loc.files),
        "functions": [{"file": f.file, "suite": f.suite, "name": f.name} for f in loc.functions],
        "dropped": list(loc.dropped),
        "repaired": [list(pair) for pair in loc.repaired],
    }
