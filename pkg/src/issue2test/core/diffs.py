"""Unified diff generation, parsing and application.

Generation follows git's layout ("diff --git" header, a/ b/ prefixes,
3 context lines). Application is exact-context with offset search, which
is enough for patches produced against the same snapshot.
"""

import difflib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

from ..config import get_logger
from ..exceptions import EmptyPatchError, PatchApplyError
from .repo_model import normalize_path

logger = get_logger(__name__)

NO_EOL_MARKER = "\\ No newline at end of file"
DEV_NULL = "/dev/null"

_HUNK_HEADER = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def old_block(self) -> List[str]:
        return [text for tag, text in self.lines if tag in (" ", "-")]

    @property
    def new_block(self) -> List[str]:
        return [text for tag, text in self.lines if tag in (" ", "+")]


@dataclass
class FileDiff:
    old_path: Optional[str]
    new_path: Optional[str]
    hunks: List[Hunk] = field(default_factory=list)

    @property
    def path(self) -> str:
        return self.new_path or self.old_path or ""

    @property
    def is_new(self) -> bool:
        return self.old_path is None

    @property
    def is_deleted(self) -> bool:
        return self.new_path is None

    def deleted_lines(self) -> Set[int]:
        """Old-file line numbers removed by this diff."""
        return self._line_numbers()[0]

    def added_lines(self) -> Set[int]:
        """New-file line numbers introduced by this diff."""
        return self._line_numbers()[1]

    def touched_new_lines(self) -> Set[int]:
        """Added lines plus the new-file position of every pure deletion."""
        touched = set(self.added_lines())
        for hunk in self.hunks:
            new_no = hunk.new_start
            for tag, _ in hunk.lines:
                if tag == "-":
                    touched.add(max(new_no, 1))
                else:
                    new_no += 1
        return touched

    def _line_numbers(self) -> Tuple[Set[int], Set[int]]:
        deleted: Set[int] = set()
        added: Set[int] = set()
        for hunk in self.hunks:
            old_no, new_no = hunk.old_start, hunk.new_start
            for tag, _ in hunk.lines:
                if tag == " ":
                    old_no += 1
                    new_no += 1
                elif tag == "-":
                    deleted.add(old_no)
                    old_no += 1
                elif tag == "+":
                    added.add(new_no)
                    new_no += 1
        return deleted, added


def _with_eol_markers(lines: List[str]) -> List[str]:
    out = []
    for line in lines:
        if line.endswith("\n"):
            out.append(line)
        else:
            out.append(line + "\n")
            out.append(NO_EOL_MARKER + "\n")
    return out


def make_unified_diff(old_text: str, new_text: str, path: str, context: int = 3) -> str:
    """
    Git-style unified diff turning old_text into new_text for one file.

    An empty old_text produces a new-file diff.

    Raises:
        EmptyPatchError: If the texts are identical
    """
    if old_text == new_text:
        raise EmptyPatchError(
            f"empty patch for {path}", error_code="EMPTY_PATCH", details={"path": path}
        )
    path = normalize_path(path)
    is_new = old_text == ""
    body = list(
        difflib.unified_diff(
            old_text.splitlines(keepends=True),
            new_text.splitlines(keepends=True),
            n=context,
        )
    )[2:]
    header = [f"diff --git a/{path} b/{path}\n"]
    if is_new:
        header.append("new file mode 100644\n")
        header.append(f"--- {DEV_NULL}\n")
    else:
        header.append(f"--- a/{path}\n")
    header.append(f"+++ b/{path}\n")

    out = list(header)
    for line in body:
        if line.startswith("@@"):
            out.append(line)
        else:
            out.extend(_with_eol_markers([line]))
    return "".join(out)


def _strip_prefix(raw: str) -> Optional[str]:
    raw = raw.split("\t")[0].strip()
    if raw == DEV_NULL:
        return None
    if raw.startswith(("a/", "b/")):
        raw = raw[2:]
    return normalize_path(raw)


def parse_patch(patch_text: str) -> List[FileDiff]:
    """
    Parse a (possibly multi-file) unified diff.

    Raises:
        PatchApplyError: If a hunk is truncated or malformed
    """
    lines = patch_text.splitlines(keepends=True)
    diffs: List[FileDiff] = []
    current: Optional[FileDiff] = None
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            current = FileDiff(old_path=_strip_prefix(line[4:]), new_path=_strip_prefix(lines[i + 1][4:]))
            diffs.append(current)
            i += 2
            continue
        match = _HUNK_HEADER.match(line)
        if match and current is not None:
            hunk = Hunk(
                old_start=int(match.group(1)),
                old_len=int(match.group(2)) if match.group(2) is not None else 1,
                new_start=int(match.group(3)),
                new_len=int(match.group(4)) if match.group(4) is not None else 1,
            )
            i += 1
            old_seen = new_seen = 0
            while i < len(lines) and (old_seen < hunk.old_len or new_seen < hunk.new_len):
                body = lines[i]
                tag = body[:1]
                if body.startswith("\\"):
                    i += 1
                    continue
                if tag not in (" ", "-", "+"):
                    if body.strip() == "":
                        # Some tools strip the leading space of blank context lines.
                        tag, body = " ", " " + body
                    else:
                        raise PatchApplyError(
                            f"Malformed hunk in {current.path}: {body.rstrip()!r}",
                            error_code="MALFORMED_PATCH",
                        )
                text = body[1:]
                if i + 1 < len(lines) and lines[i + 1].startswith("\\"):
                    text = text[:-1] if text.endswith("\n") else text
                hunk.lines.append((tag, text))
                if tag in (" ", "-"):
                    old_seen += 1
                if tag in (" ", "+"):
                    new_seen += 1
                i += 1
            if old_seen != hunk.old_len or new_seen != hunk.new_len:
                raise PatchApplyError(
                    f"Truncated hunk in {current.path}",
                    error_code="MALFORMED_PATCH",
                    details={"hunk": match.group(0)},
                )
            while i < len(lines) and lines[i].startswith("\\"):
                i += 1
            current.hunks.append(hunk)
            continue
        i += 1
    return diffs


def _locate(old_lines: List[str], block: List[str], expected: int, floor: int) -> int:
    size = len(block)
    limit = len(old_lines) - size
    if size == 0:
        return min(max(expected, floor), len(old_lines))
    for offset in range(0, len(old_lines) + 1):
        for pos in (expected - offset, expected + offset):
            if floor <= pos <= limit and old_lines[pos : pos + size] == block:
                return pos
    return -1


def apply_file_diff(old_text: str, file_diff: FileDiff) -> str:
    """
    Apply one file's hunks to its old text.

    Raises:
        PatchApplyError: If a hunk's context cannot be found
    """
    old_lines = old_text.splitlines(keepends=True)
    out: List[str] = []
    cursor = 0
    for hunk in file_diff.hunks:
        block = hunk.old_block
        expected = hunk.old_start - 1 if hunk.old_len > 0 else hunk.old_start
        pos = _locate(old_lines, block, expected, cursor)
        if pos < 0:
            raise PatchApplyError(
                f"Hunk @@ -{hunk.old_start},{hunk.old_len} does not apply to {file_diff.path}",
                error_code="PATCH_REJECTED",
                details={
                    "file": file_diff.path,
                    "reject": "".join(f"{tag}{text}" for tag, text in hunk.lines),
                },
            )
        out.extend(old_lines[cursor:pos])
        out.extend(hunk.new_block)
        cursor = pos + len(block)
    out.extend(old_lines[cursor:])
    return "".join(out)


def apply_patch_text(old_text: str, patch_text: str) -> str:
    """Apply a single-file patch to a string."""
    file_diffs = parse_patch(patch_text)
    if len(file_diffs) != 1:
        raise PatchApplyError(
            f"Expected a single-file patch, got {len(file_diffs)} files",
            error_code="MULTI_FILE_PATCH",
        )
    return apply_file_diff(old_text, file_diffs[0])


def apply_patch_to_tree(root: str, patch_text: str) -> List[str]:
    """
    Apply a multi-file patch to a directory tree.

    Every file is patched in memory first; nothing is written unless all
    hunks apply.

    Raises:
        PatchApplyError: If any hunk is rejected or a target is missing
    """
    root_path = Path(root)
    file_diffs = parse_patch(patch_text)
    if not file_diffs:
        raise PatchApplyError("Patch contains no file diffs", error_code="EMPTY_PATCH")

    pending: Dict[str, Optional[str]] = {}
    for file_diff in file_diffs:
        target = root_path / file_diff.path
        if file_diff.is_new:
            if target.exists():
                raise PatchApplyError(
                    f"New file already exists: {file_diff.path}",
                    error_code="PATCH_REJECTED",
                    details={"file": file_diff.path},
                )
            old_text = ""
        else:
            source = root_path / (file_diff.old_path or file_diff.path)
            if file_diff.path in pending and pending[file_diff.path] is not None:
                old_text = pending[file_diff.path] or ""
            elif source.exists():
                old_text = source.read_text(encoding="utf-8")
            else:
                raise PatchApplyError(
                    f"Patch target missing: {file_diff.path}",
                    error_code="PATCH_REJECTED",
                    details={"file": file_diff.path},
                )
        new_text = apply_file_diff(old_text, file_diff)
        pending[file_diff.path] = None if file_diff.is_deleted else new_text

    for rel, text in pending.items():
        target = root_path / rel
        if text is None:
            target.unlink(missing_ok=True)
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    logger.debug(f"Applied patch to {len(pending)} file(s) under {root}")
    return sorted(pending)
