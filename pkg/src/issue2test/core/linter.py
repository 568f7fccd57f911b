import re
import shlex
import subprocess
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Protocol, Sequence

from pydantic import BaseModel

from ..config import get_logger
from ..constants import DEFAULT_LINT_CODES, DEFAULT_LINT_COMMAND

logger = get_logger(__name__)

_DIAGNOSTIC_LINE = re.compile(r"^(?P<path>.+?):(?P<line>\d+):(?P<col>\d+):\s+(?P<code>[A-Z]+\d+)\s+(?P<message>.*)$")
_QUOTED_NAME = re.compile(r"'([^']+)'")


class LintDiagnostic(BaseModel):
    path: str
    line: int
    col: int
    code: str
    message: str

    @property
    def name(self) -> Optional[str]:
        """Identifier quoted in the message, if any."""
        match = _QUOTED_NAME.search(self.message)
        return match.group(1) if match else None


def parse_lint_output(output: str, codes: Sequence[str] | None = None) -> List[LintDiagnostic]:
    """Parse 'path:line:col: CODE message' lines, keeping only the given codes."""
    wanted = set(codes) if codes else None
    diagnostics = []
    for raw in output.splitlines():
        match = _DIAGNOSTIC_LINE.match(raw.strip())
        if not match:
            continue
        if wanted is not None and match.group("code") not in wanted:
            continue
        diagnostics.append(
            LintDiagnostic(
                path=match.group("path"),
                line=int(match.group("line")),
                col=int(match.group("col")),
                code=match.group("code"),
                message=match.group("message").strip(),
            )
        )
    return diagnostics


class Linter(Protocol):
    def check(self, source: str, path: str) -> Optional[List[LintDiagnostic]]: ...


class CommandLinter:
    """
    Runs an external lint command on a temporary copy of a source text.

    check() returns None when the command cannot be run, so callers can skip
    lint-driven steps instead of failing.
    """

    def __init__(
        self,
        command: str = DEFAULT_LINT_COMMAND,
        codes: Sequence[str] = DEFAULT_LINT_CODES,
        timeout_s: float = 60.0,
    ):
        self.command = command
        self.codes = tuple(codes)
        self.timeout_s = timeout_s

    def check(self, source: str, path: str) -> Optional[List[LintDiagnostic]]:
        with tempfile.TemporaryDirectory(prefix="issue2test-lint-") as tmp:
            target = Path(tmp) / Path(path).name
            target.write_text(source, encoding="utf-8")
            argv = [
                part.format(python=sys.executable, codes=",".join(self.codes), path=str(target))
                for part in shlex.split(self.command)
            ]
            try:
                proc = subprocess.run(
                    argv, capture_output=True, text=True, timeout=self.timeout_s, cwd=tmp
                )
            except (OSError, subprocess.TimeoutExpired) as e:
                logger.warning(f"Lint command unavailable ({e.__class__.__name__}: {e})")
                return None

        diagnostics = parse_lint_output(proc.stdout, self.codes)
        if proc.returncode not in (0, 1) or (
            proc.returncode == 1 and not diagnostics and proc.stderr.strip()
        ):
            logger.warning(
                f"Lint command failed with exit code {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
            return None
        for diag in diagnostics:
            diag.path = path
        logger.debug(f"Lint found {len(diagnostics)} curated diagnostic(s) in {path}")
        return diagnostics


def undefined_names(diagnostics: Sequence[LintDiagnostic]) -> List[str]:
    """Distinct undefined names in first-seen order."""
    names: List[str] = []
    for diag in diagnostics:
        name = diag.name
        if name and name not in names:
            names.append(name)
    return names
