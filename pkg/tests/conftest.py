import json
import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import pytest

from issue2test.config import RunConfig
from issue2test.core import diffs
from issue2test.core.linter import LintDiagnostic
from issue2test.core.llm_gateway import CostLedger, Decoding, LlmGateway, Transcript, Usage
from issue2test.core.prompts import TEMPLATES
from issue2test.core.repo_model import build_index
from issue2test.models import InstanceSpec

STATS_OLD = '''"""Small numeric helpers."""


def mean(values):
    return sum(values) / len(values)


def clamp(value, low, high):
    return max(low, value)
'''

STATS_MEAN_FIXED = STATS_OLD.replace(
    "    return sum(values)", "    if not values:\n        return 0.0\n    return sum(values)"
)

STATS_CLAMP_FIXED = STATS_OLD.replace(
    "return max(low, value)", "return min(max(low, value), high)"
)

TEXT_OLD = '''def slugify(text):
    return text.lower().replace(" ", "-")
'''

TEXT_NEW = '''def slugify(text):
    return text.strip().lower().replace(" ", "-")
'''

TEST_STATS = '''from calc.stats import clamp, mean


class TestMean:
    def test_simple(self):
        assert mean([1, 2, 3]) == 2


def test_clamp_low():
    assert clamp(-1, 0, 10) == 0
'''

TEST_TEXT = '''from calc.text import slugify


def test_slugify_spaces():
    assert slugify("Hello World") == "hello-world"
'''

ISSUE_CLAMP = "clamp ignores the upper bound: clamp(15, 0, 10) returns 15 instead of 10."
ISSUE_MEAN = "mean of an empty list raises ZeroDivisionError; it should return 0.0."
ISSUE_SLUG = "slugify keeps surrounding whitespace: slugify(' Hello World ') gives '-hello-world-'."

GEN_CLAMP = '''PRECEDING_FUNCTION: test_clamp_low
```python
from calc.stats import clamp


def test_clamp_high():
    assert clamp(15, 0, 10) == 10
```'''

GEN_MEAN = '''PRECEDING_FUNCTION: TestMean.test_simple
```python
def test_empty(self):
    assert mean([]) == 0.0
```'''

GEN_SLUG = '''PRECEDING_FUNCTION: test_slugify_spaces
```python
def test_slugify_strips():
    assert slugify(" Hello World ") == "hello-world"
```'''

_SUFFIXES = {
    template_id: re.split(r"\{[a-z_]+\}", text)[-1] for template_id, text in TEMPLATES.items()
}

Reply = Union[str, Callable[[str], str]]


def template_of(prompt: str) -> str:
    """Template id a rendered prompt came from, by its literal tail."""
    for template_id, suffix in _SUFFIXES.items():
        if prompt.endswith(suffix):
            return template_id
    raise AssertionError(f"unrecognised prompt: {prompt[:80]!r}")


def by_issue(replies: Dict[str, str], default: str = "") -> Callable[[str], str]:
    """Reply chosen by the opening words of the issue embedded in the prompt."""

    def _reply(prompt: str) -> str:
        for opening, text in replies.items():
            if f"<issue>\n{opening}" in prompt:
                return text
        return default

    return _reply


class ScriptedBackend:
    """Chat backend answering from a per-template script."""

    backend_id = "scripted"

    def __init__(self, replies: Dict[str, Reply]):
        self.replies = replies
        self.calls: List[str] = []

    def send(self, text: str, decoding: Decoding):
        template_id = template_of(text)
        self.calls.append(template_id)
        reply = self.replies.get(template_id, "")
        content = reply(text) if callable(reply) else reply
        usage = Usage(prompt_tokens=len(text) // 4, completion_tokens=len(content) // 4 + 1)
        return content, usage


class StubLinter:
    """Linter returning canned diagnostics (None means unavailable)."""

    def __init__(self, diagnostics: Optional[List[LintDiagnostic]] = None, available=True):
        self.diagnostics = diagnostics or []
        self.available = available
        self.seen: List[str] = []

    def check(self, source: str, path: str):
        self.seen.append(source)
        if not self.available:
            return None
        return list(self.diagnostics)


def calc_replies() -> Dict[str, Reply]:
    """Script that localizes, plans and writes a reproducing test for each calc issue."""
    return {
        "test_loc_1": by_issue(
            {
                "clamp": "tests/test_stats.py",
                "mean": "tests/test_stats.py",
                "slugify": "tests/test_text.py",
            }
        ),
        "test_loc_2": by_issue(
            {
                "clamp": "tests/test_stats.py::test_clamp_low",
                "mean": "tests/test_stats.py::TestMean::test_simple",
                "slugify": "tests/test_text.py::test_slugify_spaces",
            }
        ),
        "focal_loc_1": by_issue(
            {"clamp": "calc/stats.py", "mean": "calc/stats.py", "slugify": "calc/text.py"}
        ),
        "focal_loc_2": by_issue(
            {
                "clamp": "calc/stats.py::clamp",
                "mean": "calc/stats.py::mean",
                "slugify": "calc/text.py::slugify",
            }
        ),
        "plan_initial": by_issue(
            {
                "clamp": "READ calc/stats.py::clamp",
                "mean": "READ calc/stats.py::mean",
                "slugify": "READ calc/text.py::slugify",
            }
        ),
        "plan_reflect": by_issue(
            {
                "clamp": "READ calc/stats.py::clamp\n"
                "WRITE tests/test_stats.py::test_clamp_high\nVERDICT: Satisfied",
                "mean": "READ calc/stats.py::mean\n"
                "WRITE tests/test_stats.py::TestMean::test_empty\nVERDICT: Satisfied",
                "slugify": "READ calc/text.py::slugify\n"
                "WRITE tests/test_text.py::test_slugify_strips\nVERDICT: Satisfied",
            }
        ),
        "gen_write": by_issue({"clamp": GEN_CLAMP, "mean": GEN_MEAN, "slugify": GEN_SLUG}),
        "zero_shot": by_issue(
            {
                "clamp": "```python\nfrom calc.stats import clamp\n\n\n"
                "def test_upper_bound():\n    assert clamp(15, 0, 10) == 10\n```",
            }
        ),
    }


def write_tree(root: Path, files: Dict[str, str]) -> Path:
    for rel, text in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return root


@pytest.fixture
def calc_repo(tmp_path):
    """Snapshot of the calc subject repository before any fix."""
    return write_tree(
        tmp_path / "calc_repo",
        {
            "calc/__init__.py": "",
            "calc/stats.py": STATS_OLD,
            "calc/text.py": TEXT_OLD,
            "tests/test_stats.py": TEST_STATS,
            "tests/test_text.py": TEST_TEXT,
        },
    )


@pytest.fixture
def calc_index(calc_repo):
    return build_index(str(calc_repo))


def golden_test_patch_for(name: str) -> str:
    if name == "clamp":
        new = TEST_STATS + "\n\ndef test_clamp_high():\n    assert clamp(15, 0, 10) == 10\n"
        return diffs.make_unified_diff(TEST_STATS, new, "tests/test_stats.py")
    if name == "mean":
        new = TEST_STATS.replace(
            "        assert mean([1, 2, 3]) == 2\n",
            "        assert mean([1, 2, 3]) == 2\n\n    def test_empty(self):\n"
            "        assert mean([]) == 0.0\n",
        )
        return diffs.make_unified_diff(TEST_STATS, new, "tests/test_stats.py")
    new = TEST_TEXT + "\n\ndef test_slugify_strips():\n    assert slugify(' A b ') == 'a-b'\n"
    return diffs.make_unified_diff(TEST_TEXT, new, "tests/test_text.py")


@pytest.fixture
def calc_instances(calc_repo):
    """clamp (assertion failure), mean (ZeroDivisionError) and slugify instances."""
    clamp_patch = diffs.make_unified_diff(STATS_OLD, STATS_CLAMP_FIXED, "calc/stats.py")
    mean_patch = diffs.make_unified_diff(STATS_OLD, STATS_MEAN_FIXED, "calc/stats.py")
    text_patch = diffs.make_unified_diff(TEXT_OLD, TEXT_NEW, "calc/text.py")
    return {
        "calc-clamp": InstanceSpec(
            instance_id="calc-clamp",
            repo="example/calc",
            issue_text=ISSUE_CLAMP,
            snapshot=str(calc_repo),
            golden_code_patch=clamp_patch,
            golden_test_patch=golden_test_patch_for("clamp"),
        ),
        "calc-mean": InstanceSpec(
            instance_id="calc-mean",
            repo="example/calc",
            issue_text=ISSUE_MEAN,
            snapshot=str(calc_repo),
            golden_code_patch=mean_patch,
            golden_test_patch=golden_test_patch_for("mean"),
        ),
        "calc-slugify": InstanceSpec(
            instance_id="calc-slugify",
            repo="example/calc",
            issue_text=ISSUE_SLUG,
            snapshot=str(calc_repo),
            golden_code_patch=text_patch,
            golden_test_patch=golden_test_patch_for("slugify"),
        ),
    }


@pytest.fixture
def clamp_instance(calc_instances):
    return calc_instances["calc-clamp"]


@pytest.fixture
def manifest_path(tmp_path, calc_repo, calc_instances):
    """JSON manifest with a relative snapshot path and golden patches in files."""
    entries = []
    for instance in calc_instances.values():
        code_file = tmp_path / f"{instance.instance_id}.code.diff"
        code_file.write_text(instance.golden_code_patch, encoding="utf-8")
        entries.append(
            {
                "instance_id": instance.instance_id,
                "repo": instance.repo,
                "issue_text": instance.issue_text,
                "snapshot": calc_repo.name,
                "golden_code_patch_path": code_file.name,
                "golden_test_patch": instance.golden_test_patch,
            }
        )
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"instances": entries}, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def run_config(tmp_path):
    """Config writing artifacts and the transcript under tmp_path."""
    return RunConfig(
        output_dir=str(tmp_path / "artifacts"),
        transcript_path=str(tmp_path / "transcript.jsonl"),
        transcript_mode="record",
        run_timeout_s=120.0,
    )


@pytest.fixture
def scripted_backend():
    return ScriptedBackend(calc_replies())


@pytest.fixture
def make_gateway():
    """Record-mode gateway over an in-memory transcript."""

    def _make(replies: Optional[Dict[str, Reply]] = None, transcript=None):
        backend = ScriptedBackend(replies if replies is not None else calc_replies())
        return LlmGateway(
            transcript if transcript is not None else Transcript("record"),
            CostLedger(0.0025, 0.01),
            backend=backend,
            retry_delay_s=0.0,
        )

    return _make
