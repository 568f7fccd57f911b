"""Domain types shared across the pipeline stages.

Everything that crosses a module boundary or lands in an artifact file is a
pydantic model, so JSON dumps stay uniform and byte-stable.
"""

from typing import Dict, List, Literal, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_serializer


class FunctionRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    file: str
    name: str
    suite: Optional[str] = None
    start_line: int
    end_line: int
    decorator_line: int
    is_test: bool
    signature: str = ""

    @property
    def qualified_name(self) -> str:
        return f"{self.suite}::{self.name}" if self.suite else self.name

    @property
    def test_id(self) -> str:
        return f"{self.file}::{self.qualified_name}"


class SuiteRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    start_line: int
    end_line: int
    members: Tuple[FunctionRef, ...] = ()


class ImportStmt(BaseModel):
    model_config = ConfigDict(frozen=True)

    raw_text: str
    imported_names: Tuple[str, ...]
    module_path: str = ""
    line: int = 0
    end_line: int = 0


class FileStructure(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str
    imports: Tuple[ImportStmt, ...] = ()
    functions: Tuple[FunctionRef, ...] = ()
    suites: Tuple[SuiteRef, ...] = ()
    parse_ok: bool = True
    line_count: int = 0

    @property
    def test_functions(self) -> List[FunctionRef]:
        return [f for f in self.functions if f.is_test]


class SourceIndex(BaseModel):
    model_config = ConfigDict(frozen=True)

    root: str
    files: Tuple[str, ...] = ()
    modules: Dict[str, FileStructure] = Field(default_factory=dict)
    def_index: Dict[str, Tuple[str, ...]] = Field(default_factory=dict)
    diagnostics: Tuple[str, ...] = ()


class Localization(BaseModel):
    kind: Literal["test", "focal"]
    files: List[str] = Field(default_factory=list)
    functions: List[FunctionRef] = Field(default_factory=list)
    dropped: List[str] = Field(default_factory=list)
    repaired: List[Tuple[str, str]] = Field(default_factory=list)


ActionKind = Literal["read", "write", "modify"]


class Action(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ActionKind
    file: str
    function: str
    suite: Optional[str] = None

    def render(self) -> str:
        parts = [self.file] + ([self.suite] if self.suite else []) + [self.function]
        return f"{self.kind.upper()} {'::'.join(parts)}"


class ValidationEntry(BaseModel):
    subject: str
    accepted: bool
    reason: str = ""


class ValidationReport(BaseModel):
    entries: List[ValidationEntry] = Field(default_factory=list)

    @property
    def accepted_count(self) -> int:
        return sum(1 for e in self.entries if e.accepted)

    def render(self) -> str:
        if not self.entries:
            return "The plan contains no actions."
        lines = []
        for entry in self.entries:
            verdict = "ACCEPT" if entry.accepted else "REJECT"
            suffix = f": {entry.reason}" if entry.reason else ""
            lines.append(f"{verdict} {entry.subject}{suffix}")
        return "\n".join(lines)


class Plan(BaseModel):
    actions: List[Action] = Field(default_factory=list)
    verdicts: List[str] = Field(default_factory=list)
    turns: int = 0
    validation_log: List[ValidationEntry] = Field(default_factory=list)
    stats: Dict[str, int] = Field(default_factory=lambda: {"read": 0, "write": 0, "modify": 0})

    @property
    def reads(self) -> List[Action]:
        return [a for a in self.actions if a.kind == "read"]

    @property
    def target(self) -> Optional[Action]:
        return next((a for a in self.actions if a.kind in ("write", "modify")), None)

    def render(self) -> str:
        return "\n".join(a.render() for a in self.actions)


class GenContext(BaseModel):
    issue: str
    read_bodies: List[Tuple[str, str]] = Field(default_factory=list)
    target: Action
    target_exists: bool = True
    structure: str = ""
    imports: List[str] = Field(default_factory=list)
    existing_code: str = ""


class DraftTest(BaseModel):
    code: str
    mode: Literal["write", "modify"]
    target_file: str
    anchor: str = ""
    suite: Optional[str] = None
    extra_imports: List[str] = Field(default_factory=list)
    function_name: str = ""


class TestPatch(BaseModel):
    __test__ = False

    diff: str
    target_file: str
    test_ids: List[str] = Field(default_factory=list)


class TestOutcome(BaseModel):
    __test__ = False

    test_id: str
    status: Literal["pass", "fail", "error"]
    phase: Literal["collect", "call"] = "call"
    failure_kind: Literal["assertion", "other", "timeout", "none"] = "none"
    log_excerpt: str = ""


class ExecutionReport(BaseModel):
    outcomes: List[TestOutcome] = Field(default_factory=list)
    exit_code: int = 0
    wall_time: float = 0.0
    log: str = ""

    def status_of(self, test_id: str) -> Optional[str]:
        for outcome in self.outcomes:
            if outcome.test_id == test_id:
                return outcome.status
        return None


class CoverageReport(BaseModel):
    covered: Dict[str, Set[int]] = Field(default_factory=dict)
    coverable: Dict[str, Set[int]] = Field(default_factory=dict)
    tests_run: List[str] = Field(default_factory=list)
    reliable: bool = True

    @field_serializer("covered", "coverable")
    def _sorted_lines(self, value: Dict[str, Set[int]]) -> Dict[str, List[int]]:
        return {path: sorted(lines) for path, lines in sorted(value.items())}

    def lines_for(self, path: str) -> Set[int]:
        return self.covered.get(path, set())


class RunSpec(BaseModel):
    test_command_template: Optional[str] = None
    coverage_command_templates: Optional[List[str]] = None
    timeout_s: Optional[float] = None
    coverage_reliable: Optional[bool] = None


class InstanceSpec(BaseModel):
    instance_id: str
    repo: str = ""
    issue_text: str
    snapshot: str
    golden_code_patch: str
    golden_test_patch: Optional[str] = None
    run: RunSpec = Field(default_factory=RunSpec)


class TddResult(BaseModel):
    instance_id: str
    fail_to_pass: int
    adequacy: Optional[float] = None
    tdd_score: float
    coverage_reliable: bool = True
    test_ids: List[str] = Field(default_factory=list)
    flags: List[str] = Field(default_factory=list)
    classes: Dict[str, str] = Field(default_factory=dict)
    selected_variant: Optional[str] = None


class VariantSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    uses_planner: bool
    uses_focal_loc: bool
    uses_test_loc: bool
    priority_rank: int


class CandidateResult(BaseModel):
    variant_id: str
    patch: Optional[TestPatch] = None
    error: Optional[dict] = None
    class_on_old: Literal[
        "pass", "assertion_failure", "other_failure", "error", "failed_to_generate"
    ]


class FilterRow(BaseModel):
    system: str
    instance_id: str
    survived: bool
    correct: bool


class SystemFilterSummary(BaseModel):
    system: str
    total: int
    survived: int
    correct: int
    survived_correct: int
    precision: Optional[float] = None
    recall: Optional[float] = None
    base_precision: Optional[float] = None


class FilterOutcome(BaseModel):
    rows: List[FilterRow] = Field(default_factory=list)
    systems: List[SystemFilterSummary] = Field(default_factory=list)
    missing_truth: List[str] = Field(default_factory=list)
