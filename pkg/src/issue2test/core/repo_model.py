import ast
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path, PurePosixPath
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

from ..config import get_logger
from ..constants import SUBJECT_EXTENSION, TEST_NAME_PREFIX
from ..exceptions import NotFoundError, RepoIndexError
from ..models import FileStructure, FunctionRef, ImportStmt, SourceIndex, SuiteRef

logger = get_logger(__name__)

_FUNCTION_NODES = (ast.FunctionDef, ast.AsyncFunctionDef)


def normalize_path(path: str) -> str:
    """Forward slashes, no leading './', no '..' segments."""
    parts: List[str] = []
    for part in PurePosixPath(path.replace("\\", "/")).parts:
        if part in ("", "."):
            continue
        if part == "..":
            if parts:
                parts.pop()
            continue
        parts.append(part)
    return "/".join(parts)


def module_name_for(path: str) -> str:
    """Dotted import path of a source file relative to the snapshot root."""
    parts = list(PurePosixPath(normalize_path(path)).with_suffix("").parts)
    if parts and parts[0] == "src" and len(parts) > 1:
        parts = parts[1:]
    if parts and parts[-1] == "__init__":
        parts = parts[:-1]
    return ".".join(parts)


def is_test_name(name: str) -> bool:
    return name.startswith(TEST_NAME_PREFIX)


class _StructureVisitor:
    """Collect suites, functions and module-level imports of one parsed file."""

    def __init__(self, path: str, source: str):
        self.path = path
        self.lines = source.splitlines()
        self.functions: List[FunctionRef] = []
        self.suites: List[SuiteRef] = []
        self.imports: List[ImportStmt] = []

    def visit_module(self, tree: ast.Module) -> None:
        self._visit_block(tree.body, suite=None)
        self._collect_imports(tree.body)

    def _visit_block(self, body: Iterable[ast.stmt], suite: Optional[str]) -> List[FunctionRef]:
        members: List[FunctionRef] = []
        for node in body:
            if isinstance(node, _FUNCTION_NODES):
                ref = self._function_ref(node, suite)
                self.functions.append(ref)
                members.append(ref)
            elif isinstance(node, ast.ClassDef):
                name = f"{suite}::{node.name}" if suite else node.name
                # Register the suite before descending so outer suites precede inner ones.
                position = len(self.suites)
                nested_members = self._visit_block(node.body, suite=name)
                self.suites.insert(
                    position,
                    SuiteRef(
                        name=name,
                        start_line=node.lineno,
                        end_line=node.end_lineno or node.lineno,
                        members=tuple(nested_members),
                    ),
                )
        return members

    def _function_ref(self, node: ast.AST, suite: Optional[str]) -> FunctionRef:
        start = node.lineno
        decorator_line = min([d.lineno for d in node.decorator_list] + [start])
        body_start = node.body[0].lineno if node.body else start
        header_end = max(start, body_start - 1) if body_start > start else start
        signature = " ".join(line.strip() for line in self.lines[start - 1 : header_end])
        return FunctionRef(
            file=self.path,
            name=node.name,
            suite=suite,
            start_line=start,
            end_line=node.end_lineno or start,
            decorator_line=decorator_line,
            is_test=is_test_name(node.name),
            signature=signature,
        )

    def _collect_imports(self, body: Iterable[ast.stmt]) -> None:
        for node in body:
            if isinstance(node, ast.Import):
                names = tuple(
                    alias.asname or alias.name.split(".")[0] for alias in node.names
                )
                module = ", ".join(alias.name for alias in node.names)
                self.imports.append(self._import_stmt(node, names, module))
            elif isinstance(node, ast.ImportFrom):
                names = tuple(alias.asname or alias.name for alias in node.names)
                module = "." * node.level + (node.module or "")
                self.imports.append(self._import_stmt(node, names, module))
            elif isinstance(node, (ast.If, ast.Try)):
                self._collect_imports(node.body)
                self._collect_imports(node.orelse)
                for handler in getattr(node, "handlers", []):
                    self._collect_imports(handler.body)
                self._collect_imports(getattr(node, "finalbody", []))

    def _import_stmt(self, node: ast.stmt, names: Tuple[str, ...], module: str) -> ImportStmt:
        end = node.end_lineno or node.lineno
        raw = "\n".join(self.lines[node.lineno - 1 : end]).strip()
        return ImportStmt(
            raw_text=raw,
            imported_names=names,
            module_path=module,
            line=node.lineno,
            end_line=end,
        )


def parse_structure(path: str, source: str) -> FileStructure:
    """Parse one source text; unparsable sources yield parse_ok=False and no structure."""
    line_count = len(source.splitlines())
    try:
        tree = ast.parse(source, filename=path)
    except (SyntaxError, ValueError) as e:
        logger.debug(f"Structural parse failed for {path}: {e}")
        return FileStructure(path=path, parse_ok=False, line_count=line_count)

    visitor = _StructureVisitor(path, source)
    visitor.visit_module(tree)
    return FileStructure(
        path=path,
        imports=tuple(visitor.imports),
        functions=tuple(sorted(visitor.functions, key=lambda f: (f.start_line, f.name))),
        suites=tuple(visitor.suites),
        parse_ok=True,
        line_count=line_count,
    )


def _top_level_names(structure: FileStructure) -> Set[str]:
    names = {f.name for f in structure.functions if f.suite is None}
    names.update(s.name for s in structure.suites if "::" not in s.name)
    return names


def _discover(root: Path) -> List[str]:
    found = []
    for path in root.rglob(f"*{SUBJECT_EXTENSION}"):
        rel = path.relative_to(root)
        if any(part.startswith(".") for part in rel.parts[:-1]):
            continue
        if path.is_file():
            found.append(normalize_path(rel.as_posix()))
    return sorted(found)


def build_index(root: str, max_workers: int | None = None) -> SourceIndex:
    """
    Index every subject source file under root.

    Files are parsed in parallel; the result is assembled in path order so it
    does not depend on scheduling. Unreadable files are skipped and recorded
    in diagnostics.

    Raises:
        RepoIndexError: If root does not exist or is not a directory
    """
    root_path = Path(root)
    if not root_path.is_dir():
        raise RepoIndexError(
            f"Snapshot root not found: {root}",
            error_code="SNAPSHOT_NOT_FOUND",
            details={"root": str(root)},
        )

    candidates = _discover(root_path)

    def _load(rel: str) -> Tuple[str, Optional[FileStructure], Optional[str]]:
        try:
            source = (root_path / rel).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            return rel, None, f"{rel}: unreadable ({e.__class__.__name__})"
        return rel, parse_structure(rel, source), None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        loaded = list(pool.map(_load, candidates))

    files: List[str] = []
    modules: Dict[str, FileStructure] = {}
    def_index: Dict[str, List[str]] = {}
    diagnostics: List[str] = []

    for rel, structure, problem in loaded:
        if structure is None:
            logger.warning(f"Skipping {problem}")
            diagnostics.append(problem or rel)
            continue
        files.append(rel)
        modules[rel] = structure
        for name in sorted(_top_level_names(structure)):
            def_index.setdefault(name, []).append(rel)

    broken = sum(1 for s in modules.values() if not s.parse_ok)
    logger.info(f"Indexed {len(files)} files under {root} ({broken} unparsable)")

    return SourceIndex(
        root=str(root_path.resolve()),
        files=tuple(files),
        modules=modules,
        def_index={name: tuple(paths) for name, paths in sorted(def_index.items())},
        diagnostics=tuple(diagnostics),
    )


def list_test_files(index: SourceIndex) -> List[str]:
    """Files containing at least one test function, in path order."""
    return [
        path
        for path in index.files
        if any(f.is_test for f in index.modules[path].functions)
    ]


def extract_structure(index: SourceIndex, file: str) -> FileStructure:
    key = normalize_path(file)
    if key not in index.modules:
        raise NotFoundError(
            f"File not in index: {file}",
            error_code="FILE_NOT_INDEXED",
            details={"file": file},
        )
    return index.modules[key]


def find_definition(index: SourceIndex, name: str) -> List[str]:
    """Files defining name at top level, then files whose module path ends with name."""
    if not name:
        return []
    result: List[str] = list(index.def_index.get(name, ()))
    for path in index.files:
        module = module_name_for(path)
        if module == name or module.endswith(f".{name}"):
            if path not in result:
                result.append(path)
    return result


def lookup_function(
    structure: FileStructure, name: str, suite: Optional[str] = None
) -> Optional[FunctionRef]:
    """Resolve a function by name, optionally constrained to a suite ('A::B' or 'A.B')."""
    wanted_suite = suite.replace(".", "::") if suite else None
    if "::" in name and wanted_suite is None:
        wanted_suite, name = name.rsplit("::", 1)
    for ref in structure.functions:
        if ref.name != name:
            continue
        if wanted_suite is None or ref.suite == wanted_suite:
            return ref
    return None


def read_source(index: SourceIndex, file: str) -> str:
    path = Path(index.root) / normalize_path(file)
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise NotFoundError(
            f"Cannot read {file}: {e}", error_code="FILE_UNREADABLE", details={"file": file}
        ) from e


def read_function_source(index: SourceIndex, ref: FunctionRef) -> str:
    """Function text including decorators, read from the snapshot on disk."""
    lines = read_source(index, ref.file).splitlines()
    return "\n".join(lines[ref.decorator_line - 1 : ref.end_line])


def tests_touching_lines(structure: FileStructure, lines: Iterable[int]) -> List[str]:
    """Test ids of test functions whose span intersects the given line numbers."""
    wanted = set(lines)
    ids = []
    for ref in structure.functions:
        if not ref.is_test:
            continue
        if any(ref.decorator_line <= n <= ref.end_line for n in wanted):
            ids.append(ref.test_id)
    return ids


def render_skeleton(structure: FileStructure) -> str:
    """Suites and function signatures with line spans; bodies omitted."""
    entries: List[Tuple[int, int, str]] = []
    for suite in structure.suites:
        depth = suite.name.count("::")
        indent = "    " * depth
        entries.append(
            (
                suite.start_line,
                0,
                f"{indent}class {suite.name.split('::')[-1]}:  # lines {suite.start_line}-{suite.end_line}",
            )
        )
        for member in suite.members:
            entries.append(
                (
                    member.start_line,
                    1,
                    f"{indent}    {member.signature}  # lines {member.start_line}-{member.end_line}",
                )
            )
    for ref in structure.functions:
        if ref.suite is None:
            entries.append(
                (ref.start_line, 1, f"{ref.signature}  # lines {ref.start_line}-{ref.end_line}")
            )
    return "\n".join(text for _, _, text in sorted(entries))


def dump_index(index: SourceIndex) -> Dict[str, Any]:
    """JSON-ready structure dump of the index."""

    def _fn(ref: FunctionRef) -> Dict[str, Any]:
        return {
            "name": ref.name,
            "qualified_name": ref.qualified_name,
            "start": ref.start_line,
            "end": ref.end_line,
            "is_test": ref.is_test,
        }

    modules = {}
    for path in index.files:
        structure = index.modules[path]
        modules[path] = {
            "parse_ok": structure.parse_ok,
            "imports": [imp.raw_text for imp in structure.imports],
            "functions": [_fn(f) for f in structure.functions],
            "suites": [
                {
                    "name": s.name,
                    "start": s.start_line,
                    "end": s.end_line,
                    "members": [m.name for m in s.members],
                }
                for s in structure.suites
            ],
        }
    return {"files": list(index.files), "modules": modules}
