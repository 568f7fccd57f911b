"""Frozen prompt templates.

Placeholders use ``{name}``; rendering substitutes bound values verbatim.
Changing a template changes every request fingerprint, so bump
TEMPLATE_VERSION together with any edit.
"""

TEMPLATE_VERSION = "1"

_FOCAL_LOC_1 = """You are helping a developer locate the code an issue is about.

Issue description:
<issue>
{issue}
</issue>

Source files of the repository:
<files>
{files}
</files>

List up to 10 source files from the list above that most likely need to change to
resolve the issue, most relevant first. Write one relative path per line, exactly as
it appears in the list, and nothing else."""

_FOCAL_LOC_2 = """You are helping a developer locate the functions an issue is about.

Issue description:
<issue>
{issue}
</issue>

Candidate files and the functions they define:
<candidates>
{candidates}
</candidates>

Select the functions most likely to be exercised by a test reproducing the issue and
most likely to need a fix. Write one entry per line in the form
path::function or path::Class::function, using names from the candidates only."""

_TEST_LOC_1 = """You are helping a developer find existing tests related to an issue.

Issue description:
<issue>
{issue}
</issue>

Test files of the repository:
<files>
{files}
</files>

List up to 10 test files from the list above where a test for this issue would
belong, most relevant first. Write one relative path per line, exactly as it appears
in the list, and nothing else."""

_TEST_LOC_2 = """You are helping a developer find existing tests related to an issue.

Issue description:
<issue>
{issue}
</issue>

Candidate test files and the test functions they contain:
<candidates>
{candidates}
</candidates>

Select the test functions most relevant to the issue. Write one entry per line in the
form path::test_function or path::TestClass::test_function, using names from the
candidates only."""

_PLAN_INITIAL = """You are planning how to write a test that reproduces an issue. The test must
fail on the current code and pass once the issue is fixed.

Issue description:
<issue>
{issue}
</issue>

Functions found so far:
<context>
{context}
</context>

Make an initial plan consisting only of READ actions for functions whose code you
need to see. Write one action per line in the form
READ path::function or READ path::Class::function.
Do not write any other text."""

_PLAN_REFLECT = """You are improving a plan for writing a test that reproduces an issue. The test
must fail on the current code and pass once the issue is fixed.

Issue description:
<issue>
{issue}
</issue>

Functions read so far:
<context>
{context}
</context>

Current plan:
<plan>
{plan}
</plan>

Validation feedback on the current plan:
<feedback>
{feedback}
</feedback>

Reflect on the plan and write an improved one. Available actions, one per line:
READ path::function            read an existing function
WRITE path::function           write a new test function in an existing test file
MODIFY path::Class::function   rewrite an existing test function
The plan should contain exactly one WRITE or MODIFY action.
After the plan, write one line "VERDICT: <Satisfied|Unsatisfied|Unsure>" stating
whether you are satisfied with the plan."""

_GEN_WRITE = """Write a new test function that reproduces the issue below. The test must fail
on the current code and pass once the issue is fixed.

Issue description:
<issue>
{issue}
</issue>

Relevant code:
<context>
{context}
</context>

The test will be added to {test_file}. Structure of that file:
<structure>
{structure}
</structure>

Imports of that file:
<imports>
{imports}
</imports>

Planned action: {target}

Reply with:
1. One line "PRECEDING_FUNCTION: <name>" naming the existing function after which the
   new test should be inserted.
2. A single ```python code block containing any imports the test needs followed by
   exactly one complete test function. Do not write a diff."""

_GEN_MODIFY = """Rewrite an existing test function so that it reproduces the issue below. The
test must fail on the current code and pass once the issue is fixed.

Issue description:
<issue>
{issue}
</issue>

Relevant code:
<context>
{context}
</context>

The test lives in {test_file}. Structure of that file:
<structure>
{structure}
</structure>

Imports of that file:
<imports>
{imports}
</imports>

Planned action: {target}

Current version of the function:
<existing>
{existing}
</existing>

Reply with a single ```python code block containing any imports the test needs
followed by the complete new version of the function, keeping its name. Do not write
a diff."""

_ZERO_SHOT = """Write a pytest test file for the repository {repo} that reproduces the issue
below. The test must fail on the current code and pass once the issue is fixed.

Issue description:
<issue>
{issue}
</issue>

Reply with a single ```python code block containing a complete test file with all
necessary imports."""

TEMPLATES = {
    "focal_loc_1": _FOCAL_LOC_1,
    "focal_loc_2": _FOCAL_LOC_2,
    "test_loc_1": _TEST_LOC_1,
    "test_loc_2": _TEST_LOC_2,
    "plan_initial": _PLAN_INITIAL,
    "plan_reflect": _PLAN_REFLECT,
    "gen_write": _GEN_WRITE,
    "gen_modify": _GEN_MODIFY,
    "zero_shot": _ZERO_SHOT,
}
