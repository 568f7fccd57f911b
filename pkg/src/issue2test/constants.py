SUBJECT_EXTENSION = ".py"

TEST_NAME_PREFIX = "test"

ZERO_SHOT_TEST_PATH = "tests/test_issue_repro.py"

# Placeholders: {python} {test_ids} {junit_out} {coverage_out} {coverage_data}
DEFAULT_TEST_COMMAND_TEMPLATE = (
    "{python} -m pytest -p no:cacheprovider -rA --rootdir=. --junitxml={junit_out} {test_ids}"
)

DEFAULT_COVERAGE_COMMAND_TEMPLATES = (
    "{python} -m coverage run --data-file={coverage_data}"
    " -m pytest -p no:cacheprovider -q --rootdir=. {test_ids}",
    "{python} -m coverage json --data-file={coverage_data} -o {coverage_out}",
)

# Placeholders: {python} {codes} {path}
DEFAULT_LINT_COMMAND = "{python} -m flake8 --select={codes} {path}"

# Name-related pyflakes codes: undefined name, undefined name in __all__.
DEFAULT_LINT_CODES = ("F821", "F822")

TEMPLATE_IDS = (
    "focal_loc_1",
    "focal_loc_2",
    "test_loc_1",
    "test_loc_2",
    "plan_initial",
    "plan_reflect",
    "gen_write",
    "gen_modify",
    "zero_shot",
)

STAGE_FOCAL_LOCALIZATION = "focal_localization"
STAGE_TEST_LOCALIZATION = "test_localization"
STAGE_ACTION_PLUS_GENERATE = "action_plus_generate"
STAGE_EXTRA_VARIANTS = "extra_variants"

STAGES = (
    STAGE_FOCAL_LOCALIZATION,
    STAGE_TEST_LOCALIZATION,
    STAGE_ACTION_PLUS_GENERATE,
    STAGE_EXTRA_VARIANTS,
)

STAGE_LABELS = {
    STAGE_FOCAL_LOCALIZATION: "Focal Localization",
    STAGE_TEST_LOCALIZATION: "Test Localization",
    STAGE_ACTION_PLUS_GENERATE: "Action + Generate",
    STAGE_EXTRA_VARIANTS: "Additional Tests (T2-T5)",
}

TEMPLATE_DEFAULT_STAGE = {
    "focal_loc_1": STAGE_FOCAL_LOCALIZATION,
    "focal_loc_2": STAGE_FOCAL_LOCALIZATION,
    "test_loc_1": STAGE_TEST_LOCALIZATION,
    "test_loc_2": STAGE_TEST_LOCALIZATION,
    "plan_initial": STAGE_ACTION_PLUS_GENERATE,
    "plan_reflect": STAGE_ACTION_PLUS_GENERATE,
    "gen_write": STAGE_ACTION_PLUS_GENERATE,
    "gen_modify": STAGE_ACTION_PLUS_GENERATE,
    "zero_shot": STAGE_ACTION_PLUS_GENERATE,
}

VERDICT_SATISFIED = "Satisfied"
VERDICT_UNSATISFIED = "Unsatisfied"
VERDICT_UNSURE = "Unsure"
VERDICTS = (VERDICT_SATISFIED, VERDICT_UNSATISFIED, VERDICT_UNSURE)

CLASS_PASS = "pass"
CLASS_ASSERTION = "assertion_failure"
CLASS_OTHER = "other_failure"
CLASS_ERROR = "error"
CLASS_FAILED_TO_GENERATE = "failed_to_generate"

# Selection order among failing candidates.
FAILURE_GROUP_ORDER = (CLASS_ASSERTION, CLASS_OTHER, CLASS_ERROR)

# id -> (uses_planner, uses_focal_loc, uses_test_loc, priority_rank)
VARIANT_TABLE = {
    "T1": (True, True, True, 1),
    "T2": (False, True, True, 2),
    "T3": (False, False, True, 3),
    "T4": (False, True, False, 4),
    "T5": (False, False, False, 5),
}

MODE_OTTER = "otter"
MODE_OTTER_PLUS_PLUS = "otter-plus-plus"
MODE_ZERO_SHOT = "zero-shot"
RUN_MODES = (MODE_OTTER, MODE_OTTER_PLUS_PLUS, MODE_ZERO_SHOT)

UNAVAILABLE_MARKER = "<unavailable>"
TRUNCATION_MARKER = "# ... <truncated>"

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2
