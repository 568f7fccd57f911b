from pathlib import Path
from typing import Any, Dict, List

from .config import RunConfig, get_logger
from .constants import MODE_OTTER
from .exceptions import NotFoundError
from .pipeline import Issue2TestPipeline, load_instances

__version__ = "0.1.0"

logger = get_logger(__name__)
PACKAGE_DIR = Path(__file__).parent


def _load_config(config_path: str | None = None) -> RunConfig:
    """Load configuration from YAML/JSON file or use defaults."""
    if config_path:
        return RunConfig.from_yaml(config_path)

    default_config = PACKAGE_DIR / "config" / "issue2test.yaml"
    if default_config.exists():
        return RunConfig.from_yaml(str(default_config))

    return RunConfig()


def generate_tests(
    manifest_path: str,
    mode: str = MODE_OTTER,
    config_path: str | None = None,
    evaluate: bool = False,
    **overrides: Any,
) -> Dict[str, Any]:
    """
    Generate one issue-reproducing test per instance of a manifest.

    Args:
        manifest_path: JSON manifest listing the instances
        mode: "otter", "otter-plus-plus" or "zero-shot"
        config_path: Optional path to an issue2test.yaml config file
        evaluate: Also score each generated test against the golden code patch
        **overrides: Config keys to replace, e.g. transcript_mode="replay"

    Returns:
        {
            "responses": [per-instance response dicts],
            "summary": {"mode": ..., "instances": 3, "failures": 0, "cost": {...}},
            "error_response": null or the first failing instance's error dict
        }
    """
    config = _load_config(config_path)
    if overrides:
        config = config.with_overrides(overrides)
    config.setup_logging()

    pipeline = Issue2TestPipeline(config)
    instances = load_instances(manifest_path)
    return pipeline.run_suite(instances, mode=mode, evaluate=evaluate)


def evaluate_test_patch(
    manifest_path: str,
    instance_id: str,
    test_patch: str,
    config_path: str | None = None,
) -> Dict[str, Any]:
    """
    Score one test patch: fail-to-pass, adequacy and tddScore.

    Returns:
        {"instance_id": ..., "result": TddResult, "error_response": null or error dict}
    """
    config = _load_config(config_path)
    config.setup_logging()

    instances: List = [i for i in load_instances(manifest_path) if i.instance_id == instance_id]
    if not instances:
        error = NotFoundError(
            f"Instance not in manifest: {instance_id}",
            error_code="UNKNOWN_INSTANCE",
            details={"manifest": manifest_path},
        )
        return {"instance_id": instance_id, "result": None, "error_response": error.to_dict()}
    return Issue2TestPipeline(config).evaluate(instances[0], test_patch)


__all__ = [
    "Issue2TestPipeline",
    "RunConfig",
    "generate_tests",
    "evaluate_test_patch",
    "load_instances",
]
