import sys
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Tuple

import yaml
from loguru import logger as _logger

from .constants import (
    DEFAULT_COVERAGE_COMMAND_TEMPLATES,
    DEFAULT_LINT_CODES,
    DEFAULT_LINT_COMMAND,
    DEFAULT_TEST_COMMAND_TEMPLATE,
    ZERO_SHOT_TEST_PATH,
)
from .exceptions import ConfigError

TRANSCRIPT_MODES = ("record", "replay")


_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Value converted to the type of the key's default; ConfigError when it cannot be."""
    try:
        if isinstance(default, tuple):
            if isinstance(value, str):
                return tuple(v.strip() for v in value.split(",") if v.strip())
            if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
                return tuple(value)
        elif isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.strip().lower() in _TRUE + _FALSE:
                return value.strip().lower() in _TRUE
        elif isinstance(default, int):
            if isinstance(value, (int, str)) and not isinstance(value, bool):
                return int(value)
            if isinstance(value, float) and value.is_integer():
                return int(value)
        elif isinstance(default, float):
            if isinstance(value, (int, float, str)) and not isinstance(value, bool):
                return float(value)
        elif isinstance(value, (str, Path)):
            return str(value)
        elif default is None and value is None:
            return None
    except ValueError:
        pass
    expected = "string" if default is None else type(default).__name__
    raise ConfigError(
        f"Invalid value for {key}: {value!r} (expected {expected})",
        error_code="INVALID_CONFIG_VALUE",
        details={"key": key, "value": repr(value), "expected": expected},
    )


@dataclass(frozen=True)
class RunConfig:
    log_level: str = "INFO"
    log_file: str = "issue2test.log"
    output_dir: str = "artifacts"

    backend_base_url: str = "https://api.openai.com/v1"
    backend_model: str = "gpt-4o-2024-08-06"
    backend_api_key_env: str = "OPENAI_API_KEY"
    backend_timeout_s: float = 120.0
    max_tokens: int = 4096
    max_attempts: int = 3

    transcript_path: str = "transcripts/transcript.jsonl"
    transcript_mode: str = "record"
    manifest_path: str | None = None

    price_per_1k_prompt: float = 0.0025
    price_per_1k_completion: float = 0.01

    max_localized_files: int = 10
    prompt_files_budget_bytes: int = 60_000
    read_body_budget_bytes: int = 4_000
    max_plan_turns: int = 5

    lint_command: str = DEFAULT_LINT_COMMAND
    lint_codes: Tuple[str, ...] = DEFAULT_LINT_CODES
    fix_imports: bool = True
    zero_shot_path: str = ZERO_SHOT_TEST_PATH

    test_command_template: str = DEFAULT_TEST_COMMAND_TEMPLATE
    coverage_command_templates: Tuple[str, ...] = DEFAULT_COVERAGE_COMMAND_TEMPLATES
    run_timeout_s: float = 600.0
    coverage_unreliable_repos: Tuple[str, ...] = field(default=("sympy/sympy",))

    jobs: int = 1

    @classmethod
    def from_yaml(cls, yaml_path: str) -> "RunConfig":
        """Load config from a YAML or JSON file; missing keys keep their defaults."""
        path = Path(yaml_path)
        if not path.exists():
            raise ConfigError(
                f"Config file not found: {yaml_path}",
                error_code="CONFIG_NOT_FOUND",
                details={"path": yaml_path},
            )
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid config file {yaml_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config root must be a mapping: {yaml_path}")
        return cls().with_overrides(data)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Return a copy with the given keys replaced, each coerced to the key's type."""
        known = {f.name: f for f in fields(self)}
        unknown = sorted(set(overrides) - set(known))
        if unknown:
            raise ConfigError(
                f"Unknown config keys: {', '.join(unknown)}",
                error_code="UNKNOWN_CONFIG_KEY",
                details={"keys": unknown},
            )
        coerced = {key: _coerce(key, value, known[key].default) for key, value in overrides.items()}
        updated = replace(self, **coerced)
        updated.validate()
        return updated


    def validate(self) -> None:
        if self.transcript_mode not in TRANSCRIPT_MODES:
            raise ConfigError(
                f"transcript_mode must be one of {TRANSCRIPT_MODES}, got {self.transcript_mode!r}",
                error_code="INVALID_TRANSCRIPT_MODE",
            )
        if self.max_plan_turns < 1:
            raise ConfigError("max_plan_turns must be >= 1")
        if self.max_localized_files < 1:
            raise ConfigError("max_localized_files must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def require_transcript(self) -> None:
        """Replay mode is only meaningful against an existing transcript."""
        if self.transcript_mode == "replay" and not Path(self.transcript_path).exists():
            raise ConfigError(
                f"Replay mode requires an existing transcript: {self.transcript_path}",
                error_code="TRANSCRIPT_MISSING",
                details={"transcript_path": self.transcript_path},
            )

    def setup_logging(self) -> None:
        """Configure loguru with file and console output in logs folder."""
        _logger.remove()

        logs_dir = Path("logs")
        logs_dir.mkdir(parents=True, exist_ok=True)

        timestamp = datetime.now().strftime("%Y%m%d")
        stem = Path(self.log_file).stem
        log_path = logs_dir / f"{stem}_{timestamp}.log"

        _logger.add(
            str(log_path),
            level=self.log_level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message}",
            mode="a",
            rotation="100 MB",
            retention="30 days",
        )

        _logger.add(
            sys.stderr,
            level=self.log_level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}",
        )


def get_logger(name: str):
    """Get logger instance."""
    return _logger.bind(name=name)
