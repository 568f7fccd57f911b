"""Command line entry point: ``issue2test <command> [options]``."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from . import _load_config, __version__
from .config import RunConfig, get_logger
from .constants import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_STAGE_FAILURE,
    MODE_OTTER,
    RUN_MODES,
)
from .core import eval_harness
from .core.llm_gateway import Transcript, cost_report, ledger_from_transcript, render_cost_table
from .exceptions import ConfigError, Issue2TestException
from .models import InstanceSpec
from .pipeline import Issue2TestPipeline, dump_json, load_instances, write_artifact

logger = get_logger(__name__)


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    """KEY=VALUE pairs with values read as YAML scalars."""
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}", error_code="BAD_OVERRIDE")
        try:
            overrides[key.strip()] = yaml.safe_load(raw) if raw else ""
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse value for {key}: {e}") from e
    return overrides


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then --set pairs, then the dedicated flags."""
    config = _load_config(args.config)
    overrides = _parse_overrides(args.set or [])
    flag_keys = {
        "transcript": "transcript_path",
        "transcript_mode": "transcript_mode",
        "output_dir": "output_dir",
        "jobs": "jobs",
        "log_level": "log_level",
        "manifest": "manifest_path",
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_fix_imports", False):
        overrides["fix_imports"] = False
    return config.with_overrides(overrides) if overrides else config


def select_instances(args: argparse.Namespace, config: RunConfig) -> List[InstanceSpec]:
    if not config.manifest_path:
        raise ConfigError("An instance manifest is required (--manifest)", error_code="NO_MANIFEST")
    instances = load_instances(config.manifest_path)
    if args.instance:
        known = {i.instance_id: i for i in instances}
        missing = [i for i in args.instance if i not in known]
        if missing:
            raise ConfigError(
                f"Instances not in manifest: {', '.join(missing)}",
                error_code="UNKNOWN_INSTANCE",
                details={"instances": missing},
            )
        instances = [known[i] for i in args.instance]
    return instances


def _print(data: Any) -> None:
    sys.stdout.write(dump_json(data))


def _report_errors(responses: Sequence[Dict[str, Any]]) -> int:
    """Stage-tagged diagnostics on stderr; exit status for the batch."""
    code = EXIT_OK
    for response in responses:
        error = response.get("error_response")
        if not error:
            continue
        code = EXIT_STAGE_FAILURE
        if isinstance(error, dict):
            sys.stderr.write(
                f"{response.get('instance_id', '-')}: [{error.get('stage', '-')}] "
                f"{error.get('error_code')}: {error.get('message')}\n"
            )
        else:
            sys.stderr.write(f"{response.get('instance_id', '-')}: {error}\n")
    return code


def _patch_file(directory: Path, instance_id: str) -> Optional[Path]:
    """<dir>/<id>.diff, or the run layout <dir>/<id>/patch.diff."""
    safe = instance_id.replace("/", "__")
    for candidate in (directory / f"{safe}.diff", directory / safe / "patch.diff"):
        if candidate.exists():
            return candidate
    return None


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}", error_code="UNREADABLE_INPUT") from e


def _patches_for(args: argparse.Namespace, instances: Sequence[InstanceSpec]) -> Dict[str, str]:
    if args.patch:
        if len(instances) != 1:
            raise ConfigError("--patch needs exactly one --instance", error_code="AMBIGUOUS_PATCH")
        return {instances[0].instance_id: _read(Path(args.patch))}
    if not args.patches_dir:
        raise ConfigError("Give --patch or --patches-dir", error_code="NO_PATCH")
    patches = {}
    for instance in instances:
        path = _patch_file(Path(args.patches_dir), instance.instance_id)
        if path is None:
            logger.warning(f"{instance.instance_id}: no patch in {args.patches_dir}")
            continue
        patches[instance.instance_id] = _read(path)
    return patches


def cmd_run(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
    instances = select_instances(args, config)
    outcome = pipeline.run_suite(instances, mode=args.mode, evaluate=args.evaluate)
    _print(outcome["summary"])
    return _report_errors(outcome["responses"])


def _per_instance(method_name: str):
    def _command(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
        method = getattr(pipeline, method_name)
        responses = [method(instance) for instance in select_instances(args, config)]
        _print(
            [
                {k: v for k, v in r.items() if k not in ("results", "plans")}
                for r in responses
            ]
        )
        return _report_errors(responses)

    return _command


def cmd_evaluate(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
    instances = select_instances(args, config)
    patches = _patches_for(args, instances)
    responses = []
    results = []
    for instance in instances:
        if instance.instance_id not in patches:
            continue
        response = pipeline.evaluate(instance, patches[instance.instance_id])
        responses.append(response)
        if response.get("result") is not None:
            results.append(response["result"])
    if not results:
        _report_errors(responses)
        return EXIT_STAGE_FAILURE
    report = eval_harness.suite_report(results)
    write_artifact(Path(config.output_dir) / "suite_report.json", dump_json(report))
    write_artifact(
        Path(config.output_dir) / "suite_report.txt",
        eval_harness.render_suite_table(report) + "\n",
    )
    _print(report)
    return _report_errors(responses)


def cmd_golden_check(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
    responses = [pipeline.golden_check(i) for i in select_instances(args, config)]
    flagged = [
        r["instance_id"]
        for r in responses
        if r.get("result") is not None and "not_fail_to_pass" in r["result"].flags
    ]
    _print(
        {
            "checked": len(responses),
            "not_fail_to_pass": flagged,
            "results": [r["result"].model_dump(mode="json") for r in responses if r.get("result")],
        }
    )
    return _report_errors(responses)


def cmd_filter(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
    instances = {i.instance_id: i for i in select_instances(args, config)}
    tests_dir = Path(args.tests_dir)
    patches_dir = Path(args.patches_dir)
    if not patches_dir.is_dir():
        raise ConfigError(f"Not a directory: {patches_dir}", error_code="UNREADABLE_INPUT")
    try:
        ground_truth = json.loads(_read(Path(args.truth)))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid truth file {args.truth}: {e}") from e

    tests = {}
    for instance_id, instance in instances.items():
        path = _patch_file(tests_dir, instance_id)
        tests[instance_id] = (
            eval_harness.wrap_test_patch(_read(path), pipeline.index_for(instance))
            if path
            else None
        )

    system_patches: Dict[str, Dict[str, str]] = {}
    for system_dir in sorted(p for p in patches_dir.iterdir() if p.is_dir()):
        for instance_id in instances:
            path = _patch_file(system_dir, instance_id)
            if path is not None:
                system_patches.setdefault(system_dir.name, {})[instance_id] = _read(path)

    response = pipeline.filter(instances, tests, system_patches, ground_truth)
    sys.stdout.write(eval_harness.render_filter_table(response["outcome"]) + "\n")
    return EXIT_OK


def cmd_similarity(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
    instances = select_instances(args, config)
    patches = _patches_for(args, instances)
    by_id = {i.instance_id: i for i in instances}
    response = pipeline.similarity({k: (by_id[k], v) for k, v in patches.items()})
    if response.get("error_response"):
        return _report_errors([response])
    _print({k: v for k, v in response["report"].items() if k != "instances"})
    return EXIT_OK


def cmd_cost_report(args, config: RunConfig, pipeline: Issue2TestPipeline) -> int:
    if not Path(config.transcript_path).exists():
        raise ConfigError(
            f"Transcript not found: {config.transcript_path}", error_code="TRANSCRIPT_MISSING"
        )
    transcript = Transcript.load(config.transcript_path, mode="replay")
    ledger = ledger_from_transcript(
        transcript, config.price_per_1k_prompt, config.price_per_1k_completion
    )
    report = cost_report(ledger, instances=args.instances)
    out = Path(config.output_dir)
    write_artifact(out / "cost_report.json", dump_json(report.model_dump(mode="json")))
    table = render_cost_table(report)
    write_artifact(out / "cost_report.txt", table + "\n")
    sys.stdout.write(table + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Override any config key (repeatable)",
    )
    common.add_argument("--transcript", help="Transcript path (JSON lines)")
    common.add_argument("--transcript-mode", choices=("record", "replay"))
    common.add_argument("--output-dir", help="Artifact directory")
    common.add_argument("--jobs", type=int, help="Parallel workers")
    common.add_argument("--log-level", help="Log level")
    common.add_argument("--manifest", help="Instance manifest (JSON)")
    common.add_argument(
        "--instance", action="append", help="Instance id to process (repeatable; default all)"
    )

    parser = argparse.ArgumentParser(
        prog="issue2test",
        description="Generate and evaluate tests that reproduce issues.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="Full pipeline per instance")
    run.add_argument("--mode", choices=RUN_MODES, default=MODE_OTTER)
    run.add_argument("--evaluate", action="store_true", help="Score the generated tests")
    run.add_argument("--no-fix-imports", action="store_true", help="Insert model imports verbatim")
    run.set_defaults(handler=cmd_run)

    for name, method, help_text in (
        ("localize", "localize", "Test and focal localization"),
        ("plan", "plan", "Localization plus planner"),
        ("generate", "generate", "Single planned test (T1)"),
        ("ensemble", "ensemble", "Five variants plus selection"),
    ):
        command = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("generate", "ensemble"):
            command.add_argument("--no-fix-imports", action="store_true")
        command.set_defaults(handler=_per_instance(method))

    evaluate = sub.add_parser("evaluate", parents=[common], help="Score test patches")
    evaluate.add_argument("--patch", help="Test patch for a single --instance")
    evaluate.add_argument("--patches-dir", help="Directory of <instance>.diff patches")
    evaluate.set_defaults(handler=cmd_evaluate)

    golden = sub.add_parser(
        "golden-check", parents=[common], help="Check golden tests are fail-to-pass"
    )
    golden.set_defaults(handler=cmd_golden_check)

    filt = sub.add_parser("filter", parents=[common], help="Filter system code patches")
    filt.add_argument("--tests-dir", required=True, help="Generated test patches")
    filt.add_argument("--patches-dir", required=True, help="<system>/<instance>.diff code patches")
    filt.add_argument("--truth", required=True, help="JSON {system: {instance: bool}}")
    filt.set_defaults(handler=cmd_filter)

    sim = sub.add_parser("similarity", parents=[common], help="Similarity to existing tests")
    sim.add_argument("--patch", help="Test patch for a single --instance")
    sim.add_argument("--patches-dir", help="Directory of <instance>.diff patches")
    sim.set_defaults(handler=cmd_similarity)

    cost = sub.add_parser("cost-report", parents=[common], help="Per-stage cost table")
    cost.add_argument("--instances", type=int, help="Instance count for per-sample costs")
    cost.set_defaults(handler=cmd_cost_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        config.setup_logging()
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        pipeline = Issue2TestPipeline(config)
        return args.handler(args, config, pipeline)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e.error_code}: {e.message}\n")
        return EXIT_CONFIG_ERROR
    except Issue2TestException as e:
        sys.stderr.write(f"error: {e.error_code}: {e.message}\n")
        return EXIT_STAGE_FAILURE
