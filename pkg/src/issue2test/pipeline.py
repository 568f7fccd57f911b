import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from threading import Lock
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .config import RunConfig, get_logger
from .constants import MODE_OTTER, MODE_OTTER_PLUS_PLUS, MODE_ZERO_SHOT, RUN_MODES
from .core import ensemble, eval_harness, localizer, planner, test_generator
from .core.linter import CommandLinter, Linter
from .core.llm_gateway import ChatBackend, CostLedger, LlmGateway, cost_report, render_cost_table
from .core.repo_model import build_index
from .exceptions import ConfigError, Issue2TestException
from .models import InstanceSpec, Localization, SourceIndex, TddResult, TestPatch

logger = get_logger(__name__)


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_artifact(path: Path, content: str) -> Path:
    """Write text atomically: temp file in the same directory, then replace."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(content, encoding="utf-8")
    tmp.replace(path)
    return path


def _read_patch_field(entry: Dict[str, Any], key: str, base: Path) -> Optional[str]:
    """Inline '<key>' text, or '<key>_path' relative to the manifest."""
    if entry.get(key):
        return entry[key]
    ref = entry.get(f"{key}_path")
    if not ref:
        return None
    path = Path(ref) if Path(ref).is_absolute() else base / ref
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read {key} for {entry.get('instance_id')}: {e}") from e


def load_instances(manifest_path: str) -> List[InstanceSpec]:
    """
    Read an instance manifest (a JSON list, or an object with an 'instances' list).

    Relative snapshot and patch paths resolve against the manifest's directory.

    Raises:
        ConfigError: If the manifest is missing or malformed
    """
    path = Path(manifest_path)
    if not path.exists():
        raise ConfigError(
            f"Manifest not found: {manifest_path}",
            error_code="MANIFEST_NOT_FOUND",
            details={"path": manifest_path},
        )
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid manifest {manifest_path}: {e}") from e
    entries = data.get("instances", []) if isinstance(data, dict) else data
    base = path.parent.resolve()

    instances = []
    for entry in entries:
        entry = dict(entry)
        snapshot = Path(entry.get("snapshot", ""))
        entry["snapshot"] = str(snapshot if snapshot.is_absolute() else base / snapshot)
        entry["golden_code_patch"] = _read_patch_field(entry, "golden_code_patch", base) or ""
        entry["golden_test_patch"] = _read_patch_field(entry, "golden_test_patch", base)
        entry.pop("golden_code_patch_path", None)
        entry.pop("golden_test_patch_path", None)
        try:
            instances.append(InstanceSpec(**entry))
        except ValueError as e:
            raise ConfigError(f"Invalid manifest entry {entry.get('instance_id')}: {e}") from e
    logger.info(f"Loaded {len(instances)} instance(s) from {manifest_path}")
    return instances


class Issue2TestPipeline:
    """Generate and evaluate issue-reproducing tests for benchmark instances.

    Every public method returns a response dict whose "error_response" is
    None on success or the failing stage's error dict.
    """

    def __init__(
        self,
        config: RunConfig,
        backend: Optional[ChatBackend] = None,
        linter: Optional[Linter] = None,
        gateway: Optional[LlmGateway] = None,
    ):
        self.config = config
        self._backend = backend
        self._gateway = gateway
        self._gateway_lock = Lock()
        self.linter = (
            linter if linter is not None else CommandLinter(config.lint_command, config.lint_codes)
        )
        self._indexes: Dict[str, SourceIndex] = {}
        self._index_lock = Lock()
        self.ledger = CostLedger(config.price_per_1k_prompt, config.price_per_1k_completion)
        self.output_dir = Path(config.output_dir)

    @property
    def gateway(self) -> LlmGateway:
        if self._gateway is None:
            with self._gateway_lock:
                if self._gateway is None:
                    self._gateway = LlmGateway.from_config(self.config, self._backend)
        return self._gateway

    def _fork(self) -> LlmGateway:
        return self.gateway.fork()

    def _instance_dir(self, instance: InstanceSpec) -> Path:
        return self.output_dir / instance.instance_id.replace("/", "__")

    def index_for(self, instance: InstanceSpec) -> SourceIndex:
        """Index of the instance snapshot, built once per pipeline."""
        key = instance.snapshot
        if key in self._indexes:
            return self._indexes[key]
        with self._index_lock:
            if key not in self._indexes:
                self._indexes[key] = build_index(key)
            return self._indexes[key]

    @staticmethod
    def _failure(
        instance: InstanceSpec, stage: str, exc: Exception, **extra: Any
    ) -> Dict[str, Any]:
        if isinstance(exc, Issue2TestException):
            error = exc.to_dict()
        else:
            error = {"error_code": exc.__class__.__name__, "message": str(exc), "details": {}}
        error["stage"] = stage
        logger.error(f"{instance.instance_id}: {stage} failed: {error['message']}")
        return {"instance_id": instance.instance_id, **extra, "error_response": error}

    def _finish_costs(self, instance: InstanceSpec, gw: LlmGateway) -> Dict[str, Any]:
        self.ledger.merge(gw.ledger)
        report = cost_report(gw.ledger, instances=1).model_dump(mode="json")
        write_artifact(self._instance_dir(instance) / "cost.json", dump_json(report))
        return report

    def _localize(
        self, instance: InstanceSpec, index: SourceIndex, gw: LlmGateway
    ) -> Tuple[Localization, Localization]:
        cfg = self.config
        test_loc = localizer.localize(
            instance.issue_text,
            index,
            "test",
            gw,
            max_files=cfg.max_localized_files,
            budget_bytes=cfg.prompt_files_budget_bytes,
        )
        focal_loc = localizer.localize(
            instance.issue_text,
            index,
            "focal",
            gw,
            max_files=cfg.max_localized_files,
            budget_bytes=cfg.prompt_files_budget_bytes,
        )
        out = self._instance_dir(instance)
        write_artifact(
            out / "localization_test.json", dump_json(localizer.dump_localization(test_loc))
        )
        write_artifact(
            out / "localization_focal.json", dump_json(localizer.dump_localization(focal_loc))
        )
        return test_loc, focal_loc

    def localize(self, instance: InstanceSpec) -> Dict[str, Any]:
        """Test and focal localization for one instance."""
        gw = self._fork()
        try:
            index = self.index_for(instance)
            test_loc, focal_loc = self._localize(instance, index, gw)
        except Exception as e:
            return self._failure(instance, "localize", e)
        finally:
            self._finish_costs(instance, gw)
        return {
            "instance_id": instance.instance_id,
            "test": localizer.dump_localization(test_loc),
            "focal": localizer.dump_localization(focal_loc),
            "error_response": None,
        }

    def _plan(
        self, instance: InstanceSpec, index: SourceIndex, gw: LlmGateway, test_loc, focal_loc
    ):
        cfg = self.config
        plan = planner.run_planner(
            instance.issue_text,
            test_loc,
            focal_loc,
            index,
            gw,
            max_turns=cfg.max_plan_turns,
            read_budget_bytes=cfg.read_body_budget_bytes,
            new_file_path=cfg.zero_shot_path,
        )
        plan_dump = dump_json(planner.dump_plan(plan))
        write_artifact(self._instance_dir(instance) / "plan.json", plan_dump)
        return plan

    def plan(self, instance: InstanceSpec) -> Dict[str, Any]:
        """Localization followed by the planner loop."""
        gw = self._fork()
        stage = "index"
        try:
            index = self.index_for(instance)
            stage = "localize"
            test_loc, focal_loc = self._localize(instance, index, gw)
            stage = "plan"
            plan = self._plan(instance, index, gw, test_loc, focal_loc)
        except Exception as e:
            return self._failure(instance, stage, e)
        finally:
            self._finish_costs(instance, gw)
        return {
            "instance_id": instance.instance_id,
            "plan": planner.dump_plan(plan),
            "error_response": None,
        }

    def _write_patch(
        self, instance: InstanceSpec, patch: TestPatch, name: str = "patch.diff"
    ) -> str:
        path = write_artifact(self._instance_dir(instance) / name, patch.diff)
        return str(path)

    def generate(self, instance: InstanceSpec) -> Dict[str, Any]:
        """Single-candidate flow: localize, plan, generate."""
        gw = self._fork()
        stage = "index"
        try:
            index = self.index_for(instance)
            stage = "localize"
            test_loc, focal_loc = self._localize(instance, index, gw)
            stage = "plan"
            plan = self._plan(instance, index, gw, test_loc, focal_loc)
            stage = "generate"
            patch = test_generator.synthesize(
                plan,
                instance.issue_text,
                index,
                gw,
                self.linter,
                fix_imports=self.config.fix_imports,
                read_budget_bytes=self.config.read_body_budget_bytes,
            )
            patch_path = self._write_patch(instance, patch)
        except Exception as e:
            return self._failure(instance, stage, e, mode=MODE_OTTER)
        finally:
            cost = self._finish_costs(instance, gw)
        return {
            "instance_id": instance.instance_id,
            "mode": MODE_OTTER,
            "patch": patch.model_dump(mode="json"),
            "patch_path": patch_path,
            "plan": planner.dump_plan(plan),
            "plans": {"T1": plan},
            "cost": cost,
            "error_response": None,
        }

    def ensemble(self, instance: InstanceSpec) -> Dict[str, Any]:
        """Five variants, classification on the old code, and selection."""
        gw = self._fork()
        stage = "index"
        try:
            index = self.index_for(instance)
            stage = "localize"
            test_loc, focal_loc = self._localize(instance, index, gw)
            stage = "ensemble"
            results, plans = ensemble.run_variants(
                instance, index, test_loc, focal_loc, gw, self.linter, self.config
            )
            selected = ensemble.select(results)
            if "T1" in plans:
                write_artifact(
                    self._instance_dir(instance) / "plan.json",
                    dump_json(planner.dump_plan(plans["T1"])),
                )
            candidates = []
            for result in results:
                patch_path = None
                if result.patch is not None:
                    patch_path = self._write_patch(
                        instance, result.patch, f"candidates/{result.variant_id}.diff"
                    )
                candidates.append(
                    {
                        "variant": result.variant_id,
                        "class_on_old": result.class_on_old,
                        "patch_path": patch_path,
                        "error": result.error,
                    }
                )
            selected_patch = next(
                (r.patch for r in results if r.variant_id == selected and r.patch), None
            )
            patch_path = self._write_patch(instance, selected_patch) if selected_patch else None
            record = {
                "instance_id": instance.instance_id,
                "candidates": candidates,
                "selected": selected,
            }
            write_artifact(self._instance_dir(instance) / "ensemble.json", dump_json(record))
        except Exception as e:
            return self._failure(instance, stage, e, mode=MODE_OTTER_PLUS_PLUS)
        finally:
            cost = self._finish_costs(instance, gw)
        return {
            "instance_id": instance.instance_id,
            "mode": MODE_OTTER_PLUS_PLUS,
            "candidates": candidates,
            "results": results,
            "plans": plans,
            "selected": selected,
            "patch": selected_patch.model_dump(mode="json") if selected_patch else None,
            "patch_path": patch_path,
            "cost": cost,
            "error_response": None,
        }

    def zero_shot(self, instance: InstanceSpec) -> Dict[str, Any]:
        """Whole-file baseline without localization or planning."""
        gw = self._fork()
        stage = "index"
        try:
            index = self.index_for(instance)
            stage = "generate"
            patch = test_generator.zero_shot(
                instance.issue_text,
                instance.repo or instance.instance_id,
                gw,
                index=index,
                path=self.config.zero_shot_path,
            )
            patch_path = self._write_patch(instance, patch)
        except Exception as e:
            return self._failure(instance, stage, e, mode=MODE_ZERO_SHOT)
        finally:
            cost = self._finish_costs(instance, gw)
        return {
            "instance_id": instance.instance_id,
            "mode": MODE_ZERO_SHOT,
            "patch": patch.model_dump(mode="json"),
            "patch_path": patch_path,
            "cost": cost,
            "error_response": None,
        }

    def run_instance(self, instance: InstanceSpec, mode: str = MODE_OTTER) -> Dict[str, Any]:
        if mode not in RUN_MODES:
            raise ConfigError(f"Unknown mode {mode!r}; expected one of {RUN_MODES}")
        if mode == MODE_OTTER_PLUS_PLUS:
            return self.ensemble(instance)
        if mode == MODE_ZERO_SHOT:
            return self.zero_shot(instance)
        return self.generate(instance)

    def evaluate(
        self, instance: InstanceSpec, test_patch: str, selected_variant: Optional[str] = None
    ) -> Dict[str, Any]:
        """Score a test patch against the instance's golden code patch."""
        try:
            result = eval_harness.evaluate_instance(
                instance, test_patch, self.config, selected_variant=selected_variant
            )
        except Exception as e:
            return self._failure(instance, "evaluate", e)
        write_artifact(
            self._instance_dir(instance) / "evaluation.json",
            dump_json(result.model_dump(mode="json")),
        )
        return {"instance_id": instance.instance_id, "result": result, "error_response": None}

    def golden_check(self, instance: InstanceSpec) -> Dict[str, Any]:
        """Run the harness with the instance's own golden tests."""
        try:
            result = eval_harness.golden_validation(instance, self.config)
        except Exception as e:
            return self._failure(instance, "golden-check", e)
        write_artifact(
            self._instance_dir(instance) / "golden_check.json",
            dump_json(result.model_dump(mode="json")),
        )
        return {"instance_id": instance.instance_id, "result": result, "error_response": None}

    def similarity(self, patches: Mapping[str, Tuple[InstanceSpec, str]]) -> Dict[str, Any]:
        """Edit-distance similarity of generated tests to the tests already in each snapshot."""
        entries: List[Tuple[str, str, float]] = []
        per_instance: Dict[str, List[Dict[str, Any]]] = {}
        for instance_id in sorted(patches):
            instance, test_patch = patches[instance_id]
            try:
                index = self.index_for(instance)
                scored = eval_harness.generated_test_similarity(test_patch, index)
            except Exception as e:
                return self._failure(instance, "similarity", e)
            per_instance[instance_id] = [{"mode": m, "score": s} for m, s in scored]
            entries.extend((instance_id, m, s) for m, s in scored)
        report = eval_harness.similarity_report(entries)
        report["instances"] = per_instance
        write_artifact(self.output_dir / "similarity_report.json", dump_json(report))
        return {"report": report, "error_response": None}

    def _evaluate_run(self, instance: InstanceSpec, response: Dict[str, Any]) -> Dict[str, Any]:
        """Per-instance result and per-variant fail-to-pass outcomes for a run response."""
        successes: List[str] = []
        if response.get("mode") == MODE_OTTER_PLUS_PLUS:
            selected = response.get("selected")
            chosen: Optional[TddResult] = None
            for candidate in response["results"]:
                if candidate.patch is None:
                    continue
                evaluated = self.evaluate(instance, candidate.patch.diff, candidate.variant_id)
                result = evaluated.get("result")
                if result is None:
                    continue
                if result.fail_to_pass:
                    successes.append(candidate.variant_id)
                if candidate.variant_id == selected:
                    chosen = result
            if chosen is not None:
                write_artifact(
                    self._instance_dir(instance) / "evaluation.json",
                    dump_json(chosen.model_dump(mode="json")),
                )
            else:
                chosen = TddResult(
                    instance_id=instance.instance_id,
                    fail_to_pass=0,
                    tdd_score=0.0,
                    flags=["no_test_selected"],
                )
            return {"result": chosen, "successes": successes}

        evaluated = self.evaluate(instance, response["patch"]["diff"])
        result = evaluated.get("result") or TddResult(
            instance_id=instance.instance_id, fail_to_pass=0, tdd_score=0.0, flags=["not_runnable"]
        )
        return {"result": result, "successes": successes}

    def run_suite(
        self, instances: Sequence[InstanceSpec], mode: str = MODE_OTTER, evaluate: bool = False
    ) -> Dict[str, Any]:
        """
        Run every instance (config.jobs at a time), then aggregate reports.

        Aggregate artifacts: cost_report.json/.txt, planner_stats.json, and
        with evaluate also suite_report.json/.txt and variant_overlap.json.
        """

        def _one(instance: InstanceSpec) -> Dict[str, Any]:
            response = self.run_instance(instance, mode)
            if evaluate and response.get("error_response") is None:
                response["evaluation"] = self._evaluate_run(instance, response)
            return response

        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            responses = list(pool.map(_one, instances))

        transcript = self._gateway.transcript if self._gateway is not None else None
        if transcript is not None and transcript.mode == "record" and transcript.path is not None:
            transcript.save()
            logger.debug(f"Saved {len(transcript)} transcript entries to {transcript.path}")

        failures = [r for r in responses if r.get("error_response")]
        costs = cost_report(self.ledger, instances=len(instances) or None)
        costs_dump = dump_json(costs.model_dump(mode="json"))
        write_artifact(self.output_dir / "cost_report.json", costs_dump)
        write_artifact(self.output_dir / "cost_report.txt", render_cost_table(costs) + "\n")

        plans = []
        for response in responses:
            if "plans" in response and "T1" in response["plans"]:
                plans.append(response["plans"]["T1"])
        stats = {
            "action_counts": planner.action_count_summary(plans),
            "turn_distribution": {str(k): v for k, v in planner.turn_distribution(plans).items()},
        }
        if plans:
            write_artifact(self.output_dir / "planner_stats.json", dump_json(stats))

        summary: Dict[str, Any] = {
            "mode": mode,
            "instances": len(instances),
            "failures": len(failures),
            "cost": costs.model_dump(mode="json"),
        }
        if evaluate:
            results = []
            success_sets: Dict[str, List[str]] = {}
            for instance, response in zip(instances, responses):
                evaluation = response.get("evaluation")
                if evaluation is None:
                    results.append(
                        TddResult(
                            instance_id=instance.instance_id,
                            fail_to_pass=0,
                            tdd_score=0.0,
                            flags=["generation_failed"],
                        )
                    )
                    continue
                results.append(evaluation["result"])
                for variant_id in evaluation["successes"]:
                    success_sets.setdefault(variant_id, []).append(instance.instance_id)
            pass_at_5 = None
            if mode == MODE_OTTER_PLUS_PLUS:
                for variant in ensemble.build_variants():
                    success_sets.setdefault(variant.id, [])
                overlap = ensemble.variant_success_report(success_sets)
                write_artifact(self.output_dir / "variant_overlap.json", dump_json(overlap))
                pass_at_5 = overlap["pass_at_k"]
            report = eval_harness.suite_report(results, pass_at_5=pass_at_5)
            write_artifact(self.output_dir / "suite_report.json", dump_json(report))
            write_artifact(
                self.output_dir / "suite_report.txt",
                eval_harness.render_suite_table(report, label=mode) + "\n",
            )
            summary["suite"] = report["summary"]

        logger.info(f"Suite finished: {len(instances) - len(failures)}/{len(instances)} succeeded")
        return {
            "responses": responses,
            "summary": summary,
            "error_response": failures[0]["error_response"] if failures else None,
        }

    def filter(
        self,
        instances: Mapping[str, InstanceSpec],
        tests: Mapping[str, Optional[TestPatch]],
        system_patches: Mapping[str, Mapping[str, str]],
        ground_truth: Mapping[str, Mapping[str, bool]],
    ) -> Dict[str, Any]:
        """Filter SWE-agent code patches with the generated tests."""
        runner = eval_harness.make_patch_runner(instances, self.config)
        outcome = eval_harness.filter_patches(tests, system_patches, ground_truth, runner)
        outcome_dump = dump_json(outcome.model_dump(mode="json"))
        write_artifact(self.output_dir / "filter_report.json", outcome_dump)
        write_artifact(
            self.output_dir / "filter_report.txt", eval_harness.render_filter_table(outcome) + "\n"
        )
        return {"outcome": outcome, "error_response": None}
