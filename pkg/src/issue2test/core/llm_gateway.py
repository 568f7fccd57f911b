import hashlib
import json
import os
import re
import time
from pathlib import Path
from threading import Lock
from typing import Dict, List, Optional, Protocol, Tuple

import requests
from pydantic import BaseModel, Field, field_validator

from ..config import RunConfig, get_logger
from ..constants import STAGE_LABELS, STAGES, TEMPLATE_DEFAULT_STAGE, TEMPLATE_IDS
from ..exceptions import BackendError, ReplayMissError, TemplateError
from .prompts import TEMPLATES

logger = get_logger(__name__)

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class Decoding(BaseModel):
    temperature: float = 0.0
    max_tokens: int = 4096

    @field_validator("temperature")
    @classmethod
    def _greedy_only(cls, value: float) -> float:
        if value != 0.0:
            raise ValueError("only greedy decoding (temperature 0) is supported")
        return value


class LlmRequest(BaseModel):
    template_id: str
    bindings: Dict[str, str] = Field(default_factory=dict)
    decoding: Decoding = Field(default_factory=Decoding)

    @field_validator("template_id")
    @classmethod
    def _known_template(cls, value: str) -> str:
        if value not in TEMPLATE_IDS:
            raise ValueError(f"unknown template: {value}")
        return value


class Usage(BaseModel):
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)


class LlmResponse(BaseModel):
    text: str
    usage: Usage = Field(default_factory=Usage)
    backend_id: str = ""


def template_placeholders(template_id: str) -> List[str]:
    template = TEMPLATES.get(template_id)
    if template is None:
        raise TemplateError(f"unknown template: {template_id}", error_code="UNKNOWN_TEMPLATE")
    seen: List[str] = []
    for name in _PLACEHOLDER.findall(template):
        if name not in seen:
            seen.append(name)
    return seen


def render_prompt(template_id: str, bindings: Dict[str, str]) -> str:
    """
    Substitute bindings into a frozen template.

    Raises:
        TemplateError: If the template is unknown or a placeholder is unbound
    """
    template = TEMPLATES.get(template_id)
    if template is None:
        raise TemplateError(f"unknown template: {template_id}", error_code="UNKNOWN_TEMPLATE")
    missing = [name for name in template_placeholders(template_id) if name not in bindings]
    if missing:
        raise TemplateError(
            f"unbound placeholder: {', '.join(missing)}",
            error_code="UNBOUND_PLACEHOLDER",
            details={"template_id": template_id, "missing": missing},
        )
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template)


def fingerprint(req: LlmRequest, text: str) -> str:
    """Stable hash of template id, rendered text and decoding parameters."""
    payload = json.dumps(
        {
            "template_id": req.template_id,
            "text": text,
            "decoding": req.decoding.model_dump(mode="json"),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Transcript:
    """Ordered (fingerprint, response) pairs persisted as JSON lines."""

    def __init__(self, mode: str = "record", path: str | None = None):
        if mode not in ("record", "replay"):
            raise ValueError(f"transcript mode must be record or replay, got {mode!r}")
        self.mode = mode
        self.path = Path(path) if path else None
        self.entries: List[Dict] = []
        self._index: Dict[str, LlmResponse] = {}
        self._lock = Lock()

    @classmethod
    def load(cls, path: str, mode: str = "replay") -> "Transcript":
        transcript = cls(mode=mode, path=path)
        file_path = Path(path)
        if not file_path.exists():
            if mode == "replay":
                raise ReplayMissError(
                    f"Replay transcript not found: {path}",
                    error_code="TRANSCRIPT_MISSING",
                    details={"path": path},
                )
            return transcript
        with open(file_path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as e:
                    logger.warning(f"Skipping corrupt transcript line {line_no} in {path}: {e}")
                    continue
                transcript._remember(entry)
        logger.debug(f"Loaded {len(transcript.entries)} transcript entries from {path}")
        return transcript

    def _remember(self, entry: Dict) -> None:
        self.entries.append(entry)
        response = entry.get("response", {})
        self._index.setdefault(
            entry["fingerprint"],
            LlmResponse(
                text=response.get("text", ""),
                usage=Usage(**response.get("usage", {})),
                backend_id=response.get("backend_id", "transcript"),
            ),
        )

    def lookup(self, fp: str) -> Optional[LlmResponse]:
        with self._lock:
            return self._index.get(fp)

    def append(
        self,
        fp: str,
        req: LlmRequest,
        text: str,
        response: LlmResponse,
        stage: Optional[str] = None,
    ) -> None:
        entry = {
            "fingerprint": fp,
            "stage": stage or TEMPLATE_DEFAULT_STAGE[req.template_id],
            "request": {
                "template_id": req.template_id,
                "text": text,
                "decoding": req.decoding.model_dump(mode="json"),
            },
            "response": {
                "text": response.text,
                "usage": response.usage.model_dump(mode="json"),
                "backend_id": response.backend_id,
            },
        }
        with self._lock:
            self._remember(entry)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")

    def save(self, path: str | None = None) -> Path:
        """Rewrite the whole transcript atomically, entries sorted by fingerprint."""
        target = Path(path) if path else self.path
        if target is None:
            raise ValueError("Transcript has no path to save to")
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(target.suffix + ".tmp")
        with self._lock:
            lines = sorted(
                (entry["fingerprint"], json.dumps(entry, sort_keys=True, ensure_ascii=False))
                for entry in self.entries
            )
            with open(tmp, "w", encoding="utf-8") as f:
                for _, line in lines:
                    f.write(line + "\n")
            tmp.replace(target)
        return target


    def __len__(self) -> int:
        return len(self.entries)


class StageTotals(BaseModel):
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: float = 0.0


class CostLedger:
    """Per-stage token and cost accumulators."""

    def __init__(self, price_per_1k_prompt: float = 0.0, price_per_1k_completion: float = 0.0):
        self.price_per_1k_prompt = price_per_1k_prompt
        self.price_per_1k_completion = price_per_1k_completion
        self.stages: Dict[str, StageTotals] = {stage: StageTotals() for stage in STAGES}
        self._lock = Lock()

    def price(self, usage: Usage) -> float:
        return (
            usage.prompt_tokens * self.price_per_1k_prompt / 1000.0
            + usage.completion_tokens * self.price_per_1k_completion / 1000.0
        )

    def record(self, stage: str, usage: Usage) -> None:
        self.add(
            stage,
            calls=1,
            prompt_tokens=usage.prompt_tokens,
            completion_tokens=usage.completion_tokens,
            cost=self.price(usage),
        )

    def add(
        self,
        stage: str,
        calls: int = 0,
        prompt_tokens: int = 0,
        completion_tokens: int = 0,
        cost: float = 0.0,
    ) -> None:
        if stage not in self.stages:
            raise ValueError(f"unknown cost stage: {stage}")
        with self._lock:
            totals = self.stages[stage]
            totals.calls += calls
            totals.prompt_tokens += prompt_tokens
            totals.completion_tokens += completion_tokens
            totals.cost += cost

    def merge(self, other: "CostLedger") -> None:
        for stage, totals in other.stages.items():
            self.add(
                stage,
                calls=totals.calls,
                prompt_tokens=totals.prompt_tokens,
                completion_tokens=totals.completion_tokens,
                cost=totals.cost,
            )

    @property
    def total_cost(self) -> float:
        return sum(t.cost for t in self.stages.values())

    @property
    def total_calls(self) -> int:
        return sum(t.calls for t in self.stages.values())


class CostRow(BaseModel):
    stage: str
    label: str
    calls: int
    prompt_tokens: int
    completion_tokens: int
    cost: float
    cost_per_sample: Optional[float] = None


class CostReport(BaseModel):
    rows: List[CostRow]
    total_otter: CostRow
    total_otter_plus_plus: CostRow
    instances: Optional[int] = None


def _total_row(stage: str, label: str, rows: List[CostRow], instances: Optional[int]) -> CostRow:
    cost = sum(r.cost for r in rows)
    return CostRow(
        stage=stage,
        label=label,
        calls=sum(r.calls for r in rows),
        prompt_tokens=sum(r.prompt_tokens for r in rows),
        completion_tokens=sum(r.completion_tokens for r in rows),
        cost=cost,
        cost_per_sample=cost / instances if instances else None,
    )


def cost_report(ledger: CostLedger, instances: Optional[int] = None) -> CostReport:
    """Per-stage rows plus the single-test and five-test totals."""
    rows = [
        CostRow(
            stage=stage,
            label=STAGE_LABELS[stage],
            calls=totals.calls,
            prompt_tokens=totals.prompt_tokens,
            completion_tokens=totals.completion_tokens,
            cost=totals.cost,
            cost_per_sample=totals.cost / instances if instances else None,
        )
        for stage, totals in ledger.stages.items()
    ]
    single = [r for r in rows if r.stage != "extra_variants"]
    return CostReport(
        rows=rows,
        total_otter=_total_row("total_otter", "Total for Otter", single, instances),
        total_otter_plus_plus=_total_row(
            "total_otter_plus_plus", "Total for Otter++", rows, instances
        ),
        instances=instances,
    )


def ledger_from_transcript(
    transcript: Transcript, price_per_1k_prompt: float, price_per_1k_completion: float
) -> CostLedger:
    """Rebuild per-stage totals from recorded entries, one call per entry."""
    ledger = CostLedger(price_per_1k_prompt, price_per_1k_completion)
    for entry in transcript.entries:
        template_id = entry.get("request", {}).get("template_id")
        stage = entry.get("stage") or TEMPLATE_DEFAULT_STAGE.get(template_id)
        if stage is None:
            logger.warning(f"Transcript entry {entry.get('fingerprint', '?')[:12]} has no stage")
            continue
        ledger.record(stage, Usage(**entry.get("response", {}).get("usage", {})))
    return ledger


def render_cost_table(report: CostReport) -> str:
    def _money(value: Optional[float]) -> str:
        return "-" if value is None else f"${value:.2f}"

    header = f"{'Component':<28} {'Calls':>7} {'Cost':>10} {'Cost/Sample':>12}"
    lines = [header, "-" * len(header)]
    ordered = report.rows[:3] + [report.total_otter] + report.rows[3:] + [report.total_otter_plus_plus]
    for row in ordered:
        lines.append(
            f"{row.label:<28} {row.calls:>7} {_money(row.cost):>10} {_money(row.cost_per_sample):>12}"
        )
    return "\n".join(lines)


class ChatBackend(Protocol):
    backend_id: str

    def send(self, text: str, decoding: Decoding) -> Tuple[str, Usage]: ...


class RetriableBackendError(Exception):
    """Transient backend failure worth another attempt."""


class HttpChatBackend:
    """Chat-completions endpoint reached over HTTP."""

    def __init__(self, base_url: str, model: str, api_key_env: str, timeout_s: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.backend_id = f"http:{model}"

    def send(self, text: str, decoding: Decoding) -> Tuple[str, Usage]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": text}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
        }
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout_s,
            )
        except (requests.Timeout, requests.ConnectionError) as e:
            raise RetriableBackendError(str(e)) from e

        if resp.status_code == 429 or resp.status_code >= 500:
            raise RetriableBackendError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise BackendError(
                f"Backend returned HTTP {resp.status_code}",
                error_code="BACKEND_HTTP_ERROR",
                details={"status": resp.status_code, "body": resp.text[:500]},
            )
        data = resp.json()
        try:
            content = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"Unexpected backend response shape: {e}") from e
        usage = data.get("usage") or {}
        return content, Usage(
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


def complete(
    req: LlmRequest,
    transcript: Transcript,
    ledger: CostLedger,
    backend: Optional[ChatBackend] = None,
    stage: Optional[str] = None,
    max_attempts: int = 3,
    retry_delay_s: float = 1.0,
) -> LlmResponse:
    """
    Answer one request from the transcript (replay) or the backend (record).

    Raises:
        ReplayMissError: Replay mode and the fingerprint is not in the transcript
        BackendError: Record mode and the backend failed max_attempts times
    """
    text = render_prompt(req.template_id, req.bindings)
    fp = fingerprint(req, text)
    stage = stage or TEMPLATE_DEFAULT_STAGE[req.template_id]

    cached = transcript.lookup(fp)
    if cached is not None:
        ledger.record(stage, cached.usage)
        logger.debug(f"Transcript hit {fp[:12]} for {req.template_id}")
        return cached

    if transcript.mode == "replay":
        raise ReplayMissError(
            f"No transcript entry for fingerprint {fp}",
            error_code="REPLAY_MISS",
            details={"fingerprint": fp, "template_id": req.template_id},
        )
    if backend is None:
        raise BackendError("Record mode requires a backend", error_code="NO_BACKEND")

    last_error: Optional[Exception] = None
    for attempt in range(1, max_attempts + 1):
        try:
            content, usage = backend.send(text, req.decoding)
            break
        except RetriableBackendError as e:
            last_error = e
            logger.warning(
                f"Backend attempt {attempt}/{max_attempts} failed for {req.template_id}: {e}"
            )
            if attempt < max_attempts:
                time.sleep(retry_delay_s * attempt)
    else:
        raise BackendError(
            f"Backend failed after {max_attempts} attempts: {last_error}",
            error_code="BACKEND_UNAVAILABLE",
            details={"template_id": req.template_id},
        )

    response = LlmResponse(text=content, usage=usage, backend_id=backend.backend_id)
    transcript.append(fp, req, text, response, stage=stage)
    ledger.record(stage, usage)
    logger.debug(
        f"{req.template_id}: {usage.prompt_tokens}+{usage.completion_tokens} tokens ({stage})"
    )
    return response


class LlmGateway:
    """Binds a transcript, a cost ledger and an optional live backend."""

    def __init__(
        self,
        transcript: Transcript,
        ledger: CostLedger,
        backend: Optional[ChatBackend] = None,
        max_tokens: int = 4096,
        max_attempts: int = 3,
        retry_delay_s: float = 1.0,
    ):
        self.transcript = transcript
        self.ledger = ledger
        self.backend = backend
        self.max_tokens = max_tokens
        self.max_attempts = max_attempts
        self.retry_delay_s = retry_delay_s

    @classmethod
    def from_config(
        cls, config: RunConfig, backend: Optional[ChatBackend] = None
    ) -> "LlmGateway":
        config.require_transcript()
        transcript = Transcript.load(config.transcript_path, mode=config.transcript_mode)
        if backend is None and config.transcript_mode == "record":
            backend = HttpChatBackend(
                config.backend_base_url,
                config.backend_model,
                config.backend_api_key_env,
                config.backend_timeout_s,
            )
        return cls(
            transcript,
            CostLedger(config.price_per_1k_prompt, config.price_per_1k_completion),
            backend=backend,
            max_tokens=config.max_tokens,
            max_attempts=config.max_attempts,
        )

    def fork(self) -> "LlmGateway":
        """Same transcript and backend, fresh ledger."""
        return LlmGateway(
            self.transcript,
            CostLedger(self.ledger.price_per_1k_prompt, self.ledger.price_per_1k_completion),
            backend=self.backend,
            max_tokens=self.max_tokens,
            max_attempts=self.max_attempts,
            retry_delay_s=self.retry_delay_s,
        )

    def complete(
        self, template_id: str, bindings: Dict[str, str], stage: Optional[str] = None
    ) -> LlmResponse:
        req = LlmRequest(
            template_id=template_id,
            bindings=bindings,
            decoding=Decoding(max_tokens=self.max_tokens),
        )
        return complete(
            req,
            self.transcript,
            self.ledger,
            backend=self.backend,
            stage=stage,
            max_attempts=self.max_attempts,
            retry_delay_s=self.retry_delay_s,
        )
