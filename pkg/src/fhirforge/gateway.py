"""Uniform LLM gateway with deterministic record/replay transcripts.

Every pipeline stage goes through :class:`Gateway` so the whole pipeline can
run offline against a transcript file (one JSON object per line:
``{"fingerprint", "stage", "response_text"}``).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import httpx

from .errors import (
    EmptyResponseError,
    ProviderUnreachableError,
    ReplayMissError,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "FHIRFORGE_API_KEY"


class Stage(str, Enum):
    EXTRACTION = "extraction"
    SYNTHESIS = "synthesis"
    SEMANTIC_SCAN = "semantic_scan"
    DIAGNOSIS = "diagnosis"
    JUDGE = "judge"


#: Stages that must run deterministically (temperature pinned to 0).
PIPELINE_STAGES = frozenset({Stage.EXTRACTION, Stage.SYNTHESIS, Stage.SEMANTIC_SCAN})


class ReasoningEffort(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class LlmRequest:
    stage: Stage
    system_prompt: str
    user_prompt: str
    model_id: str
    temperature: float = 0.0
    max_tokens: int = 4096
    reasoning_effort: Optional[ReasoningEffort] = None

    def __post_init__(self):
        object.__setattr__(self, "temperature", float(self.temperature))
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.stage in PIPELINE_STAGES and self.temperature != 0.0:
            raise ValueError(f"stage {self.stage.value} requires temperature 0")

    def canonical(self) -> str:
        """Canonical serialization used for fingerprinting (sorted keys)."""
        payload = {
            "stage": self.stage.value,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "reasoning_effort": self.reasoning_effort.value if self.reasoning_effort else None,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(request: LlmRequest) -> str:
    """Stable digest of a request's canonical serialization."""
    return hashlib.sha256(request.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmResponse:
    text: str
    provider_id: str
    from_replay: bool


class Transcript:
    """Fingerprint-keyed response cache backed by a JSONL file.

    Reads are lock-free after load; appends are serialized so a shared
    gateway can be used from concurrent case conversions.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, str] = {}
        self._write_lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                self._entries[row["fingerprint"]] = row["response_text"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fp: str) -> bool:
        return fp in self._entries

    def get(self, fp: str) -> Optional[str]:
        return self._entries.get(fp)

    def append(self, fp: str, stage: Stage, response_text: str) -> None:
        with self._write_lock:
            self._entries[fp] = response_text
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(
                        {"fingerprint": fp, "stage": stage.value, "response_text": response_text},
                        ensure_ascii=False,
                    ) + "\n")


_DIALECTS = ("openai-compatible", "anthropic-compatible")


@dataclass
class ProviderConfig:
    base_url: str
    dialect: str = "openai-compatible"
    model_id: str = ""
    auth_header: str = "Authorization"
    api_key: Optional[str] = None

    def __post_init__(self):
        if self.dialect not in _DIALECTS:
            raise ValueError(f"unknown dialect {self.dialect!r}; expected one of {_DIALECTS}")

    @classmethod
    def from_file(cls, path: str | Path) -> "ProviderConfig":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return cls(
            base_url=raw["base_url"],
            dialect=raw.get("dialect", "openai-compatible"),
            model_id=raw.get("model_id", ""),
            auth_header=raw.get("auth_header", "Authorization"),
        )

    def resolve_key(self) -> str:
        return self.api_key or os.environ.get(API_KEY_ENV, "")


class Gateway:
    """Completion interface with three modes.

    ``replay``: transcript lookups only, never touches the network.
    ``record``: serve from the transcript when present, otherwise call the
    provider and append the response.
    ``live``: always call the provider, transcript untouched.
    """

    MODES = ("record", "replay", "live")

    def __init__(
        self,
        mode: str = "replay",
        transcript: Transcript | None = None,
        provider: ProviderConfig | None = None,
        http_client: httpx.Client | None = None,
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
    ):
        if mode not in self.MODES:
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode in ("record", "replay") and transcript is None:
            raise ValueError(f"mode {mode!r} requires a transcript")
        self.mode = mode
        self.transcript = transcript
        self.provider = provider
        self._client = http_client
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds

    def complete(self, request: LlmRequest) -> LlmResponse:
        fp = fingerprint(request)
        if self.mode in ("replay", "record") and fp in self.transcript:
            return LlmResponse(text=self.transcript.get(fp), provider_id="replay", from_replay=True)
        if self.mode == "replay":
            raise ReplayMissError(
                f"fingerprint {fp[:12]}… (stage {request.stage.value}) not in transcript"
            )
        text = self._call_provider(request)
        if self.mode == "record":
            self.transcript.append(fp, request.stage, text)
        return LlmResponse(text=text, provider_id=self._provider_id(), from_replay=False)

    def _provider_id(self) -> str:
        if self.provider is None:
            return "unconfigured"
        return f"{self.provider.dialect}:{self.provider.model_id}"

    def _call_provider(self, request: LlmRequest) -> str:
        if self.provider is None:
            raise ProviderUnreachableError("no provider configured")
        client = self._client or httpx.Client(timeout=120.0)
        url, headers, payload = self._build_http_call(request)
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = client.post(url, headers=headers, json=payload)
                resp.raise_for_status()
                text = self._extract_text(resp.json())
                if not text:
                    raise EmptyResponseError(f"empty completion for stage {request.stage.value}")
                return text
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                # Transport-level trouble is retried; empty responses are not.
                last_exc = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff_seconds * (2 ** attempt))
        raise ProviderUnreachableError(f"provider unreachable after {self.max_retries} attempts: {last_exc}")

    def _build_http_call(self, request: LlmRequest) -> tuple[str, dict, dict]:
        cfg = self.provider
        model = request.model_id or cfg.model_id
        key = cfg.resolve_key()
        base = cfg.base_url.rstrip("/")
        if cfg.dialect == "anthropic-compatible":
            url = f"{base}/v1/messages"
            headers = {cfg.auth_header: key, "anthropic-version": "2023-06-01"}
            payload = {
                "model": model,
                "system": request.system_prompt,
                "messages": [{"role": "user", "content": request.user_prompt}],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            }
        else:
            url = f"{base}/chat/completions"
            value = f"Bearer {key}" if cfg.auth_header == "Authorization" else key
            headers = {cfg.auth_header: value}
            payload = {
                "model": model,
                "messages": [
                    {"role": "system", "content": request.system_prompt},
                    {"role": "user", "content": request.user_prompt},
                ],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            }
        if request.reasoning_effort is not None:
            payload["reasoning_effort"] = request.reasoning_effort.value
        return url, headers, payload

    def _extract_text(self, body: dict) -> str:
        if self.provider.dialect == "anthropic-compatible":
            blocks = body.get("content") or []
            return "".join(b.get("text", "") for b in blocks if b.get("type", "text") == "text")
        choices = body.get("choices") or []
        if not choices:
            return ""
        return choices[0].get("message", {}).get("content") or ""
