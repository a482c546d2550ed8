"""Diagnosis suppression: mode-driven filtering, code/substring redaction,
and the stage-3 semantic leak scan."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from . import assets
from .errors import ScanParseError
from .fhir import FhirBundle, ResourceEntry, serialize_bundle
from .gateway import Gateway, LlmRequest, Stage
from .ir import DEFAULT_PIPELINE_MODEL, SYSTEM_URIS, CodedConcept, strip_code_fences

REDACTION_TOKEN = "[REDACTED]"

ASSERTION_EXT_URL = "https://fhirforge.dev/fhir/StructureDefinition/assertion-source"

#: Keys whose string values count as narrative for redaction and scanning.
NARRATIVE_KEYS = ("text", "display", "conclusion")


class HidingMode(str, Enum):
    NONE = "none"
    HIDDEN = "hidden"
    EXPLICIT = "explicit"
    FULL = "full"


class RedactionReason(str, Enum):
    CODE_MATCH = "code_match"
    SUBSTRING_MATCH = "substring_match"
    SEMANTIC_LEAK = "semantic_leak"


@dataclass(frozen=True)
class RedactionSpan:
    path: str
    start: int
    end: int
    reason: RedactionReason

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")

    def to_dict(self) -> dict:
        return {"path": self.path, "start": self.start, "end": self.end,
                "reason": self.reason.value}


@dataclass
class DiagnosisSpec:
    name: str
    synonyms: list[str] = field(default_factory=list)
    codes: list[CodedConcept] = field(default_factory=list)

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("diagnosis name must be non-empty")
        self.synonyms = [s.lower().strip() for s in self.synonyms if s.strip()]

    def phrases(self) -> list[str]:
        return [self.name] + self.synonyms

    def code_keys(self) -> set[tuple[str, str]]:
        return {(SYSTEM_URIS[c.system], c.code) for c in self.codes}

    @classmethod
    def from_file(cls, path: str | Path) -> "DiagnosisSpec":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return cls(
            name=raw["name"],
            synonyms=raw.get("synonyms", []),
            codes=[CodedConcept.model_validate(c) for c in raw.get("codes", [])],
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "synonyms": self.synonyms,
            "codes": [c.model_dump(mode="json") for c in self.codes],
        }


@dataclass
class ScanResult:
    spans: list[RedactionSpan]
    locate_failures: list[dict]


@dataclass
class HidingReport:
    mode: HidingMode
    removed_entries: list[tuple[str, str]]
    redactions: list[RedactionSpan]
    residual_check: bool
    locate_failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "removed_entries": [list(r) for r in self.removed_entries],
            "redactions": [s.to_dict() for s in self.redactions],
            "residual_check": self.residual_check,
            "locate_failures": self.locate_failures,
        }


def _phrase_pattern(phrase: str) -> re.Pattern:
    words = [re.escape(w) for w in phrase.split()]
    return re.compile(r"\b" + r"\s+".join(words) + r"\b", re.IGNORECASE)


def assertion_source_of(resource: dict) -> str:
    for ext in resource.get("extension", []) or []:
        if isinstance(ext, dict) and ext.get("url") == ASSERTION_EXT_URL:
            return ext.get("valueCode", "clinician-concluded")
    return "clinician-concluded"


def _codings_of(node: Any):
    """Yield every coding dict in a tree together with its container list."""
    if isinstance(node, dict):
        for key, value in node.items():
            if key == "coding" and isinstance(value, list):
                yield value
            else:
                yield from _codings_of(value)
    elif isinstance(node, list):
        for value in node:
            yield from _codings_of(value)


def _condition_matches_codes(resource: dict, spec: DiagnosisSpec) -> bool:
    keys = spec.code_keys()
    for coding_list in _codings_of(resource.get("code", {})):
        for coding in coding_list:
            if isinstance(coding, dict) and (coding.get("system"), coding.get("code")) in keys:
                return True
    return False


def _conclusion_matches(text: str, spec: DiagnosisSpec) -> bool:
    return any(_phrase_pattern(p).search(text) for p in spec.phrases())


def filter_resources(
    bundle: FhirBundle,
    spec: DiagnosisSpec,
    mode: HidingMode,
) -> tuple[FhirBundle, list[tuple[str, str]]]:
    """Mode-driven entry filtering.

    full: unchanged. hidden: drop Conditions coded with the diagnosis and
    matching DiagnosticReport conclusions. none: additionally drop every
    clinician-concluded Condition and all conclusions. explicit: keep only
    patient-stated Conditions.
    """
    if mode == HidingMode.FULL:
        return bundle.copy(), []

    out = bundle.copy()
    removed: list[tuple[str, str]] = []
    kept: list[ResourceEntry] = []
    for entry in out.entries:
        resource = entry.resource
        rtype = entry.resource_type
        if rtype == "Condition":
            code_hit = _condition_matches_codes(resource, spec)
            concluded = assertion_source_of(resource) == "clinician-concluded"
            drop = (
                (mode == HidingMode.HIDDEN and code_hit)
                # none removes every diagnostic conclusion, which subsumes the
                # hidden-mode removals so retained(none) ⊆ retained(hidden)
                or (mode == HidingMode.NONE and (concluded or code_hit))
                or (mode == HidingMode.EXPLICIT and concluded)
            )
            if drop:
                removed.append((rtype, entry.resource_id or ""))
                continue
        if rtype == "DiagnosticReport" and mode in (HidingMode.HIDDEN, HidingMode.NONE):
            conclusion = resource.get("conclusion")
            if isinstance(conclusion, str) and (
                    mode == HidingMode.NONE or _conclusion_matches(conclusion, spec)):
                del resource["conclusion"]
                removed.append(("DiagnosticReport.conclusion", entry.resource_id or ""))
        kept.append(entry)
    out.entries = kept
    return out, removed


def _walk_narrative(node: Any, path: str = ""):
    """Yield (pointer, container, key, value) for every narrative string."""
    if isinstance(node, dict):
        for key, value in node.items():
            child = f"{path}/{key}"
            if key in NARRATIVE_KEYS and isinstance(value, str):
                yield child, node, key, value
            else:
                yield from _walk_narrative(value, child)
    elif isinstance(node, list):
        for i, value in enumerate(node):
            yield from _walk_narrative(value, f"{path}/{i}")


def redact_substrings(
    bundle: FhirBundle,
    spec: DiagnosisSpec,
) -> tuple[FhirBundle, list[RedactionSpan]]:
    """Exhaustive code- and substring-based scrub of the whole bundle.

    Word-boundary occurrences of the diagnosis name/synonyms in narrative
    fields become the redaction token; codings that carry a diagnosis code
    are removed from their coding lists.
    """
    out = bundle.copy()
    spans: list[RedactionSpan] = []
    patterns = [_phrase_pattern(p) for p in spec.phrases()]
    code_keys = spec.code_keys()

    for i, entry in enumerate(out.entries):
        base = f"/entry/{i}/resource"

        def scrub_codings(node: Any, path: str):
            if isinstance(node, dict):
                for key, value in list(node.items()):
                    child = f"{path}/{key}"
                    if key == "coding" and isinstance(value, list):
                        keep = []
                        for j, coding in enumerate(value):
                            if isinstance(coding, dict) and (
                                    coding.get("system"), coding.get("code")) in code_keys:
                                spans.append(RedactionSpan(
                                    path=f"{child}/{j}/code", start=0,
                                    end=len(coding.get("code", "")) or 1,
                                    reason=RedactionReason.CODE_MATCH))
                            else:
                                keep.append(coding)
                        if keep:
                            node[key] = keep
                        else:
                            del node[key]
                    else:
                        scrub_codings(value, child)
            elif isinstance(node, list):
                for j, value in enumerate(node):
                    scrub_codings(value, f"{path}/{j}")

        scrub_codings(entry.resource, base)

        for pointer, container, key, value in list(_walk_narrative(entry.resource, base)):
            new_value = value
            matches = []
            for pattern in patterns:
                matches.extend(pattern.finditer(value))
            if not matches:
                continue
            matches.sort(key=lambda m: (m.start(), -m.end()))
            pruned = []
            last_end = -1
            for m in matches:
                if m.start() >= last_end:
                    pruned.append(m)
                    last_end = m.end()
            for m in reversed(pruned):
                new_value = new_value[:m.start()] + REDACTION_TOKEN + new_value[m.end():]
                spans.append(RedactionSpan(
                    path=pointer, start=m.start(), end=m.end(),
                    reason=RedactionReason.SUBSTRING_MATCH))
            container[key] = new_value
    return out, spans


def narrative_fields(bundle: FhirBundle) -> list[tuple[str, str]]:
    fields = []
    for i, entry in enumerate(bundle.entries):
        fields.extend(
            (pointer, value)
            for pointer, _c, _k, value in _walk_narrative(entry.resource, f"/entry/{i}/resource")
        )
    return fields


def build_scan_request(
    bundle: FhirBundle,
    spec: DiagnosisSpec,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> LlmRequest:
    template = assets.load_prompt("semantic_scan_v1.txt")
    fields = [{"path": p, "text": t} for p, t in narrative_fields(bundle)]
    prompt = (template
              .replace("{diagnosis_name}", spec.name)
              .replace("{synonyms}", ", ".join(spec.synonyms) or "(none)")
              .replace("{fields_json}", json.dumps(fields, indent=2, sort_keys=True, ensure_ascii=False)))
    return LlmRequest(
        stage=Stage.SEMANTIC_SCAN,
        system_prompt="You audit clinical documents for diagnostic leakage. Return JSON only.",
        user_prompt=prompt,
        model_id=model_id,
        temperature=0.0,
    )


def semantic_scan(
    bundle: FhirBundle,
    spec: DiagnosisSpec,
    gateway: Gateway,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> ScanResult:
    """Stage-3 scan: quotes are located exactly in their fields, never guessed."""
    response = gateway.complete(build_scan_request(bundle, spec, model_id))
    try:
        items = json.loads(strip_code_fences(response.text))
        if not isinstance(items, list):
            raise ValueError("scan response must be a JSON array")
        for item in items:
            if not isinstance(item, dict) or "path" not in item or "quote" not in item:
                raise ValueError("each scan item needs path and quote")
    except (json.JSONDecodeError, ValueError) as exc:
        raise ScanParseError(str(exc)) from exc

    by_path = dict(narrative_fields(bundle))
    spans: list[RedactionSpan] = []
    failures: list[dict] = []
    for item in items:
        path, quote = item["path"], item["quote"]
        value = by_path.get(path)
        start = value.find(quote) if isinstance(value, str) and quote else -1
        if start < 0:
            failures.append({"path": path, "quote": quote, "reason": "not located"})
            continue
        spans.append(RedactionSpan(
            path=path, start=start, end=start + len(quote),
            reason=RedactionReason.SEMANTIC_LEAK))
    return ScanResult(spans=spans, locate_failures=failures)


def apply_spans(bundle: FhirBundle, spans: list[RedactionSpan]) -> FhirBundle:
    """Replace each span with the redaction token (descending offsets per field)."""
    out = bundle.copy()
    field_index: dict[str, tuple[dict, str]] = {}
    for i, entry in enumerate(out.entries):
        for pointer, container, key, _value in _walk_narrative(entry.resource, f"/entry/{i}/resource"):
            field_index[pointer] = (container, key)
    by_path: dict[str, list[RedactionSpan]] = {}
    for span in spans:
        by_path.setdefault(span.path, []).append(span)
    for path, path_spans in by_path.items():
        if path not in field_index:
            continue
        container, key = field_index[path]
        value = container[key]
        for span in sorted(path_spans, key=lambda s: -s.start):
            if span.end <= len(value):
                value = value[:span.start] + REDACTION_TOKEN + value[span.end:]
        container[key] = value
    return out


def verify_hidden(bundle: FhirBundle, spec: DiagnosisSpec) -> bool:
    """True iff no diagnosis code sits in a coding position and no name or
    synonym occurs (word-boundary, case-insensitive) in the serialization."""
    code_keys = spec.code_keys()
    for entry in bundle.entries:
        for coding_list in _codings_of(entry.resource):
            for coding in coding_list:
                if isinstance(coding, dict) and (
                        coding.get("system"), coding.get("code")) in code_keys:
                    return False
    serialized = serialize_bundle(bundle)
    return not any(_phrase_pattern(p).search(serialized) for p in spec.phrases())


def apply_hiding(
    bundle: FhirBundle,
    spec: DiagnosisSpec,
    mode: HidingMode,
    gateway: Optional[Gateway] = None,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> tuple[FhirBundle, HidingReport]:
    """filter -> redact -> (none/hidden) semantic scan -> verify."""
    if mode == HidingMode.FULL:
        report = HidingReport(mode=mode, removed_entries=[], redactions=[],
                              residual_check=True)
        return bundle, report

    out, removed = filter_resources(bundle, spec, mode)
    redactions: list[RedactionSpan] = []
    failures: list[dict] = []
    if mode in (HidingMode.NONE, HidingMode.HIDDEN):
        out, spans = redact_substrings(out, spec)
        redactions.extend(spans)
        if gateway is None:
            raise ValueError(f"mode {mode.value} requires a gateway for the semantic scan")
        scan = semantic_scan(out, spec, gateway, model_id)
        out = apply_spans(out, scan.spans)
        redactions.extend(scan.spans)
        failures = scan.locate_failures

    report = HidingReport(
        mode=mode,
        removed_entries=removed,
        redactions=redactions,
        residual_check=verify_hidden(out, spec),
        locate_failures=failures,
    )
    return out, report
