"""Stage-2 FHIR synthesis, the bounded validation-repair loop, and
rule-based post-processors (backfill, status/unit/date normalization)."""
from __future__ import annotations

import copy
import json
import logging
import re
import uuid
from dataclasses import dataclass, field
from datetime import date
from typing import Optional

from . import assets
from .errors import BundleSyntaxError, NotABundleError, SynthesisParseError
from .fhir import (
    FhirBundle,
    IssueKind,
    ResourceEntry,
    Severity,
    ValidationIssue,
    error_issues,
    parse_bundle,
    validate_consistency,
    validate_structure,
)
from .gateway import Gateway, LlmRequest, Stage
from .ir import DEFAULT_PIPELINE_MODEL, DEFAULT_REFERENCE_DATE, ClinicalScenario, strip_code_fences

logger = logging.getLogger(__name__)

REPAIR_DELIMITER = "\n\n--- VALIDATION ISSUES TO FIX (JSON) ---\n"

_BACKFILL_NAMESPACE = uuid.UUID("0f7d7f2e-3a84-4e6f-9f5b-1f6f8c2a9d11")


class UcumTable:
    """Raw unit string -> canonical UCUM code; idempotent on its outputs."""

    def __init__(self, mapping: dict[str, str] | None = None):
        self.mapping = dict(mapping) if mapping is not None else dict(assets.load_json("ucum_units.json"))
        # Canonical codes map to themselves so normalization is a fixed point.
        for canonical in list(self.mapping.values()):
            self.mapping.setdefault(canonical, canonical)
        self._lower = {}
        for key, value in self.mapping.items():
            self._lower.setdefault(key.lower(), value)

    def normalize(self, unit: str) -> tuple[str, bool]:
        """Return (canonical unit, mapped?); unmapped units come back intact."""
        if unit in self.mapping:
            return self.mapping[unit], True
        lowered = unit.lower()
        if lowered in self._lower:
            return self._lower[lowered], True
        return unit, False

    def canonical_codes(self) -> set[str]:
        return set(self.mapping.values())


@dataclass
class SynthesisAttempt:
    attempt_no: int
    issues_in: list[ValidationIssue]
    bundle_out: Optional[FhirBundle]

    def to_dict(self) -> dict:
        return {
            "attempt_no": self.attempt_no,
            "issues_in": [i.to_dict() for i in self.issues_in],
            "parsed": self.bundle_out is not None,
        }


@dataclass
class RepairOutcome:
    succeeded: bool
    bundle: Optional[FhirBundle]
    attempts_used: int
    attempts: list[SynthesisAttempt] = field(default_factory=list)
    issues: list[ValidationIssue] = field(default_factory=list)
    failure: Optional[str] = None


def build_synthesis_request(
    scenario: ClinicalScenario,
    reference_date: date = DEFAULT_REFERENCE_DATE,
    issues: Optional[list[ValidationIssue]] = None,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> LlmRequest:
    template = assets.load_prompt("synthesis_v1.txt")
    scenario_json = json.dumps(
        scenario.model_dump(mode="json", exclude={"source_text", "conversion_failed"}),
        indent=2, sort_keys=True, ensure_ascii=False)
    prompt = (template
              .replace("{reference_date}", reference_date.isoformat())
              .replace("{scenario_json}", scenario_json))
    if issues:
        prompt += REPAIR_DELIMITER + json.dumps(
            [i.to_dict() for i in issues], indent=2, sort_keys=True, ensure_ascii=False)
    return LlmRequest(
        stage=Stage.SYNTHESIS,
        system_prompt="You emit HL7 FHIR R4 JSON bundles. Return JSON only.",
        user_prompt=prompt,
        model_id=model_id,
        temperature=0.0,
    )


def synthesize_bundle(
    scenario: ClinicalScenario,
    gateway: Gateway,
    reference_date: date = DEFAULT_REFERENCE_DATE,
    issues: Optional[list[ValidationIssue]] = None,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> FhirBundle:
    response = gateway.complete(build_synthesis_request(scenario, reference_date, issues, model_id))
    try:
        return parse_bundle(strip_code_fences(response.text))
    except (BundleSyntaxError, NotABundleError) as exc:
        raise SynthesisParseError(str(exc)) from exc


def validate_bundle(bundle: FhirBundle, scenario: Optional[ClinicalScenario] = None) -> list[ValidationIssue]:
    """Structure first; consistency only once the structure is clean."""
    issues = validate_structure(bundle)
    if not error_issues(issues):
        issues = issues + validate_consistency(bundle, scenario)
    return issues


def repair_loop(
    scenario: ClinicalScenario,
    gateway: Gateway,
    max_attempts: int = 3,
    reference_date: date = DEFAULT_REFERENCE_DATE,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> RepairOutcome:
    """Synthesize-validate loop; Error issues are fed back up to max_attempts."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    attempts: list[SynthesisAttempt] = []
    issues_in: list[ValidationIssue] = []
    for attempt_no in range(1, max_attempts + 1):
        try:
            bundle = synthesize_bundle(scenario, gateway, reference_date,
                                       issues=issues_in or None, model_id=model_id)
        except SynthesisParseError as exc:
            bundle = None
            errors = [ValidationIssue(
                Severity.ERROR, IssueKind.INCONSISTENCY, "/",
                f"response did not parse as a bundle: {exc}")]
        else:
            errors = error_issues(validate_bundle(bundle, scenario))
        attempts.append(SynthesisAttempt(attempt_no, issues_in, bundle))
        if not errors:
            return RepairOutcome(succeeded=True, bundle=bundle,
                                 attempts_used=attempt_no, attempts=attempts)
        issues_in = errors
    logger.info("repair loop exhausted after %d attempts", max_attempts)
    return RepairOutcome(succeeded=False, bundle=None, attempts_used=max_attempts,
                         attempts=attempts, issues=issues_in,
                         failure="validation_exhausted")


# ---------------------------------------------------------------------------
# Post-processors. The composed pipeline is idempotent byte-for-byte.
# ---------------------------------------------------------------------------


def _clone(bundle: FhirBundle) -> FhirBundle:
    return FhirBundle(
        type=bundle.type,
        entries=[ResourceEntry(e.full_url, copy.deepcopy(e.resource)) for e in bundle.entries],
        extra=copy.deepcopy(bundle.extra),
    )


def backfill_resources(
    bundle: FhirBundle,
    scenario: Optional[ClinicalScenario] = None,
    reference_date: date = DEFAULT_REFERENCE_DATE,
) -> FhirBundle:
    """Add a default ambulatory Encounter, wire subjects, placeholder name."""
    out = _clone(bundle)
    patient = out.patient
    if patient is None:
        return out
    patient_id = patient.resource_id
    patient_ref = {"reference": f"Patient/{patient_id}"}

    if not patient.resource.get("name"):
        patient.resource["name"] = [{"use": "official", "given": ["Synthetic"], "family": "Patient"}]

    if not out.entries_of_type("Encounter"):
        enc_id = str(uuid.uuid5(_BACKFILL_NAMESPACE, f"encounter:{patient_id}"))
        iso = reference_date.isoformat()
        out.entries.append(ResourceEntry(
            full_url=f"urn:uuid:{enc_id}",
            resource={
                "resourceType": "Encounter",
                "id": enc_id,
                "status": "finished",
                "class": {
                    "system": "http://terminology.hl7.org/CodeSystem/v3-ActCode",
                    "code": "AMB",
                    "display": "ambulatory",
                },
                "subject": dict(patient_ref),
                "period": {"start": iso, "end": iso},
            },
        ))

    for entry in out.entries:
        rtype = entry.resource_type
        if rtype in ("Patient", "Encounter") or rtype not in (
                "Condition", "Observation", "MedicationRequest", "Procedure",
                "DiagnosticReport", "FamilyMemberHistory", "AllergyIntolerance",
                "Immunization"):
            continue
        key = "patient" if rtype in ("FamilyMemberHistory", "AllergyIntolerance", "Immunization") else "subject"
        if not isinstance(entry.resource.get(key), dict) or "reference" not in entry.resource.get(key, {}):
            entry.resource[key] = dict(patient_ref)
    return out


def normalize_units(bundle: FhirBundle, table: UcumTable | None = None) -> tuple[FhirBundle, list[ValidationIssue]]:
    """Rewrite Observation units through the table; unmapped units warn."""
    table = table or UcumTable()
    out = _clone(bundle)
    issues: list[ValidationIssue] = []
    for i, entry in enumerate(out.entries):
        if entry.resource_type != "Observation":
            continue
        quantity = entry.resource.get("valueQuantity")
        if not isinstance(quantity, dict):
            continue
        raw = quantity.get("unit")
        if isinstance(raw, str) and raw:
            canonical, mapped = table.normalize(raw)
            if mapped:
                quantity["unit"] = canonical
                if "code" in quantity or "system" in quantity:
                    quantity["code"] = canonical
                    quantity.setdefault("system", "http://unitsofmeasure.org")
            else:
                issues.append(ValidationIssue(
                    Severity.WARNING, IssueKind.BAD_UNIT,
                    f"/entry/{i}/resource/valueQuantity/unit",
                    f"unit {raw!r} has no UCUM mapping"))
    return out, issues


_MONTHS = {name: i for i, name in enumerate(
    ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"], start=1)}

_DATE_SHAPES = [
    re.compile(r"(\d{4})-(\d{2})-(\d{2})"),
    re.compile(r"(\d{4})/(\d{1,2})/(\d{1,2})"),
]
_MON_DD_YYYY = re.compile(r"([A-Za-z]{3,9})\.?\s+(\d{1,2}),\s*(\d{4})")
_YYYY_MM = re.compile(r"(\d{4})-(\d{2})")
_YYYY = re.compile(r"(\d{4})")


def canonicalize_date(value: str) -> Optional[str]:
    """Accepted shapes -> the most precise available FHIR date string."""
    value = value.strip()
    for shape in _DATE_SHAPES:
        m = shape.fullmatch(value)
        if m:
            y, mo, d = int(m.group(1)), int(m.group(2)), int(m.group(3))
            try:
                return date(y, mo, d).isoformat()
            except ValueError:
                return None
    m = _MON_DD_YYYY.fullmatch(value)
    if m:
        month = _MONTHS.get(m.group(1)[:3].lower())
        if month is None:
            return None
        try:
            return date(int(m.group(3)), month, int(m.group(2))).isoformat()
        except ValueError:
            return None
    m = _YYYY_MM.fullmatch(value)
    if m:
        if 1 <= int(m.group(2)) <= 12:
            return value
        return None
    if _YYYY.fullmatch(value):
        return value
    return None


def normalize_dates(bundle: FhirBundle) -> tuple[FhirBundle, list[ValidationIssue]]:
    """Canonicalize all profile date fields; unparseable values error."""
    profiles = assets.load_json("fhir_profiles.json")["resources"]
    out = _clone(bundle)
    issues: list[ValidationIssue] = []
    for i, entry in enumerate(out.entries):
        profile = profiles.get(entry.resource_type)
        if profile is None:
            continue
        for dotted in profile.get("date_fields", []):
            parts = dotted.split(".")
            node = entry.resource
            for part in parts[:-1]:
                node = node.get(part) if isinstance(node, dict) else None
                if node is None:
                    break
            if not isinstance(node, dict) or parts[-1] not in node:
                continue
            raw = node[parts[-1]]
            if not isinstance(raw, str):
                continue
            canonical = canonicalize_date(raw)
            if canonical is None:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.BAD_DATE,
                    f"/entry/{i}/resource/{dotted.replace('.', '/')}",
                    f"date {raw!r} is not in an accepted shape"))
            else:
                node[parts[-1]] = canonical
    return out, issues


_STATUS_DEFAULTS = {
    "Observation": {"status": "final"},
    "Encounter": {"status": "finished"},
    "Procedure": {"status": "completed"},
    "Immunization": {"status": "completed"},
    "MedicationRequest": {"status": "active", "intent": "order"},
}

_CONDITION_CLINICAL = {
    "coding": [{
        "system": "http://terminology.hl7.org/CodeSystem/condition-clinical",
        "code": "active",
        "display": "Active",
    }],
    "text": "Active",
}
_CONDITION_VERIFICATION = {
    "coding": [{
        "system": "http://terminology.hl7.org/CodeSystem/condition-ver-status",
        "code": "confirmed",
        "display": "Confirmed",
    }],
}


def normalize_status(bundle: FhirBundle) -> tuple[FhirBundle, list[ValidationIssue]]:
    """Fill missing statuses with per-resource defaults; illegal values error."""
    profiles = assets.load_json("fhir_profiles.json")["resources"]
    out = _clone(bundle)
    issues: list[ValidationIssue] = []
    for i, entry in enumerate(out.entries):
        rtype = entry.resource_type
        defaults = _STATUS_DEFAULTS.get(rtype, {})
        for fname, default in defaults.items():
            entry.resource.setdefault(fname, default)
        if rtype == "Condition":
            entry.resource.setdefault("clinicalStatus", copy.deepcopy(_CONDITION_CLINICAL))
            entry.resource.setdefault("verificationStatus", copy.deepcopy(_CONDITION_VERIFICATION))
        profile = profiles.get(rtype)
        if profile is None:
            continue
        allowed = profile.get("allowed_status")
        if allowed and entry.resource.get("status") not in (None, *allowed):
            issues.append(ValidationIssue(
                Severity.ERROR, IssueKind.BAD_STATUS, f"/entry/{i}/resource/status",
                f"{rtype}.status {entry.resource.get('status')!r} not in allowed set"))
    return out, issues


def postprocess(
    bundle: FhirBundle,
    scenario: Optional[ClinicalScenario] = None,
    table: UcumTable | None = None,
    reference_date: date = DEFAULT_REFERENCE_DATE,
) -> tuple[FhirBundle, list[ValidationIssue]]:
    """backfill -> status -> units -> dates, collecting reported issues."""
    out = backfill_resources(bundle, scenario, reference_date)
    out, status_issues = normalize_status(out)
    out, unit_issues = normalize_units(out, table)
    out, date_issues = normalize_dates(out)
    return out, status_issues + unit_issues + date_issues
