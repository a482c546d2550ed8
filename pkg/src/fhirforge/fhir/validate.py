"""Structural and clinical-consistency validation for supported bundles.

Profile rules (required fields, allowed statuses, date fields) live in the
``fhir_profiles.json`` asset; validators are pure functions returning issue
lists, and Error-severity issues block acceptance.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from typing import Any, Optional

from .. import assets
from ..ir import ClinicalScenario
from .bundle import (
    SUPPORTED_RESOURCES,
    FhirBundle,
    ResourceEntry,
    resolve_references,
)


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class IssueKind(str, Enum):
    MISSING_FIELD = "missing_field"
    BAD_REFERENCE = "bad_reference"
    BAD_DATE = "bad_date"
    BAD_UNIT = "bad_unit"
    BAD_STATUS = "bad_status"
    URL_MISMATCH = "url_mismatch"
    UNKNOWN_RESOURCE = "unknown_resource"
    INCONSISTENCY = "inconsistency"


@dataclass(frozen=True)
class ValidationIssue:
    severity: Severity
    kind: IssueKind
    path: str
    message: str

    def to_dict(self) -> dict:
        return {
            "severity": self.severity.value,
            "kind": self.kind.value,
            "path": self.path,
            "message": self.message,
        }


def error_issues(issues: list[ValidationIssue]) -> list[ValidationIssue]:
    return [i for i in issues if i.severity == Severity.ERROR]


def _profiles() -> dict:
    return assets.load_json("fhir_profiles.json")


_FHIR_DATE = re.compile(r"(\d{4})(?:-(\d{2})(?:-(\d{2}))?)?")


def parse_fhir_date(value: str) -> Optional[date]:
    """Parse YYYY[-MM[-DD]]; partial dates resolve to the first covered day."""
    if not isinstance(value, str):
        return None
    m = _FHIR_DATE.fullmatch(value)
    if not m:
        return None
    year, month, day = int(m.group(1)), int(m.group(2) or 1), int(m.group(3) or 1)
    try:
        return date(year, month, day)
    except ValueError:
        return None


def _get_path(resource: dict, dotted: str) -> Any:
    node: Any = resource
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _codeable_codes(value: Any) -> list[str]:
    if not isinstance(value, dict):
        return []
    return [c.get("code") for c in value.get("coding", []) if isinstance(c, dict)]


def _system_uri_allowed(uri: str, profiles: dict) -> bool:
    if uri in profiles["coding_system_uris"]:
        return True
    return any(uri.startswith(p) for p in profiles["coding_system_uri_prefixes"])


def validate_structure(bundle: FhirBundle) -> list[ValidationIssue]:
    """Required fields, references, ids, fullUrls, dates, and status values."""
    profiles = _profiles()
    resources = profiles["resources"]
    issues: list[ValidationIssue] = []

    if bundle.type != "collection":
        issues.append(ValidationIssue(
            Severity.ERROR, IssueKind.BAD_STATUS, "/type",
            f'bundle.type must be "collection", got {bundle.type!r}'))

    patients = bundle.entries_of_type("Patient")
    if len(patients) == 0:
        issues.append(ValidationIssue(
            Severity.ERROR, IssueKind.MISSING_FIELD, "/entry",
            "bundle must contain exactly one Patient (found 0)"))
    elif len(patients) > 1:
        issues.append(ValidationIssue(
            Severity.ERROR, IssueKind.INCONSISTENCY, "/entry",
            f"bundle must contain exactly one Patient (found {len(patients)})"))

    seen_ids: set[str] = set()
    for i, entry in enumerate(bundle.entries):
        base = f"/entry/{i}/resource"
        rtype = entry.resource_type
        rid = entry.resource_id

        if rtype not in SUPPORTED_RESOURCES:
            issues.append(ValidationIssue(
                Severity.WARNING, IssueKind.UNKNOWN_RESOURCE, f"{base}/resourceType",
                f"resource type {rtype or '(missing)'!r} is outside the supported set"))
            continue

        if rid:
            if rid in seen_ids:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.INCONSISTENCY, f"{base}/id",
                    f"duplicate resource id {rid!r}"))
            seen_ids.add(rid)
            expected = f"urn:uuid:{rid}"
            if entry.full_url != expected:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.URL_MISMATCH, f"/entry/{i}/fullUrl",
                    f"fullUrl {entry.full_url!r} != {expected!r}"))

        profile = resources[rtype]
        for fname in profile.get("required", []):
            if _get_path(entry.resource, fname) in (None, "", [], {}):
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.MISSING_FIELD, f"{base}/{fname}",
                    f"{rtype}.{fname} is required"))

        allowed_status = profile.get("allowed_status")
        if allowed_status and "status" in entry.resource:
            status = entry.resource["status"]
            if status not in allowed_status:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.BAD_STATUS, f"{base}/status",
                    f"{rtype}.status {status!r} not in allowed set"))

        for fname, allowed in profile.get("coded_fields", {}).items():
            value = entry.resource.get(fname)
            if value is not None and value not in allowed:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.BAD_STATUS, f"{base}/{fname}",
                    f"{rtype}.{fname} {value!r} not in allowed set"))

        for fname, allowed in profile.get("codeable_statuses", {}).items():
            value = entry.resource.get(fname)
            if value is None:
                continue
            codes = _codeable_codes(value)
            if not codes or any(c not in allowed for c in codes):
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.BAD_STATUS, f"{base}/{fname}",
                    f"{rtype}.{fname} coding {codes!r} not in allowed set"))

        for fname in profile.get("date_fields", []):
            value = _get_path(entry.resource, fname)
            if value is None:
                continue
            if parse_fhir_date(value) is None:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.BAD_DATE, f"{base}/{fname.replace('.', '/')}",
                    f"{rtype}.{fname} {value!r} is not a YYYY-MM-DD date"))

        issues.extend(_check_codings(entry, base, profiles))

    issues.extend(_check_references(bundle, profiles))
    return issues


def _check_codings(entry: ResourceEntry, base: str, profiles: dict) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []

    def walk(node: Any, path: str):
        if isinstance(node, dict):
            for key, value in node.items():
                child = f"{path}/{key}"
                if key == "coding" and isinstance(value, list):
                    for j, coding in enumerate(value):
                        if not isinstance(coding, dict):
                            continue
                        uri = coding.get("system", "")
                        if uri and not _system_uri_allowed(uri, profiles):
                            issues.append(ValidationIssue(
                                Severity.ERROR, IssueKind.INCONSISTENCY,
                                f"{child}/{j}/system",
                                f"code system URI {uri!r} is not supported"))
                walk(value, child)
        elif isinstance(node, list):
            for j, value in enumerate(node):
                walk(value, f"{path}/{j}")

    walk(entry.resource, base)

    if entry.resource_type == "Condition":
        code = entry.resource.get("code")
        if isinstance(code, dict) and not code.get("coding"):
            issues.append(ValidationIssue(
                Severity.ERROR, IssueKind.MISSING_FIELD, f"{base}/code/coding",
                "Condition.code must carry at least one coding"))
    return issues


def _check_references(bundle: FhirBundle, profiles: dict) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    resolution = resolve_references(bundle)
    for pointer, ref in resolution.unresolved:
        issues.append(ValidationIssue(
            Severity.ERROR, IssueKind.BAD_REFERENCE, pointer,
            f"reference {ref!r} does not resolve inside the bundle"))

    targets = profiles["reference_targets"]
    for i, entry in enumerate(bundle.entries):
        if entry.resource_type not in SUPPORTED_RESOURCES:
            continue
        for fname, expected_type in targets.items():
            value = entry.resource.get(fname)
            if not isinstance(value, dict):
                continue
            ref = value.get("reference")
            if not isinstance(ref, str):
                continue
            target_idx = resolution.resolved.get(ref)
            if target_idx is not None and bundle.entries[target_idx].resource_type != expected_type:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.BAD_REFERENCE,
                    f"/entry/{i}/resource/{fname}/reference",
                    f"{entry.resource_type}.{fname} must reference a {expected_type}"))
    return issues


def _ucum_codes() -> set[str]:
    mapping = assets.load_json("ucum_units.json")
    return set(mapping.values())


def validate_consistency(
    bundle: FhirBundle,
    scenario: Optional[ClinicalScenario] = None,
) -> list[ValidationIssue]:
    """Cross-field clinical checks; expects a structurally clean bundle."""
    issues: list[ValidationIssue] = []
    window = timedelta(days=30)

    encounter_start = encounter_end = None
    encounters = bundle.entries_of_type("Encounter")
    if encounters:
        period = encounters[0][1].resource.get("period", {})
        encounter_start = parse_fhir_date(period.get("start", ""))
        encounter_end = parse_fhir_date(period.get("end", "")) or encounter_start

    birth = None
    if bundle.patient is not None:
        birth = parse_fhir_date(bundle.patient.resource.get("birthDate", ""))

    if birth and encounter_start and birth > encounter_start:
        issues.append(ValidationIssue(
            Severity.ERROR, IssueKind.INCONSISTENCY, "/entry",
            f"birthDate {birth} is after the encounter start {encounter_start}"))

    if scenario is not None and birth and encounter_start and scenario.demographics.age_years is not None:
        derived = encounter_start.year - birth.year - (
            (encounter_start.month, encounter_start.day) < (birth.month, birth.day))
        if abs(derived - scenario.demographics.age_years) > 1:
            issues.append(ValidationIssue(
                Severity.ERROR, IssueKind.INCONSISTENCY, "/entry",
                f"derived age {derived} differs from stated age "
                f"{scenario.demographics.age_years} by more than 1 year"))

    ucum = _ucum_codes()
    for i, entry in enumerate(bundle.entries):
        base = f"/entry/{i}/resource"
        resource = entry.resource
        if entry.resource_type == "Condition":
            onset = parse_fhir_date(resource.get("onsetDateTime", ""))
            recorded = parse_fhir_date(resource.get("recordedDate", ""))
            if onset and recorded and onset > recorded:
                issues.append(ValidationIssue(
                    Severity.ERROR, IssueKind.INCONSISTENCY, f"{base}/onsetDateTime",
                    f"onset {onset} is after recordedDate {recorded}"))
            if recorded and encounter_start and encounter_end:
                if not (encounter_start - window <= recorded <= encounter_end + window):
                    issues.append(ValidationIssue(
                        Severity.ERROR, IssueKind.INCONSISTENCY, f"{base}/recordedDate",
                        f"recordedDate {recorded} is outside the encounter window"))
        if entry.resource_type == "Observation":
            quantity = resource.get("valueQuantity")
            if isinstance(quantity, dict):
                unit = quantity.get("code") or quantity.get("unit")
                if unit and unit not in ucum:
                    issues.append(ValidationIssue(
                        Severity.WARNING, IssueKind.BAD_UNIT, f"{base}/valueQuantity",
                        f"unit {unit!r} is not in the UCUM table"))
    return issues
