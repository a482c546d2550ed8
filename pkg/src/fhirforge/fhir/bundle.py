"""FHIR R4 collection bundles over the supported 10-resource subset.

Resources are kept as parsed JSON objects so unknown fields survive a
parse/serialize round trip; typed access goes through small helpers.
Serialization is canonical: sorted keys, 2-space indent, LF newlines.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from ..errors import BundleSyntaxError, NotABundleError

SUPPORTED_RESOURCES = frozenset({
    "Patient", "Encounter", "Condition", "Observation", "MedicationRequest",
    "Procedure", "DiagnosticReport", "FamilyMemberHistory",
    "AllergyIntolerance", "Immunization",
})


@dataclass
class ResourceEntry:
    full_url: Optional[str]
    resource: dict

    @property
    def resource_type(self) -> str:
        return self.resource.get("resourceType", "")

    @property
    def resource_id(self) -> Optional[str]:
        return self.resource.get("id")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        if self.full_url is not None:
            out["fullUrl"] = self.full_url
        out["resource"] = self.resource
        return out


@dataclass
class FhirBundle:
    type: str = "collection"
    entries: list[ResourceEntry] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    parse_issues: list = field(default_factory=list)

    def entries_of_type(self, resource_type: str) -> list[tuple[int, ResourceEntry]]:
        return [(i, e) for i, e in enumerate(self.entries) if e.resource_type == resource_type]

    @property
    def patient(self) -> Optional[ResourceEntry]:
        found = self.entries_of_type("Patient")
        return found[0][1] if found else None

    def resource_ids(self) -> list[str]:
        return [e.resource_id for e in self.entries if e.resource_id]

    def to_dict(self) -> dict:
        out = dict(self.extra)
        out["resourceType"] = "Bundle"
        out["type"] = self.type
        out["entry"] = [e.to_dict() for e in self.entries]
        return out

    def copy(self) -> "FhirBundle":
        clone = json.loads(serialize_bundle(self))
        return parse_bundle(json.dumps(clone))


def parse_bundle(json_text: str) -> FhirBundle:
    """Strict parse of the supported subset; unknown resource types become
    warnings on the result instead of silent drops."""
    from .validate import IssueKind, Severity, ValidationIssue  # cycle-free at call time

    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise BundleSyntaxError(f"bundle is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("resourceType") != "Bundle":
        raise NotABundleError("JSON is not a FHIR Bundle resource")

    bundle_type = obj.get("type", "")
    entries = []
    issues = []
    for i, raw_entry in enumerate(obj.get("entry", []) or []):
        resource = raw_entry.get("resource") or {}
        entry = ResourceEntry(full_url=raw_entry.get("fullUrl"), resource=resource)
        entries.append(entry)
        rtype = entry.resource_type
        if rtype not in SUPPORTED_RESOURCES:
            issues.append(ValidationIssue(
                severity=Severity.WARNING,
                kind=IssueKind.UNKNOWN_RESOURCE,
                path=f"/entry/{i}/resource/resourceType",
                message=f"resource type {rtype or '(missing)'!r} is outside the supported set",
            ))
    extra = {k: v for k, v in obj.items() if k not in ("resourceType", "type", "entry")}
    return FhirBundle(type=bundle_type, entries=entries, extra=extra, parse_issues=issues)


def serialize_bundle(bundle: FhirBundle) -> str:
    """Canonical JSON: byte-identical output for structurally equal bundles."""
    return json.dumps(bundle.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def iter_references(node: Any, path: str = "") -> Iterator[tuple[str, str]]:
    """Yield (json_pointer, reference_string) for every reference in a tree."""
    if isinstance(node, dict):
        for key, value in node.items():
            child = f"{path}/{key}"
            if key == "reference" and isinstance(value, str):
                yield child, value
            else:
                yield from iter_references(value, child)
    elif isinstance(node, list):
        for i, value in enumerate(node):
            yield from iter_references(value, f"{path}/{i}")


@dataclass
class ReferenceResolution:
    resolved: dict[str, int]
    unresolved: list[tuple[str, str]]


def _reference_target(ref: str) -> tuple[Optional[str], str]:
    """Split a reference into (expected type, id)."""
    if ref.startswith("urn:uuid:"):
        return None, ref[len("urn:uuid:"):]
    if "/" in ref:
        rtype, rid = ref.split("/", 1)
        return rtype, rid
    return None, ref


def resolve_references(bundle: FhirBundle) -> ReferenceResolution:
    """Map every intra-bundle reference string to its entry index."""
    by_id: dict[str, int] = {}
    for i, entry in enumerate(bundle.entries):
        rid = entry.resource_id
        if rid and rid not in by_id:
            by_id[rid] = i

    resolved: dict[str, int] = {}
    unresolved: list[tuple[str, str]] = []
    for i, entry in enumerate(bundle.entries):
        for pointer, ref in iter_references(entry.resource, f"/entry/{i}/resource"):
            rtype, rid = _reference_target(ref)
            target = by_id.get(rid)
            if target is not None and (rtype is None or bundle.entries[target].resource_type == rtype):
                resolved[ref] = target
            else:
                unresolved.append((pointer, ref))
    return ReferenceResolution(resolved=resolved, unresolved=unresolved)
