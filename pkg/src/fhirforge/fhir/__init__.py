"""FHIR R4 subset: bundle model, canonical JSON, validation."""
from .bundle import (
    SUPPORTED_RESOURCES,
    FhirBundle,
    ReferenceResolution,
    ResourceEntry,
    iter_references,
    parse_bundle,
    resolve_references,
    serialize_bundle,
)
from .validate import (
    IssueKind,
    Severity,
    ValidationIssue,
    error_issues,
    parse_fhir_date,
    validate_consistency,
    validate_structure,
)

__all__ = [
    "SUPPORTED_RESOURCES", "FhirBundle", "ReferenceResolution", "ResourceEntry",
    "iter_references", "parse_bundle", "resolve_references", "serialize_bundle",
    "IssueKind", "Severity", "ValidationIssue", "error_issues",
    "parse_fhir_date", "validate_consistency", "validate_structure",
]
