"""Typed intermediate representation extracted from free text (stage 1).

A :class:`ClinicalScenario` is the flat, validated structure that terminology
grounding and FHIR synthesis operate on. Scenarios are immutable after
construction and safe to share across threads.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from math import isfinite
from typing import Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import assets
from .errors import ExtractionParseError
from .gateway import Gateway, LlmRequest, Stage

IR_VERSION = 1

#: Fixed conversion reference date so outputs never depend on the wall clock.
DEFAULT_REFERENCE_DATE = date(2026, 4, 30)

DEFAULT_PIPELINE_MODEL = "pipeline-default"


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"
    OTHER = "other"
    UNKNOWN = "unknown"


class CodeSystem(str, Enum):
    SNOMED = "SNOMED"
    LOINC = "LOINC"
    RXNORM = "RXNORM"
    CVX = "CVX"


#: Lexical shape of a plausible code per system.
CODE_PATTERNS = {
    CodeSystem.SNOMED: re.compile(r"\d{6,18}"),
    CodeSystem.LOINC: re.compile(r"\d+-\d"),
    CodeSystem.RXNORM: re.compile(r"\d{1,8}"),
    CodeSystem.CVX: re.compile(r"\d{1,3}"),
}

#: FHIR system URI per code system.
SYSTEM_URIS = {
    CodeSystem.SNOMED: "http://snomed.info/sct",
    CodeSystem.LOINC: "http://loinc.org",
    CodeSystem.RXNORM: "http://www.nlm.nih.gov/research/umls/rxnorm",
    CodeSystem.CVX: "http://hl7.org/fhir/sid/cvx",
}


def code_matches_pattern(system: CodeSystem, code: str) -> bool:
    return bool(CODE_PATTERNS[system].fullmatch(code))


class Category(str, Enum):
    SYMPTOM = "Symptom"
    FINDING = "Finding"
    VITAL = "Vital"
    LAB = "Lab"
    MEDICATION = "Medication"
    PROCEDURE = "Procedure"
    HISTORY = "History"
    CONDITION = "Condition"
    ALLERGY = "Allergy"
    IMMUNIZATION = "Immunization"
    FAMILY_HISTORY = "FamilyHistory"


class AssertionSource(str, Enum):
    PATIENT_STATED = "patient_stated"
    CLINICIAN_CONCLUDED = "clinician_concluded"


class Demographics(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    age_years: Optional[int] = None
    gender: Optional[Gender] = None
    birth_date: Optional[date] = None

    @field_validator("age_years")
    @classmethod
    def _age_range(cls, v):
        if v is not None and not 0 <= v <= 150:
            raise ValueError(f"age_years {v} outside [0, 150]")
        return v


class SourceQuote(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    text: str
    char_start: Optional[int] = None
    char_end: Optional[int] = None


class CodedConcept(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    system: CodeSystem
    code: str
    display: str
    free_text: str = ""

    @model_validator(mode="after")
    def _code_shape(self):
        if not code_matches_pattern(self.system, self.code):
            raise ValueError(f"code {self.code!r} does not match the {self.system.value} pattern")
        return self


class PrimaryDiagnosis(CodedConcept):
    synonyms: list[str] = []


class Measurement(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    value: float
    unit: str
    loinc_code: Optional[str] = None

    @field_validator("unit")
    @classmethod
    def _unit_nonempty(cls, v):
        if not v.strip():
            raise ValueError("unit must be non-empty")
        return v

    @field_validator("value")
    @classmethod
    def _value_finite(cls, v):
        if not isfinite(v):
            raise ValueError("value must be finite")
        return v


class ExtractedItem(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    category: Category
    description: str
    quote: SourceQuote
    proposed_code: Optional[CodedConcept] = None
    value: Optional[Measurement] = None
    event_date: Optional[date] = None
    assertion_source: AssertionSource = AssertionSource.CLINICIAN_CONCLUDED

    @model_validator(mode="after")
    def _measured_categories(self):
        if self.category in (Category.VITAL, Category.LAB) and self.value is None:
            raise ValueError(f"{self.category.value} items must carry a measurement")
        return self


class ClinicalScenario(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    demographics: Demographics
    items: list[ExtractedItem]
    primary_diagnosis: Optional[PrimaryDiagnosis] = None
    source_text: str = ""
    conversion_failed: bool = False

    def to_json(self) -> str:
        payload = {"ir_version": IR_VERSION, **self.model_dump(mode="json")}
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClinicalScenario":
        payload = json.loads(text)
        version = payload.pop("ir_version", IR_VERSION)
        if version != IR_VERSION:
            raise ValueError(f"unsupported ir_version {version}")
        return cls.model_validate(payload)


@dataclass(frozen=True)
class QuoteIssue:
    item_index: int
    quote_text: str


class ExclusionReason(str, Enum):
    IMAGING = "imaging"
    MULTI_PATIENT = "multi_patient"
    NON_HUMAN = "non_human"
    MISSING_DEMOGRAPHICS = "missing_demographics"
    EMPTY_SCENARIO = "empty_scenario"


@dataclass(frozen=True)
class EligibilityDecision:
    eligible: bool
    reason: Optional[ExclusionReason] = None

    @classmethod
    def ok(cls) -> "EligibilityDecision":
        return cls(eligible=True)

    @classmethod
    def excluded(cls, reason: ExclusionReason) -> "EligibilityDecision":
        return cls(eligible=False, reason=reason)


_WS_RUN = re.compile(r"[ \t\r\n]+")


def normalize_whitespace(text: str) -> str:
    """Collapse whitespace runs to single spaces (no case folding)."""
    return _WS_RUN.sub(" ", text)


_FENCE = re.compile(r"^\s*```[a-zA-Z]*\s*\n(.*?)\n\s*```\s*$", re.DOTALL)


def strip_code_fences(text: str) -> str:
    m = _FENCE.match(text)
    return m.group(1) if m else text


class _StageOneResponse(BaseModel):
    """Strict schema for the stage-1 extraction response."""

    model_config = ConfigDict(extra="forbid")

    demographics: Demographics
    items: list[ExtractedItem]
    primary_diagnosis: Optional[PrimaryDiagnosis] = None


def build_extraction_request(source_text: str, model_id: str = DEFAULT_PIPELINE_MODEL) -> LlmRequest:
    template = assets.load_prompt("extraction_v1.txt")
    return LlmRequest(
        stage=Stage.EXTRACTION,
        system_prompt="You convert clinical case narratives into strict JSON. Return JSON only.",
        user_prompt=template.replace("{source_text}", source_text),
        model_id=model_id,
        temperature=0.0,
    )


def extract_scenario(
    source_text: str,
    gateway: Gateway,
    model_id: str = DEFAULT_PIPELINE_MODEL,
) -> ClinicalScenario:
    """Run stage-1 extraction and parse the strict JSON response."""
    if not source_text.strip():
        raise ValueError("source_text must be non-empty")
    response = gateway.complete(build_extraction_request(source_text, model_id))
    try:
        payload = json.loads(strip_code_fences(response.text))
        parsed = _StageOneResponse.model_validate(payload)
    except Exception as exc:
        raise ExtractionParseError(f"stage-1 response rejected: {exc}") from exc
    return ClinicalScenario(
        demographics=parsed.demographics,
        items=parsed.items,
        primary_diagnosis=parsed.primary_diagnosis,
        source_text=source_text,
    )


def verify_quotes(scenario: ClinicalScenario) -> list[QuoteIssue]:
    """One issue per item whose quote is not a substring of the source.

    Matching collapses whitespace runs on both sides but keeps case.
    """
    haystack = normalize_whitespace(scenario.source_text)
    issues = []
    for idx, item in enumerate(scenario.items):
        needle = normalize_whitespace(item.quote.text).strip()
        if needle and needle in haystack:
            continue
        issues.append(QuoteIssue(item_index=idx, quote_text=item.quote.text))
    return issues


def check_completeness(scenario: ClinicalScenario) -> EligibilityDecision:
    demo = scenario.demographics
    if demo.age_years is None and demo.birth_date is None:
        return EligibilityDecision.excluded(ExclusionReason.MISSING_DEMOGRAPHICS)
    if not scenario.items:
        return EligibilityDecision.excluded(ExclusionReason.EMPTY_SCENARIO)
    return EligibilityDecision.ok()


def derived_birth_date(demographics: Demographics, reference_date: date) -> Optional[date]:
    """Explicit birth date, or reference date minus age with mid-month day."""
    if demographics.birth_date is not None:
        return demographics.birth_date
    if demographics.age_years is not None:
        return date(reference_date.year - demographics.age_years, 1, 15)
    return None
