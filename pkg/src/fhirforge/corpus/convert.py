"""End-to-end per-case conversion and deterministic parallel corpus runs."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Optional

from ..errors import FhirforgeError, GatewayError
from ..fhir import FhirBundle, ValidationIssue, error_issues
from ..gateway import Gateway
from ..hiding import DiagnosisSpec, HidingMode, apply_hiding
from ..ir import (
    DEFAULT_PIPELINE_MODEL,
    DEFAULT_REFERENCE_DATE,
    ClinicalScenario,
    CodedConcept,
    ExclusionReason,
    check_completeness,
    extract_scenario,
    verify_quotes,
)
from ..synthesis import UcumTable, postprocess, repair_loop, validate_bundle
from ..terminology import Grounder, GroundingDecision
from .report import ConversionReport, summarize
from .screening import CaseRecord, ScreeningRules, Split, screen_case

logger = logging.getLogger(__name__)


class FailStage(str, Enum):
    SCREENING = "screening"
    EXTRACTION = "extraction"
    GROUNDING = "grounding"
    SYNTHESIS = "synthesis"
    HIDING = "hiding"


@dataclass
class ConversionConfig:
    mode: HidingMode = HidingMode.HIDDEN
    reference_date: date = DEFAULT_REFERENCE_DATE
    max_repair: int = 3
    workers: int = 1
    model_id: str = DEFAULT_PIPELINE_MODEL
    screening_rules: Optional[ScreeningRules] = None
    ucum_table: Optional[UcumTable] = None


@dataclass
class ConversionOutcome:
    case_id: str
    split: Split
    success: bool
    bundle: Optional[FhirBundle] = None
    attempts_used: int = 0
    decisions: list[GroundingDecision] = field(default_factory=list)
    stage: Optional[FailStage] = None
    exclusion_reason: Optional[ExclusionReason] = None
    issues: list[ValidationIssue] = field(default_factory=list)
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "split": self.split.value,
            "success": self.success,
            "attempts_used": self.attempts_used,
            "decisions": [d.to_dict() for d in self.decisions],
            "stage": self.stage.value if self.stage else None,
            "exclusion_reason": self.exclusion_reason.value if self.exclusion_reason else None,
            "issues": [i.to_dict() for i in self.issues],
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ConversionOutcome":
        """Rebuild the reporting-relevant fields (bundles are not restored)."""
        return cls(
            case_id=raw["case_id"],
            split=Split(raw["split"]),
            success=raw["success"],
            attempts_used=raw.get("attempts_used", 0),
            decisions=[GroundingDecision.from_dict(d) for d in raw.get("decisions", [])],
            stage=FailStage(raw["stage"]) if raw.get("stage") else None,
            exclusion_reason=(ExclusionReason(raw["exclusion_reason"])
                              if raw.get("exclusion_reason") else None),
            detail=raw.get("detail", ""),
        )


def _diagnosis_spec(scenario: ClinicalScenario, case: CaseRecord) -> DiagnosisSpec:
    """Suppression target: grounded primary diagnosis plus the gold string."""
    primary = scenario.primary_diagnosis
    if primary is None:
        return DiagnosisSpec(name=case.final_diagnosis, synonyms=[], codes=[])
    synonyms = list(primary.synonyms)
    for candidate in (case.final_diagnosis, primary.free_text):
        lowered = candidate.lower().strip()
        if lowered and lowered != primary.display.lower() and lowered not in synonyms:
            synonyms.append(lowered)
    code = CodedConcept(system=primary.system, code=primary.code,
                        display=primary.display, free_text=primary.free_text)
    return DiagnosisSpec(name=primary.display, synonyms=synonyms, codes=[code])


def convert_case(
    case: CaseRecord,
    config: ConversionConfig,
    gateway: Gateway,
    grounder: Grounder,
) -> ConversionOutcome:
    """screen -> extract -> verify quotes -> completeness -> ground ->
    repair loop -> post-process -> hide; the first failing stage is recorded."""
    base = dict(case_id=case.case_id, split=case.split)

    decision = screen_case(case, config.screening_rules)
    if not decision.eligible:
        return ConversionOutcome(**base, success=False, stage=FailStage.SCREENING,
                                 exclusion_reason=decision.reason)

    try:
        scenario = extract_scenario(case.prompt_text, gateway, config.model_id)
    except (FhirforgeError, GatewayError) as exc:
        return ConversionOutcome(**base, success=False, stage=FailStage.EXTRACTION,
                                 detail=str(exc))

    quote_issues = verify_quotes(scenario)
    if quote_issues:
        return ConversionOutcome(
            **base, success=False, stage=FailStage.EXTRACTION,
            detail=f"{len(quote_issues)} quote(s) not found in source")

    completeness = check_completeness(scenario)
    if not completeness.eligible:
        return ConversionOutcome(**base, success=False, stage=FailStage.SCREENING,
                                 exclusion_reason=completeness.reason)

    grounded, decisions = grounder.ground_scenario(scenario)
    if grounded.conversion_failed:
        modes = [d.failure_mode for d in decisions if d.failure_mode is not None and d.is_primary]
        return ConversionOutcome(
            **base, success=False, stage=FailStage.GROUNDING, decisions=decisions,
            detail=f"primary diagnosis rejected ({', '.join(m.value for m in modes)})")

    repair = repair_loop(grounded, gateway, max_attempts=config.max_repair,
                         reference_date=config.reference_date, model_id=config.model_id)
    if not repair.succeeded:
        return ConversionOutcome(**base, success=False, stage=FailStage.SYNTHESIS,
                                 decisions=decisions, issues=repair.issues,
                                 attempts_used=repair.attempts_used,
                                 detail="validation exhausted")

    bundle, _notes = postprocess(repair.bundle, grounded, config.ucum_table,
                                 config.reference_date)
    residual = error_issues(validate_bundle(bundle, grounded))
    if residual:
        return ConversionOutcome(**base, success=False, stage=FailStage.SYNTHESIS,
                                 decisions=decisions, issues=residual,
                                 attempts_used=repair.attempts_used,
                                 detail="post-processing left validation errors")

    spec = _diagnosis_spec(grounded, case)
    try:
        hidden, report = apply_hiding(bundle, spec, config.mode, gateway, config.model_id)
    except (FhirforgeError, GatewayError, ValueError) as exc:
        return ConversionOutcome(**base, success=False, stage=FailStage.HIDING,
                                 decisions=decisions, attempts_used=repair.attempts_used,
                                 detail=str(exc))
    hidden_errors = error_issues(validate_bundle(hidden))
    if hidden_errors:
        return ConversionOutcome(**base, success=False, stage=FailStage.HIDING,
                                 decisions=decisions, issues=hidden_errors,
                                 attempts_used=repair.attempts_used,
                                 detail="hiding broke structural validity")

    return ConversionOutcome(**base, success=True, bundle=hidden,
                             attempts_used=repair.attempts_used, decisions=decisions)


def convert_corpus(
    cases: list[CaseRecord],
    config: ConversionConfig,
    gateway: Gateway,
    grounder: Grounder,
) -> tuple[list[ConversionOutcome], ConversionReport]:
    """Convert cases independently; outcomes keep input order regardless of
    scheduling, so reports are identical for any worker count."""
    if config.workers <= 1:
        outcomes = [convert_case(case, config, gateway, grounder) for case in cases]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(
                lambda case: convert_case(case, config, gateway, grounder), cases))
    report = summarize(outcomes, encoder_id=grounder.encoder_id)
    return outcomes, report


def write_outcomes(outcomes: list[ConversionOutcome], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for outcome in outcomes:
            f.write(json.dumps(outcome.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_outcomes(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
