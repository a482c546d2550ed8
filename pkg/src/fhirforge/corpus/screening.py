"""Keyword/regex case screening applied before the pipeline runs."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .. import assets
from ..ir import EligibilityDecision, ExclusionReason


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    split: Split
    prompt_text: str
    final_diagnosis: str

    @classmethod
    def from_dict(cls, raw: dict) -> "CaseRecord":
        return cls(
            case_id=raw["case_id"],
            split=Split(raw["split"].lower()),
            prompt_text=raw["prompt_text"],
            final_diagnosis=raw["final_diagnosis"],
        )

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "split": self.split.value,
            "prompt_text": self.prompt_text,
            "final_diagnosis": self.final_diagnosis,
        }


def load_cases(path: str | Path) -> list[CaseRecord]:
    cases = []
    seen: set[tuple[Split, str]] = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            case = CaseRecord.from_dict(json.loads(line))
            key = (case.split, case.case_id)
            if key in seen:
                raise ValueError(f"duplicate case_id {case.case_id!r} in split {case.split.value}")
            seen.add(key)
            cases.append(case)
    return cases


def _term_pattern(term: str, case_sensitive: bool = False) -> re.Pattern:
    if term.endswith("*"):
        body = re.escape(term[:-1]) + r"\w*"
    else:
        body = r"\s+".join(re.escape(w) for w in term.split())
    return re.compile(r"\b" + body + r"\b", 0 if case_sensitive else re.IGNORECASE)


class ScreeningRules:
    """Compiled keyword lists; the lists themselves are config, not code."""

    def __init__(self, raw: dict):
        imaging = raw.get("imaging", {})
        self.imaging = (
            [_term_pattern(t, case_sensitive=True) for t in imaging.get("case_sensitive", [])]
            + [_term_pattern(t) for t in imaging.get("terms", [])]
        )
        self.multi_patient = [re.compile(p, re.IGNORECASE) for p in raw.get("multi_patient", [])]
        self.species = [_term_pattern(t) for t in raw.get("species", [])]

    @classmethod
    def default(cls) -> "ScreeningRules":
        return cls(assets.load_json("screening_rules.json"))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScreeningRules":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))


def screen_case(case: CaseRecord, rules: ScreeningRules | None = None) -> EligibilityDecision:
    """First matching exclusion wins: imaging, then multi-patient, then species."""
    rules = rules or ScreeningRules.default()
    text = case.prompt_text
    if any(p.search(text) for p in rules.imaging):
        return EligibilityDecision.excluded(ExclusionReason.IMAGING)
    if any(p.search(text) for p in rules.multi_patient):
        return EligibilityDecision.excluded(ExclusionReason.MULTI_PATIENT)
    if any(p.search(text) for p in rules.species):
        return EligibilityDecision.excluded(ExclusionReason.NON_HUMAN)
    return EligibilityDecision.ok()
