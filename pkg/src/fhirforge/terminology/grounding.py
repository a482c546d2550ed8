"""Accept/replace/reject grounding of proposed codes against the store."""
from __future__ import annotations

import re
from dataclasses import dataclass, replace as dc_replace
from enum import Enum
from typing import Optional

from .. import assets
from ..errors import EmbedderUnavailableError
from ..ir import Category, ClinicalScenario, CodedConcept, CodeSystem, PrimaryDiagnosis
from .store import TerminologyEntry, TerminologyStore, keyword_search, lookup
from .vectors import (
    FALLBACK_ENCODER_PREFIX,
    FallbackEmbedder,
    VectorIndex,
    cosine,
    semantic_search,
)


@dataclass(frozen=True)
class GroundingThresholds:
    t_accept: float = 0.90
    t_replace: float = 0.75
    t_reject: float = 0.60

    def __post_init__(self):
        if not 0.0 <= self.t_reject <= self.t_replace <= self.t_accept <= 1.0:
            raise ValueError(
                f"thresholds must satisfy 0 <= reject <= replace <= accept <= 1, "
                f"got ({self.t_accept}, {self.t_replace}, {self.t_reject})"
            )

    @classmethod
    def from_string(cls, text: str) -> "GroundingThresholds":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError("expected three comma-separated thresholds: accept,replace,reject")
        return cls(t_accept=parts[0], t_replace=parts[1], t_reject=parts[2])


class FailureMode(str, Enum):
    HALLUCINATED_CODE = "hallucinated_code"
    NON_SPECIFIC_CLASS = "non_specific_class"
    SYNONYM_GAP = "synonym_gap"
    OVERLY_SPECIFIC = "overly_specific"
    WRONG_CATEGORY = "wrong_category"
    AMBIGUOUS = "ambiguous"


class DecisionKind(str, Enum):
    ACCEPTED = "accepted"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass(frozen=True)
class GroundingDecision:
    kind: DecisionKind
    original: CodedConcept
    entry: Optional[TerminologyEntry] = None
    similarity: Optional[float] = None
    failure_mode: Optional[FailureMode] = None
    best_similarity: Optional[float] = None
    is_primary: bool = False

    @classmethod
    def accepted(cls, original: CodedConcept, entry: TerminologyEntry,
                 similarity: float | None = None) -> "GroundingDecision":
        return cls(kind=DecisionKind.ACCEPTED, original=original, entry=entry,
                   similarity=similarity)

    @classmethod
    def replaced(cls, original: CodedConcept, replacement: TerminologyEntry,
                 similarity: float) -> "GroundingDecision":
        return cls(kind=DecisionKind.REPLACED, original=original, entry=replacement,
                   similarity=similarity)

    @classmethod
    def rejected(cls, original: CodedConcept, reason: FailureMode,
                 best_similarity: float | None = None) -> "GroundingDecision":
        return cls(kind=DecisionKind.REJECTED, original=original,
                   failure_mode=reason, best_similarity=best_similarity)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "original": self.original.model_dump(mode="json"),
            "is_primary": self.is_primary,
        }
        if self.entry is not None:
            out["entry"] = {
                "system": self.entry.system.value,
                "code": self.entry.code,
                "display": self.entry.display,
            }
        if self.similarity is not None:
            out["similarity"] = self.similarity
        if self.failure_mode is not None:
            out["failure_mode"] = self.failure_mode.value
        if self.best_similarity is not None:
            out["best_similarity"] = self.best_similarity
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "GroundingDecision":
        entry = None
        if raw.get("entry"):
            entry = TerminologyEntry(
                system=CodeSystem(raw["entry"]["system"]),
                code=raw["entry"]["code"],
                display=raw["entry"]["display"],
            )
        return cls(
            kind=DecisionKind(raw["kind"]),
            original=CodedConcept.model_validate(raw["original"]),
            entry=entry,
            similarity=raw.get("similarity"),
            failure_mode=FailureMode(raw["failure_mode"]) if raw.get("failure_mode") else None,
            best_similarity=raw.get("best_similarity"),
            is_primary=raw.get("is_primary", False),
        )


def _norm_term(text: str) -> str:
    return " ".join(text.lower().split())


def _terms_match(text: str, entry: TerminologyEntry) -> bool:
    wanted = _norm_term(text)
    return any(_norm_term(term) == wanted for term in entry.all_terms())


_drug_class_patterns: list[re.Pattern] | None = None


def _drug_class_trigger(text: str) -> bool:
    global _drug_class_patterns
    if _drug_class_patterns is None:
        terms = assets.load_json("drug_classes.json")
        _drug_class_patterns = [
            re.compile(r"\b" + r"\s+".join(map(re.escape, term.split())) + r"\b")
            for term in terms
        ]
    lowered = text.lower()
    return any(p.search(lowered) for p in _drug_class_patterns)


#: Entry category tags compatible with each extraction category. A rejection
#: with WRONG_CATEGORY fires only when both sides are tagged and disjoint.
COMPATIBLE_CATEGORIES: dict[Category, frozenset[str]] = {
    Category.SYMPTOM: frozenset({"finding", "condition", "disorder", "symptom"}),
    Category.FINDING: frozenset({"finding", "condition", "disorder", "symptom"}),
    Category.CONDITION: frozenset({"finding", "condition", "disorder"}),
    Category.HISTORY: frozenset({"finding", "condition", "disorder", "procedure"}),
    Category.FAMILY_HISTORY: frozenset({"finding", "condition", "disorder"}),
    Category.VITAL: frozenset({"observation", "lab"}),
    Category.LAB: frozenset({"observation", "lab"}),
    Category.MEDICATION: frozenset({"medication", "drug"}),
    Category.PROCEDURE: frozenset({"procedure"}),
    Category.ALLERGY: frozenset({"substance", "medication", "drug", "finding", "condition", "disorder"}),
    Category.IMMUNIZATION: frozenset({"vaccine"}),
}


def _category_conflict(entry: TerminologyEntry, item_category: Optional[Category]) -> bool:
    if item_category is None or entry.category is None:
        return False
    return entry.category.lower() not in COMPATIBLE_CATEGORIES[item_category]


def decision_region(best_cosine: Optional[float], thresholds: GroundingThresholds) -> str:
    """Region of the candidate-similarity scale a decision falls in.

    Monotone in best_cosine: reject_floor < ambiguous < replace.
    """
    if best_cosine is None or best_cosine < thresholds.t_reject:
        return "reject_floor"
    if best_cosine < thresholds.t_replace:
        return "ambiguous"
    return "replace"


class Grounder:
    """Bundles the store, vector index, thresholds, and query embedder.

    Pure w.r.t. its inputs: repeated calls with the same concept agree.
    """

    def __init__(
        self,
        store: TerminologyStore,
        index: VectorIndex | None = None,
        thresholds: GroundingThresholds | None = None,
        embedder: FallbackEmbedder | None = None,
        candidate_k: int = 16,
    ):
        self.store = store
        self.index = index if index is not None else VectorIndex.from_store(store)
        self.thresholds = thresholds or GroundingThresholds()
        if embedder is not None:
            self.embedder = embedder
        elif self.index.encoder_id.startswith(FALLBACK_ENCODER_PREFIX):
            self.embedder = FallbackEmbedder(self.index.dim)
        else:
            self.embedder = None
        self.candidate_k = candidate_k

    @property
    def encoder_id(self) -> str:
        return self.index.encoder_id

    def _embed(self, text: str):
        if self.embedder is None:
            raise EmbedderUnavailableError(
                f"index encoder {self.index.encoder_id!r} has no query embedder "
                "and no fallback encoder is configured"
            )
        return self.embedder.embed(text)

    def ground_code(
        self,
        concept: CodedConcept,
        item_category: Optional[Category] = None,
    ) -> GroundingDecision:
        """Decision procedure: exact match, high-similarity accept, candidate
        replacement, then threshold-banded rejection with a failure mode."""
        entry = lookup(self.store, concept.system, concept.code)
        text = (concept.display or concept.free_text).strip()

        # (1) exact display/synonym match on the looked-up entry
        if entry is not None and text and _terms_match(text, entry):
            if _category_conflict(entry, item_category):
                return GroundingDecision.rejected(concept, FailureMode.WRONG_CATEGORY)
            return GroundingDecision.accepted(concept, entry)

        query_vec = self._embed(text) if text else None

        # (2) looked-up entry is semantically close enough to the description
        if entry is not None and query_vec is not None:
            own_vec = self.index.get(concept.system, concept.code)
            if own_vec is not None:
                own_cos = cosine(query_vec, own_vec)
                if own_cos >= self.thresholds.t_accept:
                    if _category_conflict(entry, item_category):
                        return GroundingDecision.rejected(
                            concept, FailureMode.WRONG_CATEGORY, best_similarity=own_cos)
                    return GroundingDecision.accepted(concept, entry, similarity=own_cos)

        # (3) best candidate over the union of keyword and semantic search
        best_entry: Optional[TerminologyEntry] = None
        best_cos: Optional[float] = None
        if text and query_vec is not None:
            candidates: dict[str, TerminologyEntry] = {}
            for cand, _score in keyword_search(self.store, concept.system, text, k=self.candidate_k):
                candidates[cand.code] = cand
            for _system, code, _cos in semantic_search(
                    self.index, concept.system, query_vec, k=self.candidate_k):
                cand = self.store.get(concept.system, code)
                if cand is not None:
                    candidates[cand.code] = cand
            for cand in candidates.values():
                vec = self.index.get(concept.system, cand.code)
                if vec is None:
                    continue
                cos = cosine(query_vec, vec)
                if best_cos is None or cos > best_cos or (cos == best_cos and cand.code < best_entry.code):
                    best_cos, best_entry = cos, cand

        region = decision_region(best_cos, self.thresholds)
        if region == "replace":
            if _category_conflict(best_entry, item_category):
                return GroundingDecision.rejected(
                    concept, FailureMode.WRONG_CATEGORY, best_similarity=best_cos)
            return GroundingDecision.replaced(concept, best_entry, similarity=best_cos)
        if region == "ambiguous":
            return GroundingDecision.rejected(concept, FailureMode.AMBIGUOUS, best_similarity=best_cos)

        # (5) below the floor (or no candidates at all)
        if entry is None:
            return GroundingDecision.rejected(
                concept, FailureMode.HALLUCINATED_CODE, best_similarity=best_cos)
        reason = self._classify_mismatch(concept, text)
        return GroundingDecision.rejected(concept, reason, best_similarity=best_cos)

    def _classify_mismatch(self, concept: CodedConcept, text: str) -> FailureMode:
        """Failure mode for a real code whose description does not fit it."""
        probe = text or concept.free_text or concept.display
        if _drug_class_trigger(probe):
            return FailureMode.NON_SPECIFIC_CLASS
        if concept.system == CodeSystem.CVX:
            return FailureMode.SYNONYM_GAP
        return FailureMode.OVERLY_SPECIFIC

    def ground_scenario(
        self, scenario: ClinicalScenario
    ) -> tuple[ClinicalScenario, list[GroundingDecision]]:
        """Ground every proposed code; rejected items are demoted to free text.

        The scenario is marked conversion_failed when the primary diagnosis
        itself is rejected.
        """
        decisions: list[GroundingDecision] = []
        new_items = []
        for item in scenario.items:
            if item.proposed_code is None:
                new_items.append(item)
                continue
            decision = self.ground_code(item.proposed_code, item_category=item.category)
            decisions.append(decision)
            if decision.kind == DecisionKind.REJECTED:
                new_items.append(item.model_copy(update={"proposed_code": None}))
            else:
                grounded = CodedConcept(
                    system=decision.entry.system,
                    code=decision.entry.code,
                    display=decision.entry.display,
                    free_text=item.proposed_code.free_text or item.proposed_code.display,
                )
                new_items.append(item.model_copy(update={"proposed_code": grounded}))

        conversion_failed = False
        new_primary = scenario.primary_diagnosis
        if scenario.primary_diagnosis is not None:
            primary_concept = CodedConcept(
                system=scenario.primary_diagnosis.system,
                code=scenario.primary_diagnosis.code,
                display=scenario.primary_diagnosis.display,
                free_text=scenario.primary_diagnosis.free_text,
            )
            decision = self.ground_code(primary_concept)
            decision = dc_replace(decision, is_primary=True)
            decisions.append(decision)
            if decision.kind == DecisionKind.REJECTED:
                conversion_failed = True
            else:
                new_primary = PrimaryDiagnosis(
                    system=decision.entry.system,
                    code=decision.entry.code,
                    display=decision.entry.display,
                    free_text=scenario.primary_diagnosis.free_text,
                    synonyms=scenario.primary_diagnosis.synonyms,
                )

        grounded_scenario = scenario.model_copy(update={
            "items": new_items,
            "primary_diagnosis": new_primary,
            "conversion_failed": conversion_failed,
        })
        return grounded_scenario, decisions


def ground_code(concept, store, index=None, thresholds=None, item_category=None):
    return Grounder(store, index, thresholds).ground_code(concept, item_category)


def ground_scenario(scenario, store, index=None, thresholds=None):
    return Grounder(store, index, thresholds).ground_scenario(scenario)
