"""Terminology store, vector index, and code grounding."""
from .grounding import (
    DecisionKind,
    FailureMode,
    Grounder,
    GroundingDecision,
    GroundingThresholds,
    decision_region,
    ground_code,
    ground_scenario,
)
from .store import (
    TerminologyEntry,
    TerminologyStore,
    keyword_search,
    load_store,
    lookup,
    tokenize,
)
from .vectors import (
    DEFAULT_DIM,
    FALLBACK_ENCODER_PREFIX,
    FallbackEmbedder,
    VectorIndex,
    cosine,
    fallback_embed,
    load_vectors,
    semantic_search,
)

__all__ = [
    "DecisionKind", "FailureMode", "Grounder", "GroundingDecision",
    "GroundingThresholds", "decision_region", "ground_code", "ground_scenario",
    "TerminologyEntry", "TerminologyStore", "keyword_search", "load_store",
    "lookup", "tokenize", "DEFAULT_DIM", "FALLBACK_ENCODER_PREFIX",
    "FallbackEmbedder", "VectorIndex", "cosine", "fallback_embed",
    "load_vectors", "semantic_search",
]
