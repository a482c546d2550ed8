"""Case screening, corpus conversion, and conversion reporting."""
from .convert import (
    ConversionConfig,
    ConversionOutcome,
    FailStage,
    convert_case,
    convert_corpus,
    read_outcomes,
    write_outcomes,
)
from .report import (
    HISTOGRAM_KEYS,
    ConversionReport,
    SplitCounts,
    render_table,
    summarize,
    yield_rate,
)
from .screening import CaseRecord, ScreeningRules, Split, load_cases, screen_case

__all__ = [
    "ConversionConfig", "ConversionOutcome", "FailStage", "convert_case",
    "convert_corpus", "read_outcomes", "write_outcomes", "HISTOGRAM_KEYS",
    "ConversionReport", "SplitCounts", "render_table", "summarize",
    "yield_rate", "CaseRecord", "ScreeningRules", "Split", "load_cases",
    "screen_case",
]
