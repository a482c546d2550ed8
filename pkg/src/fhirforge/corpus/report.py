"""Per-split conversion accounting and the failure-mode histogram."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

from ..ir import ExclusionReason
from ..terminology import DecisionKind, FailureMode

if TYPE_CHECKING:
    from .convert import ConversionOutcome

#: Histogram rows: the six code-level failure modes plus the three
#: patient-level exclusion reasons that get itemized.
HISTOGRAM_FAILURE_MODES = [m.value for m in FailureMode]
HISTOGRAM_EXCLUSIONS = [
    ExclusionReason.MISSING_DEMOGRAPHICS.value,
    ExclusionReason.MULTI_PATIENT.value,
    ExclusionReason.NON_HUMAN.value,
]
HISTOGRAM_KEYS = HISTOGRAM_FAILURE_MODES + HISTOGRAM_EXCLUSIONS


@dataclass(frozen=True)
class SplitCounts:
    original_total: int
    imaging_excluded: int
    code_errors: int
    other_excluded: int
    final: int

    def __post_init__(self):
        parts = self.imaging_excluded + self.code_errors + self.other_excluded + self.final
        if self.original_total != parts:
            raise ValueError(
                f"split counts must satisfy total = imaging + code + other + final; "
                f"{self.original_total} != {parts}")

    def to_dict(self) -> dict:
        return {
            "original_total": self.original_total,
            "imaging_excluded": self.imaging_excluded,
            "code_errors": self.code_errors,
            "other_excluded": self.other_excluded,
            "final": self.final,
        }


@dataclass
class ConversionReport:
    splits: dict[str, SplitCounts] = field(default_factory=dict)
    failure_histogram: dict[str, int] = field(default_factory=lambda: {k: 0 for k in HISTOGRAM_KEYS})
    encoder_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "splits": {name: counts.to_dict() for name, counts in sorted(self.splits.items())},
            "failure_histogram": {k: self.failure_histogram.get(k, 0) for k in HISTOGRAM_KEYS},
            "encoder_id": self.encoder_id,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ConversionReport":
        report = cls(encoder_id=raw.get("encoder_id"))
        for name, counts in raw.get("splits", {}).items():
            report.splits[name] = SplitCounts(**counts)
        for key, value in raw.get("failure_histogram", {}).items():
            report.failure_histogram[key] = value
        return report


def _is_code_error(outcome: "ConversionOutcome") -> bool:
    """Cases that failed at grounding, or at synthesis after demotions."""
    from .convert import FailStage

    if outcome.stage == FailStage.GROUNDING:
        return True
    if outcome.stage == FailStage.SYNTHESIS:
        return any(d.kind == DecisionKind.REJECTED for d in outcome.decisions)
    return False


def summarize(
    outcomes: Iterable["ConversionOutcome"],
    encoder_id: Optional[str] = None,
) -> ConversionReport:
    """Fold outcomes into per-split rows plus the failure histogram.

    Terminology failure modes count per rejected code (a case can contribute
    several); itemized exclusions count once per excluded case.
    """
    report = ConversionReport(encoder_id=encoder_id)
    tallies: dict[str, dict[str, int]] = {}
    for outcome in outcomes:
        split = outcome.split.value
        row = tallies.setdefault(split, {
            "original_total": 0, "imaging_excluded": 0, "code_errors": 0,
            "other_excluded": 0, "final": 0})
        row["original_total"] += 1
        if outcome.success:
            row["final"] += 1
        elif outcome.exclusion_reason == ExclusionReason.IMAGING:
            row["imaging_excluded"] += 1
        elif _is_code_error(outcome):
            row["code_errors"] += 1
        else:
            row["other_excluded"] += 1

        for decision in outcome.decisions:
            if decision.kind == DecisionKind.REJECTED and decision.failure_mode is not None:
                report.failure_histogram[decision.failure_mode.value] += 1
        if outcome.exclusion_reason is not None:
            key = outcome.exclusion_reason.value
            if key in report.failure_histogram:
                report.failure_histogram[key] += 1

    for split, row in tallies.items():
        report.splits[split] = SplitCounts(**row)
    return report


def yield_rate(report: ConversionReport) -> float:
    """Percent of pipeline-processed cases (imaging screening excluded up
    front) that converted successfully."""
    processed = sum(c.original_total - c.imaging_excluded for c in report.splits.values())
    final = sum(c.final for c in report.splits.values())
    if processed == 0:
        raise ZeroDivisionError("no cases were processed by the pipeline")
    return 100.0 * final / processed


def render_table(report: ConversionReport) -> str:
    """Fixed-width text rendering of the split rows and the histogram."""
    lines = []
    header = f"{'Split':<8}{'Total':>8}{'Imaging':>9}{'CodeErr':>9}{'Other':>7}{'Final':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    order = {"test": 0, "val": 1, "train": 2}
    for name in sorted(report.splits, key=lambda n: order.get(n, 99)):
        c = report.splits[name]
        lines.append(
            f"{name:<8}{c.original_total:>8}{c.imaging_excluded:>9}"
            f"{c.code_errors:>9}{c.other_excluded:>7}{c.final:>7}")
    try:
        lines.append(f"yield: {yield_rate(report):.2f}%")
    except ZeroDivisionError:
        lines.append("yield: n/a (no processed cases)")
    lines.append("")
    lines.append("failure histogram (terminology/semantic rows are code-level):")
    for key in HISTOGRAM_KEYS:
        lines.append(f"  {key:<24}{report.failure_histogram.get(key, 0):>6}")
    if report.encoder_id:
        lines.append(f"encoder: {report.encoder_id}")
    return "\n".join(lines) + "\n"
