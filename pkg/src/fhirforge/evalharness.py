"""Diagnostic-reasoning evaluation over plain-text and FHIR inputs:
prompt construction, prediction parsing, LLM-judge scoring, and
accuracy/delta reporting."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Optional

from . import assets
from .errors import EmptyInputError, InsufficientPoolError, PredictionParseError
from .gateway import Gateway, LlmRequest, ReasoningEffort, Stage
from .ir import strip_code_fences

DEFAULT_EVAL_MODEL = "eval-default"
DEFAULT_JUDGE_MODEL = "judge-default"

EVAL_MAX_TOKENS = 800
EVAL_TEMPERATURE = 1.0

ALLOWED_SHOTS = (0, 1, 5)


class InputFormat(str, Enum):
    PLAIN_TEXT = "text"
    FHIR_BUNDLE = "fhir"


@dataclass(frozen=True)
class EvalConfig:
    shots: int = 0
    seed: int = 0
    model_id: str = DEFAULT_EVAL_MODEL
    judge_model_id: str = DEFAULT_JUDGE_MODEL
    input_format: InputFormat = InputFormat.PLAIN_TEXT
    temperature: float = EVAL_TEMPERATURE
    max_tokens: int = EVAL_MAX_TOKENS
    reasoning_effort: ReasoningEffort = ReasoningEffort.MEDIUM

    def __post_init__(self):
        if self.shots not in ALLOWED_SHOTS:
            raise ValueError(f"shots must be one of {ALLOWED_SHOTS}")


@dataclass(frozen=True)
class Exemplar:
    """A solved training case: input text (or bundle JSON) plus gold diagnosis."""
    case_input: str
    diagnosis: str


@dataclass
class Prediction:
    diagnosis: str
    reasoning: str
    raw: str
    parse_ok: bool = True


@dataclass
class Judgment:
    equivalent: bool
    raw: str


@dataclass(frozen=True)
class AccuracyRow:
    model_id: str
    shots: int
    acc_text: float
    acc_fhir: float
    delta: float

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "shots": self.shots,
                "acc_text": self.acc_text, "acc_fhir": self.acc_fhir,
                "delta": self.delta}


def _round2(value: Decimal) -> float:
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def render_exemplars(exemplars: list[Exemplar]) -> str:
    blocks = []
    for ex in exemplars:
        gold = json.dumps({"diagnosis": ex.diagnosis}, ensure_ascii=False)
        blocks.append(f"Example case:\n{ex.case_input}\nAnswer:\n{gold}\n\n")
    return "".join(blocks)


def sample_exemplars(pool: list[Exemplar], shots: int, seed: int) -> list[Exemplar]:
    """Seeded uniform sample without replacement; deterministic across runs."""
    if shots > len(pool):
        raise InsufficientPoolError(f"asked for {shots} exemplars, pool has {len(pool)}")
    if shots == 0:
        return []
    return random.Random(seed).sample(pool, shots)


def build_diagnosis_prompt(
    target: str,
    input_format: InputFormat,
    shots: int = 0,
    train_pool: Optional[list[Exemplar]] = None,
    seed: int = 0,
) -> tuple[str, str]:
    """(system, user) prompts; the FHIR variant embeds the target bundle's
    canonical serialization at the bundle slot."""
    system = assets.load_prompt("diagnosis_system_v1.txt").strip()
    exemplars = sample_exemplars(train_pool or [], shots, seed)
    rendered = render_exemplars(exemplars)
    if input_format == InputFormat.FHIR_BUNDLE:
        template = assets.load_prompt("diagnosis_user_fhir_v1.txt")
        slot = "{fhir_bundle}"
    else:
        template = assets.load_prompt("diagnosis_user_text_v1.txt")
        slot = "{case_input}"
    # Unescape the doubled braces around the schema block before inserting
    # content, which may itself contain adjacent braces.
    template = template.replace("{{", "{").replace("}}", "}")
    user = template.replace("{exemplars}", rendered).replace(slot, target)
    return system, user


def build_diagnosis_request(
    target: str,
    config: EvalConfig,
    train_pool: Optional[list[Exemplar]] = None,
) -> LlmRequest:
    system, user = build_diagnosis_prompt(
        target, config.input_format, config.shots, train_pool, config.seed)
    return LlmRequest(
        stage=Stage.DIAGNOSIS,
        system_prompt=system,
        user_prompt=user,
        model_id=config.model_id,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        reasoning_effort=config.reasoning_effort,
    )


def parse_prediction(text: str) -> Prediction:
    """Strict JSON object with exactly the diagnosis/reasoning keys;
    surrounding code fences are tolerated and stripped."""
    stripped = strip_code_fences(text).strip()
    try:
        payload = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise PredictionParseError(f"no JSON object: {exc}") from exc
    if not isinstance(payload, dict) or set(payload.keys()) != {"diagnosis", "reasoning"}:
        raise PredictionParseError(
            f"expected exactly the keys diagnosis/reasoning, got {sorted(payload) if isinstance(payload, dict) else type(payload).__name__}")
    if not isinstance(payload["diagnosis"], str) or not isinstance(payload["reasoning"], str):
        raise PredictionParseError("diagnosis and reasoning must be strings")
    return Prediction(diagnosis=payload["diagnosis"], reasoning=payload["reasoning"], raw=text)


def build_judge_request(
    ground_truth: str,
    prediction: str,
    model_id: str = DEFAULT_JUDGE_MODEL,
) -> LlmRequest:
    system = assets.load_prompt("judge_system_v1.txt").strip()
    user = (assets.load_prompt("judge_user_v1.txt")
            .replace("{ground_truth}", ground_truth)
            .replace("{prediction}", prediction))
    return LlmRequest(
        stage=Stage.JUDGE,
        system_prompt=system,
        user_prompt=user,
        model_id=model_id,
        temperature=EVAL_TEMPERATURE,
        max_tokens=EVAL_MAX_TOKENS,
        reasoning_effort=ReasoningEffort.MEDIUM,
    )


def judge(
    ground_truth: str,
    prediction: str,
    gateway: Gateway,
    model_id: str = DEFAULT_JUDGE_MODEL,
) -> Judgment:
    """Binary clinical-equivalence decision; unparseable output scores false."""
    if not ground_truth.strip() or not prediction.strip():
        raise ValueError("ground_truth and prediction must be non-empty")
    response = gateway.complete(build_judge_request(ground_truth, prediction, model_id))
    try:
        payload = json.loads(strip_code_fences(response.text).strip())
        equivalent = bool(payload["equivalent"]) if isinstance(payload, dict) else False
    except (json.JSONDecodeError, KeyError):
        equivalent = False
    return Judgment(equivalent=equivalent, raw=response.text)


def aggregate(judgments: list[Judgment | bool]) -> float:
    """Accuracy percent, rounded half-up to 2 decimals."""
    if not judgments:
        raise EmptyInputError("cannot aggregate zero judgments")
    hits = sum(
        1 for j in judgments
        if (j.equivalent if isinstance(j, Judgment) else bool(j))
    )
    return _round2(Decimal(100) * Decimal(hits) / Decimal(len(judgments)))


def delta_table(rows: list[tuple[str, int, float, float]]) -> list[AccuracyRow]:
    """delta = acc_fhir - acc_text, to 2 decimals per row."""
    out = []
    for model_id, shots, acc_text, acc_fhir in rows:
        delta = _round2(Decimal(str(acc_fhir)) - Decimal(str(acc_text)))
        out.append(AccuracyRow(model_id=model_id, shots=shots,
                               acc_text=acc_text, acc_fhir=acc_fhir, delta=delta))
    return out


@dataclass
class EvalResult:
    case_id: str
    prediction: Prediction
    judgment: Judgment

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "prediction": {
                "diagnosis": self.prediction.diagnosis,
                "reasoning": self.prediction.reasoning,
                "parse_ok": self.prediction.parse_ok,
            },
            "judgment": {"equivalent": self.judgment.equivalent},
        }


def evaluate_cases(
    targets: list[tuple[str, str, str]],
    config: EvalConfig,
    gateway: Gateway,
    judge_gateway: Optional[Gateway] = None,
    train_pool: Optional[list[Exemplar]] = None,
) -> tuple[list[EvalResult], float]:
    """Evaluate (case_id, target_input, gold_diagnosis) triples.

    Every case yields exactly one judgment: prediction parse failures score
    as not-equivalent rather than being dropped, so the accuracy denominator
    is always the case count.
    """
    judge_gateway = judge_gateway or gateway
    results = []
    for case_id, target, gold in targets:
        response = gateway.complete(build_diagnosis_request(target, config, train_pool))
        try:
            prediction = parse_prediction(response.text)
        except PredictionParseError:
            prediction = Prediction(diagnosis="", reasoning="", raw=response.text, parse_ok=False)
        if prediction.parse_ok and prediction.diagnosis.strip():
            verdict = judge(gold, prediction.diagnosis, judge_gateway, config.judge_model_id)
        else:
            verdict = Judgment(equivalent=False, raw="")
        results.append(EvalResult(case_id=case_id, prediction=prediction, judgment=verdict))
    accuracy = aggregate([r.judgment for r in results])
    return results, accuracy
