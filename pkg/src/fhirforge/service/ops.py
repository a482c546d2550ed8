"""Service operations: the logic behind every route, also callable in-process
by the CLI."""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional

from ..corpus import (
    CaseRecord,
    ConversionConfig,
    ConversionOutcome,
    ConversionReport,
    ScreeningRules,
    convert_corpus,
    load_cases,
    render_table,
    screen_case,
    summarize,
    yield_rate,
)
from ..evalharness import (
    EvalConfig,
    Exemplar,
    InputFormat,
    delta_table,
    aggregate,
    evaluate_cases,
)
from ..fhir import error_issues, parse_bundle, serialize_bundle
from ..gateway import Gateway, ProviderConfig, Transcript
from ..hiding import DiagnosisSpec, HidingMode, apply_hiding
from ..corpus.screening import Split
from ..ir import (
    DEFAULT_PIPELINE_MODEL,
    DEFAULT_REFERENCE_DATE,
    ClinicalScenario,
    CodedConcept,
    extract_scenario,
)
from ..synthesis import postprocess, repair_loop, validate_bundle
from ..terminology import Grounder, GroundingThresholds, load_store, load_vectors
from . import schemas as s

_cache_lock = threading.Lock()
_store_cache: dict = {}
_index_cache: dict = {}


def build_gateway(spec: s.GatewaySpec | None) -> Gateway:
    if spec is None:
        raise ValueError("a gateway spec is required for this operation")
    provider = None
    if spec.provider is not None:
        provider = ProviderConfig(**spec.provider.model_dump())
    elif spec.provider_path:
        provider = ProviderConfig.from_file(spec.provider_path)
    transcript = Transcript(spec.transcript) if spec.mode in ("record", "replay") else None
    return Gateway(mode=spec.mode, transcript=transcript, provider=provider)


def _cached_store(path: str):
    key = (path, Path(path).stat().st_mtime_ns)
    with _cache_lock:
        if key not in _store_cache:
            _store_cache.clear()
            _store_cache[key] = load_store(path)
        return _store_cache[key]


def build_grounder(store_path: str, vectors_path: Optional[str],
                   thresholds: Optional[str]) -> Grounder:
    store = _cached_store(store_path)
    index = None
    if vectors_path:
        key = (vectors_path, Path(vectors_path).stat().st_mtime_ns)
        with _cache_lock:
            if key not in _index_cache:
                _index_cache.clear()
                _index_cache[key] = load_vectors(vectors_path)
            index = _index_cache[key]
    t = GroundingThresholds.from_string(thresholds) if thresholds else None
    return Grounder(store, index, t)


def _bundle_from(request) -> "FhirBundle":
    if request.bundle_text is not None:
        return parse_bundle(request.bundle_text)
    if request.bundle is not None:
        return parse_bundle(json.dumps(request.bundle))
    raise ValueError("either bundle or bundle_text is required")


def validate_op(request: s.ValidateRequest) -> s.ValidateResponse:
    bundle = _bundle_from(request)
    scenario = ClinicalScenario.model_validate(request.scenario) if request.scenario else None
    issues = validate_bundle(bundle, scenario)
    errors = error_issues(issues)
    return s.ValidateResponse(
        issues=[s.IssueModel(**i.to_dict()) for i in issues],
        error_count=len(errors),
        valid=not errors,
    )


def normalize_op(request: s.NormalizeRequest) -> s.NormalizeResponse:
    bundle = parse_bundle(json.dumps(request.bundle))
    scenario = ClinicalScenario.model_validate(request.scenario) if request.scenario else None
    out, issues = postprocess(bundle, scenario,
                              reference_date=request.reference_date or DEFAULT_REFERENCE_DATE)
    return s.NormalizeResponse(
        bundle_text=serialize_bundle(out),
        issues=[s.IssueModel(**i.to_dict()) for i in issues],
    )


def extract_op(request: s.ExtractRequest) -> s.ExtractResponse:
    gateway = build_gateway(request.gateway)
    scenario = extract_scenario(request.source_text, gateway,
                                request.model_id or DEFAULT_PIPELINE_MODEL)
    return s.ExtractResponse(scenario=json.loads(scenario.to_json()))


def ground_op(request: s.GroundRequest) -> s.GroundResponse:
    grounder = build_grounder(request.store_path, request.vectors_path, request.thresholds)
    payload = dict(request.scenario)
    payload.pop("ir_version", None)
    scenario = ClinicalScenario.model_validate(payload)
    grounded, decisions = grounder.ground_scenario(scenario)
    return s.GroundResponse(
        scenario=json.loads(grounded.to_json()),
        decisions=[d.to_dict() for d in decisions],
        encoder_id=grounder.encoder_id,
        conversion_failed=grounded.conversion_failed,
    )


def synthesize_op(request: s.SynthesizeRequest) -> s.SynthesizeResponse:
    gateway = build_gateway(request.gateway)
    payload = dict(request.scenario)
    payload.pop("ir_version", None)
    scenario = ClinicalScenario.model_validate(payload)
    reference = request.reference_date or DEFAULT_REFERENCE_DATE
    outcome = repair_loop(scenario, gateway, max_attempts=request.max_repair,
                          reference_date=reference,
                          model_id=request.model_id or DEFAULT_PIPELINE_MODEL)
    bundle_text = None
    if outcome.succeeded:
        bundle = outcome.bundle
        if request.postprocess:
            bundle, _ = postprocess(bundle, scenario, reference_date=reference)
        bundle_text = serialize_bundle(bundle)
    return s.SynthesizeResponse(
        succeeded=outcome.succeeded,
        bundle_text=bundle_text,
        attempts_used=outcome.attempts_used,
        attempts=[a.to_dict() for a in outcome.attempts],
        issues=[s.IssueModel(**i.to_dict()) for i in outcome.issues],
    )


def hide_op(request: s.HideRequest) -> s.HideResponse:
    bundle = _bundle_from(request)
    spec = DiagnosisSpec(
        name=request.diagnosis["name"],
        synonyms=request.diagnosis.get("synonyms", []),
        codes=[CodedConcept.model_validate(c) for c in request.diagnosis.get("codes", [])],
    )
    mode = HidingMode(request.mode)
    gateway = None
    if mode in (HidingMode.NONE, HidingMode.HIDDEN):
        gateway = build_gateway(request.gateway)
    out, report = apply_hiding(bundle, spec, mode, gateway,
                               request.model_id or DEFAULT_PIPELINE_MODEL)
    return s.HideResponse(bundle_text=serialize_bundle(out), report=report.to_dict())


def screen_op(request: s.ScreenRequest) -> s.ScreenResponse:
    rules = ScreeningRules.from_file(request.rules_path) if request.rules_path else None
    record = CaseRecord(case_id="adhoc", split=Split.TEST,
                        prompt_text=request.prompt_text, final_diagnosis="")
    decision = screen_case(record, rules)
    return s.ScreenResponse(eligible=decision.eligible,
                            reason=decision.reason.value if decision.reason else None)


def _load_case_models(request) -> list[CaseRecord]:
    if request.cases_path:
        return load_cases(request.cases_path)
    if request.cases is not None:
        return [CaseRecord.from_dict(c) for c in request.cases]
    raise ValueError("either cases or cases_path is required")


def convert_op(request: s.ConvertRequest) -> s.ConvertResponse:
    cases = _load_case_models(request)
    gateway = build_gateway(request.gateway)
    grounder = build_grounder(request.store_path, request.vectors_path, request.thresholds)
    config = ConversionConfig(
        mode=HidingMode(request.mode),
        reference_date=request.reference_date or DEFAULT_REFERENCE_DATE,
        max_repair=request.max_repair,
        workers=request.workers,
        model_id=request.model_id or DEFAULT_PIPELINE_MODEL,
    )
    outcomes, report = convert_corpus(cases, config, gateway, grounder)
    models = []
    for outcome in outcomes:
        payload = outcome.to_dict()
        payload["bundle_text"] = serialize_bundle(outcome.bundle) if outcome.bundle else None
        models.append(s.OutcomeModel(**payload))
    return s.ConvertResponse(outcomes=models, report=report.to_dict())


def summarize_op(request: s.SummarizeRequest) -> s.SummarizeResponse:
    outcomes = [ConversionOutcome.from_dict(o) for o in request.outcomes]
    report = summarize(outcomes, encoder_id=request.encoder_id)
    return s.SummarizeResponse(report=report.to_dict(), table=render_table(report))


def yield_op(request: s.YieldRequest) -> s.YieldResponse:
    report = ConversionReport.from_dict(request.report)
    return s.YieldResponse(percent=yield_rate(report))


def aggregate_op(request: s.AggregateRequest) -> s.AggregateResponse:
    return s.AggregateResponse(percent=aggregate(request.judgments))


def delta_op(request: s.DeltaRequest) -> s.DeltaResponse:
    rows = delta_table([(r.model_id, r.shots, r.acc_text, r.acc_fhir)
                        for r in request.rows])
    return s.DeltaResponse(rows=[r.to_dict() for r in rows])


def eval_run_op(request: s.EvalRunRequest) -> s.EvalRunResponse:
    cases = _load_case_models(request)
    fmt = InputFormat.FHIR_BUNDLE if request.format == "fhir" else InputFormat.PLAIN_TEXT

    def case_input(case: CaseRecord) -> Optional[str]:
        if fmt == InputFormat.PLAIN_TEXT:
            return case.prompt_text
        if not request.bundles_dir:
            raise ValueError("bundles_dir is required for fhir-format evaluation")
        path = Path(request.bundles_dir) / f"{case.case_id}.json"
        return path.read_text(encoding="utf-8") if path.exists() else None

    targets = []
    pool = []
    for case in cases:
        rendered = case_input(case)
        if case.split.value == "train":
            if rendered is not None:
                pool.append(Exemplar(case_input=rendered, diagnosis=case.final_diagnosis))
        elif case.split.value == request.split:
            if rendered is None:
                raise ValueError(f"no bundle on disk for case {case.case_id}")
            targets.append((case.case_id, rendered, case.final_diagnosis))

    config_kwargs = dict(shots=request.shots, seed=request.seed, input_format=fmt)
    if request.model_id:
        config_kwargs["model_id"] = request.model_id
    if request.judge_model_id:
        config_kwargs["judge_model_id"] = request.judge_model_id
    config = EvalConfig(**config_kwargs)
    gateway = build_gateway(request.gateway)
    judge_gateway = build_gateway(request.judge_gateway) if request.judge_gateway else gateway
    results, accuracy = evaluate_cases(targets, config, gateway, judge_gateway,
                                       train_pool=pool)
    return s.EvalRunResponse(results=[r.to_dict() for r in results], accuracy=accuracy)
