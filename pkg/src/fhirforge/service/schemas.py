"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from datetime import date
from typing import Literal, Optional

from pydantic import BaseModel, Field


class ProviderModel(BaseModel):
    base_url: str
    dialect: Literal["openai-compatible", "anthropic-compatible"] = "openai-compatible"
    model_id: str = ""
    auth_header: str = "Authorization"


class GatewaySpec(BaseModel):
    mode: Literal["record", "replay", "live"] = "replay"
    transcript: Optional[str] = None
    provider: Optional[ProviderModel] = None
    provider_path: Optional[str] = None


class IssueModel(BaseModel):
    severity: str
    kind: str
    path: str
    message: str


class ValidateRequest(BaseModel):
    bundle: Optional[dict] = None
    bundle_text: Optional[str] = None
    scenario: Optional[dict] = None


class ValidateResponse(BaseModel):
    issues: list[IssueModel]
    error_count: int
    valid: bool


class NormalizeRequest(BaseModel):
    bundle: dict
    scenario: Optional[dict] = None
    reference_date: Optional[date] = None


class NormalizeResponse(BaseModel):
    bundle_text: str
    issues: list[IssueModel]


class ExtractRequest(BaseModel):
    source_text: str
    gateway: GatewaySpec
    model_id: Optional[str] = None


class ExtractResponse(BaseModel):
    scenario: dict


class GroundRequest(BaseModel):
    scenario: dict
    store_path: str
    vectors_path: Optional[str] = None
    thresholds: Optional[str] = Field(
        default=None, description="accept,replace,reject e.g. 0.90,0.75,0.60")


class GroundResponse(BaseModel):
    scenario: dict
    decisions: list[dict]
    encoder_id: str
    conversion_failed: bool


class SynthesizeRequest(BaseModel):
    scenario: dict
    gateway: GatewaySpec
    max_repair: int = 3
    reference_date: Optional[date] = None
    model_id: Optional[str] = None
    postprocess: bool = True


class SynthesizeResponse(BaseModel):
    succeeded: bool
    bundle_text: Optional[str]
    attempts_used: int
    attempts: list[dict]
    issues: list[IssueModel]


class HideRequest(BaseModel):
    bundle: Optional[dict] = None
    bundle_text: Optional[str] = None
    diagnosis: dict
    mode: Literal["none", "hidden", "explicit", "full"]
    gateway: Optional[GatewaySpec] = None
    model_id: Optional[str] = None


class HideResponse(BaseModel):
    bundle_text: str
    report: dict


class ScreenRequest(BaseModel):
    prompt_text: str
    rules_path: Optional[str] = None


class ScreenResponse(BaseModel):
    eligible: bool
    reason: Optional[str] = None


class ConvertRequest(BaseModel):
    cases: Optional[list[dict]] = None
    cases_path: Optional[str] = None
    mode: Literal["none", "hidden", "explicit", "full"] = "hidden"
    workers: int = 1
    max_repair: int = 3
    store_path: str
    vectors_path: Optional[str] = None
    thresholds: Optional[str] = None
    gateway: GatewaySpec
    reference_date: Optional[date] = None
    model_id: Optional[str] = None


class OutcomeModel(BaseModel):
    case_id: str
    split: str
    success: bool
    attempts_used: int = 0
    decisions: list[dict] = []
    stage: Optional[str] = None
    exclusion_reason: Optional[str] = None
    issues: list[dict] = []
    detail: str = ""
    bundle_text: Optional[str] = None


class ConvertResponse(BaseModel):
    outcomes: list[OutcomeModel]
    report: dict


class SummarizeRequest(BaseModel):
    outcomes: list[dict]
    encoder_id: Optional[str] = None


class SummarizeResponse(BaseModel):
    report: dict
    table: str


class YieldRequest(BaseModel):
    report: dict


class YieldResponse(BaseModel):
    percent: float


class AggregateRequest(BaseModel):
    judgments: list[bool]


class AggregateResponse(BaseModel):
    percent: float


class DeltaRowIn(BaseModel):
    model_id: str
    shots: int
    acc_text: float
    acc_fhir: float


class DeltaRequest(BaseModel):
    rows: list[DeltaRowIn]


class DeltaResponse(BaseModel):
    rows: list[dict]


class EvalRunRequest(BaseModel):
    cases: Optional[list[dict]] = None
    cases_path: Optional[str] = None
    bundles_dir: Optional[str] = None
    format: Literal["text", "fhir"] = "text"
    shots: int = 0
    seed: int = 0
    gateway: GatewaySpec
    judge_gateway: Optional[GatewaySpec] = None
    model_id: Optional[str] = None
    judge_model_id: Optional[str] = None
    split: str = "test"


class EvalRunResponse(BaseModel):
    results: list[dict]
    accuracy: float


class HealthResponse(BaseModel):
    status: str
    version: str
