"""FastAPI application exposing the pipeline over HTTP."""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import FhirforgeError
from . import ops
from . import schemas as s


def create_app() -> FastAPI:
    app = FastAPI(
        title="fhirforge",
        version=__version__,
        description="Text-to-FHIR synthesis pipeline and evaluation service",
    )

    @app.exception_handler(FhirforgeError)
    async def domain_error(request: Request, exc: FhirforgeError):
        return JSONResponse(status_code=422, content={
            "error": type(exc).__name__, "message": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={
            "error": "ValueError", "message": str(exc)})

    @app.exception_handler(ZeroDivisionError)
    async def zero_division(request: Request, exc: ZeroDivisionError):
        return JSONResponse(status_code=422, content={
            "error": "ZeroDivisionError", "message": str(exc)})

    @app.get("/healthz", response_model=s.HealthResponse)
    def healthz():
        return s.HealthResponse(status="ok", version=__version__)

    @app.post("/fhir/validate", response_model=s.ValidateResponse)
    def validate(request: s.ValidateRequest):
        return ops.validate_op(request)

    @app.post("/fhir/normalize", response_model=s.NormalizeResponse)
    def normalize(request: s.NormalizeRequest):
        return ops.normalize_op(request)

    @app.post("/pipeline/extract", response_model=s.ExtractResponse)
    def extract(request: s.ExtractRequest):
        return ops.extract_op(request)

    @app.post("/pipeline/ground", response_model=s.GroundResponse)
    def ground(request: s.GroundRequest):
        return ops.ground_op(request)

    @app.post("/pipeline/synthesize", response_model=s.SynthesizeResponse)
    def synthesize(request: s.SynthesizeRequest):
        return ops.synthesize_op(request)

    @app.post("/pipeline/hide", response_model=s.HideResponse)
    def hide(request: s.HideRequest):
        return ops.hide_op(request)

    @app.post("/pipeline/screen", response_model=s.ScreenResponse)
    def screen(request: s.ScreenRequest):
        return ops.screen_op(request)

    @app.post("/pipeline/convert", response_model=s.ConvertResponse)
    def convert(request: s.ConvertRequest):
        return ops.convert_op(request)

    @app.post("/report/summarize", response_model=s.SummarizeResponse)
    def summarize(request: s.SummarizeRequest):
        return ops.summarize_op(request)

    @app.post("/report/yield", response_model=s.YieldResponse)
    def yield_percent(request: s.YieldRequest):
        return ops.yield_op(request)

    @app.post("/eval/aggregate", response_model=s.AggregateResponse)
    def eval_aggregate(request: s.AggregateRequest):
        return ops.aggregate_op(request)

    @app.post("/eval/delta", response_model=s.DeltaResponse)
    def eval_delta(request: s.DeltaRequest):
        return ops.delta_op(request)

    @app.post("/eval/run", response_model=s.EvalRunResponse)
    def eval_run(request: s.EvalRunRequest):
        return ops.eval_run_op(request)

    return app


app = create_app()
