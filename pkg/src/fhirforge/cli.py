"""Command-line client for the pipeline service.

Commands run against the in-process service layer by default; pass
--server-url to talk to a running `fhirforge serve` instance instead.
"""
from __future__ import annotations

import json
import sys
from datetime import date
from pathlib import Path

import click
import httpx

from .corpus import read_outcomes
from .service import ops
from .service import schemas as s

_ROUTES = {
    "/fhir/validate": (ops.validate_op, s.ValidateRequest, s.ValidateResponse),
    "/fhir/normalize": (ops.normalize_op, s.NormalizeRequest, s.NormalizeResponse),
    "/pipeline/extract": (ops.extract_op, s.ExtractRequest, s.ExtractResponse),
    "/pipeline/ground": (ops.ground_op, s.GroundRequest, s.GroundResponse),
    "/pipeline/synthesize": (ops.synthesize_op, s.SynthesizeRequest, s.SynthesizeResponse),
    "/pipeline/hide": (ops.hide_op, s.HideRequest, s.HideResponse),
    "/pipeline/screen": (ops.screen_op, s.ScreenRequest, s.ScreenResponse),
    "/pipeline/convert": (ops.convert_op, s.ConvertRequest, s.ConvertResponse),
    "/report/summarize": (ops.summarize_op, s.SummarizeRequest, s.SummarizeResponse),
    "/report/yield": (ops.yield_op, s.YieldRequest, s.YieldResponse),
    "/eval/aggregate": (ops.aggregate_op, s.AggregateRequest, s.AggregateResponse),
    "/eval/delta": (ops.delta_op, s.DeltaRequest, s.DeltaResponse),
    "/eval/run": (ops.eval_run_op, s.EvalRunRequest, s.EvalRunResponse),
}


class ServiceClient:
    def __init__(self, server_url: str | None = None):
        self.server_url = server_url.rstrip("/") if server_url else None

    def call(self, path: str, request):
        handler, _request_model, response_model = _ROUTES[path]
        if self.server_url is None:
            return handler(request)
        resp = httpx.post(f"{self.server_url}{path}",
                          json=request.model_dump(mode="json"), timeout=600.0)
        if resp.status_code >= 400:
            raise click.ClickException(f"{path} failed: {resp.status_code} {resp.text}")
        return response_model.model_validate(resp.json())


def gateway_options(fn):
    fn = click.option("--llm-mode", type=click.Choice(["record", "replay", "live"]),
                      default="replay", show_default=True)(fn)
    fn = click.option("--transcript", type=click.Path(), default=None,
                      help="record/replay transcript path")(fn)
    fn = click.option("--provider", "provider_path", type=click.Path(exists=True),
                      default=None, help="provider config JSON")(fn)
    fn = click.option("--model", "model_id", default=None, help="model identifier")(fn)
    return fn


def make_gateway_spec(llm_mode, transcript, provider_path) -> s.GatewaySpec:
    return s.GatewaySpec(mode=llm_mode, transcript=transcript, provider_path=provider_path)


@click.group()
@click.option("--server-url", default=None, envvar="FHIRFORGE_SERVER_URL",
              help="remote service base URL (default: run in-process)")
@click.pass_context
def main(ctx, server_url):
    """Text-to-FHIR synthesis pipeline and evaluation toolkit."""
    ctx.obj = ServiceClient(server_url)


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@gateway_options
@click.pass_obj
def extract(client, in_path, out_path, llm_mode, transcript, provider_path, model_id):
    """Extract a structured scenario from a free-text case file."""
    request = s.ExtractRequest(
        source_text=Path(in_path).read_text(encoding="utf-8"),
        gateway=make_gateway_spec(llm_mode, transcript, provider_path),
        model_id=model_id)
    response = client.call("/pipeline/extract", request)
    Path(out_path).write_text(
        json.dumps(response.scenario, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True)
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--vectors", "vectors_path", type=click.Path(exists=True), default=None)
@click.option("--thresholds", default=None, help="accept,replace,reject")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--decisions", "decisions_path", type=click.Path(), default=None)
@click.pass_obj
def ground(client, scenario_path, store_path, vectors_path, thresholds, out_path,
           decisions_path):
    """Ground a scenario's proposed codes against a terminology store."""
    request = s.GroundRequest(
        scenario=json.loads(Path(scenario_path).read_text(encoding="utf-8")),
        store_path=store_path, vectors_path=vectors_path, thresholds=thresholds)
    response = client.call("/pipeline/ground", request)
    out_path = out_path or scenario_path
    Path(out_path).write_text(
        json.dumps(response.scenario, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")
    if decisions_path:
        with open(decisions_path, "w", encoding="utf-8") as f:
            for decision in response.decisions:
                f.write(json.dumps(decision, sort_keys=True, ensure_ascii=False) + "\n")
    counts = {}
    for decision in response.decisions:
        counts[decision["kind"]] = counts.get(decision["kind"], 0) + 1
    click.echo(f"encoder: {response.encoder_id}; decisions: {counts}")
    if response.conversion_failed:
        click.echo("primary diagnosis rejected: conversion failed", err=True)
        sys.exit(1)


@main.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--max-repair", default=3, show_default=True)
@click.option("--reference-date", default=None, help="YYYY-MM-DD")
@gateway_options
@click.pass_obj
def synthesize(client, scenario_path, out_path, max_repair, reference_date,
               llm_mode, transcript, provider_path, model_id):
    """Convert a grounded scenario into a validated FHIR bundle."""
    request = s.SynthesizeRequest(
        scenario=json.loads(Path(scenario_path).read_text(encoding="utf-8")),
        gateway=make_gateway_spec(llm_mode, transcript, provider_path),
        max_repair=max_repair,
        reference_date=date.fromisoformat(reference_date) if reference_date else None,
        model_id=model_id)
    response = client.call("/pipeline/synthesize", request)
    log_path = Path(out_path).with_suffix(".attempts.jsonl")
    with open(log_path, "w", encoding="utf-8") as f:
        for attempt in response.attempts:
            f.write(json.dumps(attempt, sort_keys=True, ensure_ascii=False) + "\n")
    if not response.succeeded:
        click.echo(f"synthesis failed after {response.attempts_used} attempts", err=True)
        for issue in response.issues:
            click.echo(json.dumps(issue.model_dump(), sort_keys=True), err=True)
        sys.exit(1)
    Path(out_path).write_text(response.bundle_text, encoding="utf-8")
    click.echo(f"wrote {out_path} (attempts: {response.attempts_used})")


@main.command()
@click.argument("bundle_path", type=click.Path(exists=True))
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), default=None)
@click.pass_obj
def validate(client, bundle_path, scenario_path):
    """Validate a bundle; exit 0 iff there are zero Error issues."""
    scenario = None
    if scenario_path:
        scenario = json.loads(Path(scenario_path).read_text(encoding="utf-8"))
        scenario.pop("ir_version", None)
    request = s.ValidateRequest(
        bundle_text=Path(bundle_path).read_text(encoding="utf-8"), scenario=scenario)
    response = client.call("/fhir/validate", request)
    for issue in response.issues:
        click.echo(json.dumps(issue.model_dump(), sort_keys=True, ensure_ascii=False))
    sys.exit(0 if response.valid else 1)


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True)
@click.option("--mode", type=click.Choice(["none", "hidden", "explicit", "full"]),
              required=True)
@click.option("--diagnosis", "diagnosis_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
@gateway_options
@click.pass_obj
def hide(client, bundle_path, mode, diagnosis_path, out_path, report_path,
         llm_mode, transcript, provider_path, model_id):
    """Suppress a diagnosis from a bundle under the given mode."""
    gateway = None
    if mode in ("none", "hidden"):
        gateway = make_gateway_spec(llm_mode, transcript, provider_path)
    request = s.HideRequest(
        bundle_text=Path(bundle_path).read_text(encoding="utf-8"),
        diagnosis=json.loads(Path(diagnosis_path).read_text(encoding="utf-8")),
        mode=mode, gateway=gateway, model_id=model_id)
    response = client.call("/pipeline/hide", request)
    Path(out_path).write_text(response.bundle_text, encoding="utf-8")
    if report_path:
        Path(report_path).write_text(
            json.dumps(response.report, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")
    residual = response.report["residual_check"]
    click.echo(f"wrote {out_path} (residual check: {'pass' if residual else 'FAIL'})")


@main.command()
@click.option("--cases", "cases_path", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["none", "hidden", "explicit", "full"]),
              default="hidden", show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--max-repair", default=3, show_default=True)
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--vectors", "vectors_path", type=click.Path(exists=True), default=None)
@click.option("--thresholds", default=None)
@click.option("--reference-date", default=None)
@click.option("--outcomes", "outcomes_path", type=click.Path(), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
@gateway_options
@click.pass_obj
def convert(client, cases_path, out_dir, mode, workers, max_repair, store_path,
            vectors_path, thresholds, reference_date, outcomes_path, report_path,
            llm_mode, transcript, provider_path, model_id):
    """Convert a case corpus into hidden FHIR bundles plus a report."""
    request = s.ConvertRequest(
        cases_path=cases_path, mode=mode, workers=workers, max_repair=max_repair,
        store_path=store_path, vectors_path=vectors_path, thresholds=thresholds,
        gateway=make_gateway_spec(llm_mode, transcript, provider_path),
        reference_date=date.fromisoformat(reference_date) if reference_date else None,
        model_id=model_id)
    response = client.call("/pipeline/convert", request)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    succeeded = 0
    for outcome in response.outcomes:
        if outcome.bundle_text is not None:
            (out / f"{outcome.case_id}.json").write_text(outcome.bundle_text,
                                                         encoding="utf-8")
            succeeded += 1
    if outcomes_path:
        with open(outcomes_path, "w", encoding="utf-8") as f:
            for outcome in response.outcomes:
                row = outcome.model_dump()
                row.pop("bundle_text", None)
                f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    if report_path:
        Path(report_path).write_text(
            json.dumps(response.report, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")
    click.echo(f"{succeeded}/{len(response.outcomes)} cases converted into {out_dir}")


@main.command()
@click.option("--outcomes", "outcomes_path", type=click.Path(exists=True), default=None)
@click.option("--results", "results_paths", type=click.Path(exists=True), multiple=True)
@click.option("--format", "fmt", type=click.Choice(["table", "json"]),
              default="table", show_default=True)
@click.pass_obj
def report(client, outcomes_path, results_paths, fmt):
    """Render conversion accounting or the accuracy/delta table."""
    if outcomes_path:
        request = s.SummarizeRequest(outcomes=read_outcomes(outcomes_path))
        response = client.call("/report/summarize", request)
        if fmt == "json":
            click.echo(json.dumps(response.report, indent=2, sort_keys=True))
        else:
            click.echo(response.table)
        return
    if not results_paths:
        raise click.ClickException("provide --outcomes or at least one --results file")

    rows: dict[tuple[str, int], dict[str, float]] = {}
    for path in results_paths:
        with open(path, encoding="utf-8") as f:
            meta = json.loads(f.readline())["meta"]
        key = (meta["model_id"], meta["shots"])
        rows.setdefault(key, {})[meta["format"]] = meta["accuracy"]
    complete = [s.DeltaRowIn(model_id=m, shots=sh, acc_text=accs["text"],
                             acc_fhir=accs["fhir"])
                for (m, sh), accs in sorted(rows.items()) if {"text", "fhir"} <= accs.keys()]
    if not complete:
        raise click.ClickException("need matching text and fhir results per (model, shots)")
    response = client.call("/eval/delta", s.DeltaRequest(rows=complete))
    if fmt == "json":
        click.echo(json.dumps(response.rows, indent=2, sort_keys=True))
    else:
        click.echo(f"{'model':<24}{'shots':>6}{'text':>9}{'fhir':>9}{'delta':>9}")
        for row in response.rows:
            click.echo(f"{row['model_id']:<24}{row['shots']:>6}"
                       f"{row['acc_text']:>9.2f}{row['acc_fhir']:>9.2f}{row['delta']:>9.2f}")


@main.command()
@click.option("--cases", "cases_path", type=click.Path(exists=True), required=True)
@click.option("--bundles", "bundles_dir", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["text", "fhir"]), default="text",
              show_default=True)
@click.option("--shots", type=click.Choice(["0", "1", "5"]), default="0", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--judge-provider", "judge_provider_path", type=click.Path(exists=True),
              default=None)
@click.option("--judge-model", "judge_model_id", default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@gateway_options
@click.pass_obj
def evaluate(client, cases_path, bundles_dir, fmt, shots, seed, split,
             judge_provider_path, judge_model_id, out_path,
             llm_mode, transcript, provider_path, model_id):
    """Run diagnostic-reasoning evaluation and write results JSONL."""
    gateway = make_gateway_spec(llm_mode, transcript, provider_path)
    judge_gateway = None
    if judge_provider_path:
        judge_gateway = s.GatewaySpec(mode=llm_mode, transcript=transcript,
                                      provider_path=judge_provider_path)
    request = s.EvalRunRequest(
        cases_path=cases_path, bundles_dir=bundles_dir, format=fmt,
        shots=int(shots), seed=seed, split=split, gateway=gateway,
        judge_gateway=judge_gateway, model_id=model_id,
        judge_model_id=judge_model_id)
    response = client.call("/eval/run", request)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"meta": {
            "model_id": model_id or "eval-default", "shots": int(shots),
            "format": fmt, "seed": seed, "accuracy": response.accuracy,
        }}, sort_keys=True) + "\n")
        for row in response.results:
            f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    click.echo(f"accuracy: {response.accuracy:.2f} over {len(response.results)} cases")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
