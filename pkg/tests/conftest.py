from __future__ import annotations

from pathlib import Path

import pytest

from fhirforge.corpus import ConversionConfig, convert_corpus
from fhirforge.gateway import Gateway, Transcript
from fhirforge.hiding import HidingMode
from fhirforge.terminology import Grounder, load_store

from helpers import ScriptedGateway, build_fixture_cases

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_store():
    return load_store(FIXTURES / "store.jsonl")


@pytest.fixture(scope="session")
def grounder(fixture_store):
    return Grounder(fixture_store)


@pytest.fixture(scope="session")
def golden_bundle_text():
    return (FIXTURES / "golden_bundle.json").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def fixture_cases():
    return build_fixture_cases()


@pytest.fixture(scope="session")
def corpus_transcript_path(tmp_path_factory, fixture_cases, grounder):
    """Record the full corpus run once; everything downstream replays it."""
    path = tmp_path_factory.mktemp("transcripts") / "corpus.jsonl"
    gateway = ScriptedGateway(fixture_cases, Transcript(path))
    config = ConversionConfig(mode=HidingMode.HIDDEN, workers=1)
    records = [case.record for case in fixture_cases]
    convert_corpus(records, config, gateway, grounder)
    return path


@pytest.fixture()
def replay_gateway(corpus_transcript_path):
    return Gateway(mode="replay", transcript=Transcript(corpus_transcript_path))
