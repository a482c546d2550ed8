"""Versioned config and prompt assets bundled with the package."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


def _root():
    return resources.files(__name__)


@lru_cache(maxsize=None)
def load_json(name: str):
    return json.loads(_root().joinpath(name).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return _root().joinpath("prompts", name).read_text(encoding="utf-8")
