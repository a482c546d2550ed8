"""Curated terminology store: exact lookup and keyword search."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ..errors import DuplicateEntryError, StoreParseError
from ..ir import CodeSystem, code_matches_pattern

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class TerminologyEntry:
    system: CodeSystem
    code: str
    display: str
    synonyms: tuple[str, ...] = ()
    category: Optional[str] = None

    def all_terms(self) -> Iterable[str]:
        yield self.display
        yield from self.synonyms

    def token_set(self) -> set[str]:
        tokens: set[str] = set()
        for term in self.all_terms():
            tokens.update(tokenize(term))
        return tokens


class TerminologyStore:
    """Entries keyed by (system, code) with a per-system inverted token index."""

    def __init__(self, entries: Iterable[TerminologyEntry] = ()):
        self._by_key: dict[tuple[CodeSystem, str], TerminologyEntry] = {}
        self._token_index: dict[CodeSystem, dict[str, set[tuple[CodeSystem, str]]]] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: TerminologyEntry) -> None:
        key = (entry.system, entry.code)
        if key in self._by_key:
            raise DuplicateEntryError(entry.system.value, entry.code)
        self._by_key[key] = entry
        index = self._token_index.setdefault(entry.system, {})
        for token in entry.token_set():
            index.setdefault(token, set()).add(key)

    @property
    def size(self) -> int:
        return len(self._by_key)

    def __len__(self) -> int:
        return self.size

    def get(self, system: CodeSystem, code: str) -> Optional[TerminologyEntry]:
        return self._by_key.get((system, code))

    def entries(self, system: CodeSystem | None = None) -> list[TerminologyEntry]:
        if system is None:
            return list(self._by_key.values())
        return [e for e in self._by_key.values() if e.system == system]

    def postings(self, system: CodeSystem, token: str) -> set[tuple[CodeSystem, str]]:
        return self._token_index.get(system, {}).get(token, set())


def _parse_entry(raw: dict, line_no: int) -> TerminologyEntry:
    try:
        system = CodeSystem(raw["system"])
        code = str(raw["code"])
        display = raw["display"]
        synonyms = tuple(raw.get("synonyms", []))
        category = raw.get("category")
    except (KeyError, ValueError) as exc:
        raise StoreParseError(line_no, f"bad entry: {exc}") from exc
    if not display or not str(display).strip():
        raise StoreParseError(line_no, "display must be non-empty")
    if not code_matches_pattern(system, code):
        raise StoreParseError(line_no, f"code {code!r} does not match the {system.value} pattern")
    return TerminologyEntry(system=system, code=code, display=display,
                            synonyms=synonyms, category=category)


def load_store(path: str | Path) -> TerminologyStore:
    """Load a JSONL store file; rejects malformed lines and duplicate keys."""
    store = TerminologyStore()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StoreParseError(line_no, f"invalid JSON: {exc}") from exc
            store.add(_parse_entry(raw, line_no))
    return store


def lookup(store: TerminologyStore, system: CodeSystem, code: str) -> Optional[TerminologyEntry]:
    """Exact (system, code) match; malformed codes are pre-filtered out."""
    if not code_matches_pattern(system, code):
        return None
    return store.get(system, code)


def keyword_search(
    store: TerminologyStore,
    system: CodeSystem,
    query: str,
    k: int = 16,
) -> list[tuple[TerminologyEntry, float]]:
    """Entries ranked by token overlap |q ∩ e| / |q|, ties by ascending code."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_tokens = set(tokenize(query))
    if not query_tokens:
        return []
    candidate_keys: set[tuple[CodeSystem, str]] = set()
    for token in query_tokens:
        candidate_keys |= store.postings(system, token)
    scored = []
    for key in candidate_keys:
        entry = store.get(*key)
        overlap = len(query_tokens & entry.token_set()) / len(query_tokens)
        if overlap > 0:
            scored.append((entry, overlap))
    scored.sort(key=lambda pair: (-pair[1], pair[0].code))
    return scored[:k]
