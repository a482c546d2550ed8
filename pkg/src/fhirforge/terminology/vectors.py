"""Vector index over terminology entries plus the offline fallback encoder."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DimensionMismatchError, StoreParseError, ZeroVectorError
from ..ir import CodeSystem
from .store import TerminologyStore

FALLBACK_ENCODER_PREFIX = "hash-trigram-v1"
DEFAULT_DIM = 256
VECTOR_FORMAT_VERSION = 1


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"shapes {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine undefined for zero-norm vectors")
    value = float(np.dot(u, v) / (nu * nv))
    return max(-1.0, min(1.0, value))


def fallback_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Deterministic unit vector from hashed character trigrams.

    Stands in for an external sentence encoder so grounding runs offline.
    Identical text always yields the identical vector.
    """
    if not text:
        raise ValueError("text must be non-empty")
    if dim < 8:
        raise ValueError("dim must be >= 8")
    padded = " " + " ".join(text.lower().split()) + " "
    vec = np.zeros(dim, dtype=np.float64)
    for i in range(len(padded) - 2):
        trigram = padded[i:i + 3]
        h = int.from_bytes(hashlib.sha256(trigram.encode("utf-8")).digest()[:8], "big")
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        h = int.from_bytes(hashlib.sha256(padded.encode("utf-8")).digest()[:8], "big")
        vec[h % dim] = 1.0
        norm = 1.0
    return vec / norm


class FallbackEmbedder:
    """Hash-trigram encoder wrapped with a provenance id."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self.encoder_id = f"{FALLBACK_ENCODER_PREFIX}-{dim}"

    def embed(self, text: str) -> np.ndarray:
        return fallback_embed(text, self.dim)


class VectorIndex:
    """Unit-normalized vectors keyed by (system, code); exhaustive scan search."""

    def __init__(self, dim: int, encoder_id: str):
        self.dim = dim
        self.encoder_id = encoder_id
        self._vectors: dict[tuple[CodeSystem, str], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def add(self, system: CodeSystem, code: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionMismatchError(f"vector dim {vector.shape} != index dim {self.dim}")
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > 1e-4:
            raise ValueError(f"vector for ({system.value}, {code}) has norm {norm:.6f}, not 1")
        self._vectors[(system, code)] = vector

    def get(self, system: CodeSystem, code: str) -> Optional[np.ndarray]:
        return self._vectors.get((system, code))

    def items_for(self, system: CodeSystem) -> list[tuple[str, np.ndarray]]:
        return [(code, vec) for (sys_, code), vec in self._vectors.items() if sys_ == system]

    @classmethod
    def from_store(cls, store: TerminologyStore, embedder: FallbackEmbedder | None = None) -> "VectorIndex":
        embedder = embedder or FallbackEmbedder()
        index = cls(dim=embedder.dim, encoder_id=embedder.encoder_id)
        for entry in store.entries():
            index.add(entry.system, entry.code, embedder.embed(entry.display))
        return index


def load_vectors(path: str | Path) -> VectorIndex:
    """Read the portable vector file: one header line, then one entry per line."""
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    if not lines:
        raise StoreParseError(1, "empty vector file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise StoreParseError(1, f"invalid header JSON: {exc}") from exc
    if header.get("format_version") != VECTOR_FORMAT_VERSION:
        raise StoreParseError(1, f"unsupported format_version {header.get('format_version')!r}")
    index = VectorIndex(dim=int(header["dim"]), encoder_id=str(header["encoder_id"]))
    for line_no, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
            system = CodeSystem(row["system"])
            code = str(row["code"])
            vector = np.asarray(row["vector"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise StoreParseError(line_no, f"bad vector line: {exc}") from exc
        try:
            index.add(system, code, vector)
        except (DimensionMismatchError, ValueError) as exc:
            raise StoreParseError(line_no, str(exc)) from exc
    return index


def semantic_search(
    index: VectorIndex,
    system: CodeSystem,
    query_vector: np.ndarray,
    k: int = 16,
) -> list[tuple[CodeSystem, str, float]]:
    """Top-k by cosine over an exhaustive scan of the system's vectors.

    Ties break by ascending code so results are stable.
    """
    query_vector = np.asarray(query_vector, dtype=np.float64)
    if query_vector.shape != (index.dim,):
        raise DimensionMismatchError(f"query dim {query_vector.shape} != index dim {index.dim}")
    scored = [
        (code, float(np.dot(vec, query_vector)))
        for code, vec in index.items_for(system)
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [(system, code, score) for code, score in scored[:k]]
