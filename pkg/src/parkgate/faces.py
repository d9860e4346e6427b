"""Driver verification by embedding comparison against the enrolled employee gallery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Embedding",
    "VerifyDecision",
    "IdentifyResult",
    "Gallery",
    "DEFAULT_THRESHOLD",
    "DEFAULT_DIM",
    "cosine_distance",
    "verify",
    "identify",
    "enroll",
    "load_embedding_file",
    "format_embedding",
    "parse_embedding",
]

DEFAULT_THRESHOLD = 0.4
DEFAULT_DIM = 128


@dataclass(frozen=True)
class Embedding:
    values: tuple[float, ...]
    source: str = "capture"  # enrollment | capture

    def __post_init__(self):
        if self.source not in ("enrollment", "capture"):
            raise ValueError(f"bad embedding source {self.source!r}")
        if not self.values:
            raise ValueError("empty embedding")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding has non-finite values")
        if all(v == 0.0 for v in self.values):
            raise ValueError("embedding norm must be positive")

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class VerifyDecision:
    distance: float
    verified: bool
    threshold: float


@dataclass(frozen=True)
class IdentifyResult:
    employee_id: str | None
    distance: float

    @property
    def matched(self) -> bool:
        return self.employee_id is not None


def cosine_distance(a: Embedding, b: Embedding) -> float:
    """1 - cosine similarity; 0 for parallel vectors, 2 for opposite ones."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    va, vb = np.asarray(a.values), np.asarray(b.values)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        raise ValueError("zero-norm embedding")
    return 1.0 - float(np.dot(va, vb)) / denom


def verify(query: Embedding, enrolled: Embedding,
           threshold: float = DEFAULT_THRESHOLD) -> VerifyDecision:
    distance = cosine_distance(query, enrolled)
    return VerifyDecision(distance=distance, verified=distance <= threshold,
                          threshold=threshold)


@dataclass
class Gallery:
    """Enrolled embeddings per employee; identification takes the min distance
    over an employee's enrollments."""

    dim: int = DEFAULT_DIM
    entries: dict[str, list[Embedding]] = field(default_factory=dict)

    def add(self, employee_id: str, embedding: Embedding):
        if embedding.dim != self.dim:
            raise ValueError(f"embedding dim {embedding.dim} != gallery dim {self.dim}")
        self.entries.setdefault(employee_id, []).append(embedding)


def identify(query: Embedding, gallery: Gallery,
             threshold: float = DEFAULT_THRESHOLD) -> IdentifyResult:
    """Nearest enrolled employee by cosine distance; ties go to the lower id."""
    best_id, best_distance = None, math.inf
    for employee_id in sorted(gallery.entries):
        for enrolled in gallery.entries[employee_id]:
            d = cosine_distance(query, enrolled)
            if d < best_distance - 1e-12:
                best_id, best_distance = employee_id, d
    if best_id is None or best_distance > threshold:
        return IdentifyResult(employee_id=None,
                              distance=best_distance if best_id else math.inf)
    return IdentifyResult(employee_id=best_id, distance=best_distance)


def enroll(employee_id: str, embedding: Embedding, store, dim: int | None = None) -> None:
    """Append an enrollment embedding to an existing employee document."""
    doc = store.get("employees", employee_id)
    if doc is None:
        raise KeyError(f"unknown employee {employee_id!r}")
    if dim is not None and embedding.dim != dim:
        raise ValueError(f"embedding dim {embedding.dim} != configured {dim}")
    existing = list(doc.fields.get("embeddings", []))
    existing.append(format_embedding(embedding))
    fields = dict(doc.fields)
    fields["embeddings"] = existing
    store.put("employees", employee_id, fields)


def gallery_from_store(store, dim: int = DEFAULT_DIM) -> Gallery:
    gallery = Gallery(dim=dim)
    for employee_id in store.ids("employees"):
        doc = store.get("employees", employee_id)
        for encoded in doc.fields.get("embeddings", []):
            gallery.add(employee_id, parse_embedding(encoded, source="enrollment"))
    return gallery


# -- fixture files: one real per line ----------------------------------------

def load_embedding_file(path: Path, expected_dim: int | None = None,
                        source: str = "capture") -> Embedding:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    emb = Embedding(tuple(values), source=source)
    if expected_dim is not None and emb.dim != expected_dim:
        raise ValueError(f"{path}: dimension {emb.dim}, expected {expected_dim}")
    return emb


def format_embedding(embedding: Embedding) -> str:
    return " ".join(repr(v) for v in embedding.values)


def parse_embedding(encoded: str, source: str = "capture") -> Embedding:
    return Embedding(tuple(float(v) for v in encoded.split()), source=source)
