"""Related-entity lookup over dense KG embeddings (inner-product similarity).

Embeddings are an input artifact. When no vector file is supplied, a sparse
one-hot "ontology" index built from type and predicate ids stands in so the
pipeline can run self-contained; it is a fallback, not a claim of equivalence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmbeddingFormatError, NotFoundError
from .kgstore import KgStore
from .util import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_POPULARITY_THRESHOLD = 10
DEFAULT_PERSON_TYPE = "Q5"


@dataclass
class EmbeddingIndex:
    dimension: int
    vectors: dict[str, np.ndarray]

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.vectors


@dataclass(frozen=True)
class RelatedPair:
    anchor: str
    related: str
    score: float


def load_embeddings(source: Path | str | Iterable[str]) -> EmbeddingIndex:
    """Parse the vector file: ``<entity_id>\\t<v1> <v2> ... <vd>`` per line.

    All rows must share one dimension and be finite; duplicate ids keep the
    last row with a warning.
    """
    if isinstance(source, (str, Path)):
        lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = source
    vectors: dict[str, np.ndarray] = {}
    dimension: int | None = None
    for row_no, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        try:
            entity_id, payload = line.split("\t", 1)
            vector = np.array([float(x) for x in payload.split()], dtype=np.float64)
        except ValueError as exc:
            raise EmbeddingFormatError(f"row {row_no}: cannot parse vector ({exc})") from exc
        if vector.size == 0:
            raise EmbeddingFormatError(f"row {row_no}: empty vector")
        if not np.all(np.isfinite(vector)):
            raise EmbeddingFormatError(f"row {row_no}: non-finite component")
        if dimension is None:
            dimension = int(vector.size)
        elif vector.size != dimension:
            raise EmbeddingFormatError(
                f"row {row_no}: dimension {vector.size} != expected {dimension}"
            )
        if entity_id in vectors:
            logger.warning("duplicate embedding for %s; keeping the last row", entity_id)
        vectors[entity_id] = vector
    return EmbeddingIndex(dimension=dimension or 0, vectors=vectors)


def export_embeddings(index: EmbeddingIndex, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entity_id, vector in index.vectors.items():
            fh.write(entity_id)
            fh.write("\t")
            fh.write(" ".join(repr(float(x)) for x in vector))
            fh.write("\n")


def most_similar(
    index: EmbeddingIndex, anchor: str, candidates: Iterable[str]
) -> RelatedPair | None:
    """Argmax of the inner product with the anchor vector over the candidates.

    The anchor itself is excluded; ties break to the lexicographically
    smallest entity id; returns None when no candidate has a vector.
    """
    anchor_vector = index.vectors.get(anchor)
    if anchor_vector is None:
        raise NotFoundError(f"no embedding for anchor {anchor}")
    best_id: str | None = None
    best_score = 0.0
    for candidate in candidates:
        if candidate == anchor:
            continue
        vector = index.vectors.get(candidate)
        if vector is None:
            continue
        score = float(np.dot(anchor_vector, vector))
        if best_id is None or score > best_score or (score == best_score and candidate < best_id):
            best_id = candidate
            best_score = score
    if best_id is None:
        return None
    return RelatedPair(anchor=anchor, related=best_id, score=best_score)


def is_popular(
    store: KgStore,
    entity_id: str,
    threshold: int = DEFAULT_POPULARITY_THRESHOLD,
    *,
    person_type: str = DEFAULT_PERSON_TYPE,
) -> bool:
    """Popularity proxy: statement count >= threshold, gated on the Person type."""
    record = store.get(entity_id)
    if person_type not in record.types:
        return False
    return len(record.statements) >= threshold


def build_ontology_index(store: KgStore) -> EmbeddingIndex:
    """Fallback index: bag of type ids and predicate ids, one-hot with counts."""
    vocab: dict[str, int] = {}
    for record in store.entities():
        for type_id in record.types:
            vocab.setdefault(f"t:{type_id}", len(vocab))
        for stmt in record.statements:
            vocab.setdefault(f"p:{stmt.property}", len(vocab))
    dimension = len(vocab)
    vectors: dict[str, np.ndarray] = {}
    for record in store.entities():
        vector = np.zeros(dimension, dtype=np.float64)
        for type_id in record.types:
            vector[vocab[f"t:{type_id}"]] += 1.0
        for stmt in record.statements:
            vector[vocab[f"p:{stmt.property}"]] += 1.0
        vectors[record.id] = vector
    return EmbeddingIndex(dimension=dimension, vectors=vectors)


def candidate_pool(store: KgStore, anchor: str, *, same_type_only: bool = True) -> list[str]:
    if not same_type_only:
        return store.entity_ids()
    record = store.get(anchor)
    pool: list[str] = []
    seen: set[str] = set()
    for type_id in record.types:
        try:
            members = store.entities_of_type(type_id)
        except NotFoundError:
            continue
        for member in members:
            if member not in seen:
                seen.add(member)
                pool.append(member)
    return pool


def related_pairs(
    store: KgStore,
    index: EmbeddingIndex,
    *,
    min_statements: int = DEFAULT_POPULARITY_THRESHOLD,
    person_type: str = DEFAULT_PERSON_TYPE,
    same_type_only: bool = True,
) -> list[RelatedPair]:
    """The single most-similar related entity for every popular Person anchor."""
    pairs: list[RelatedPair] = []
    for entity_id in store.entity_ids():
        if not is_popular(store, entity_id, min_statements, person_type=person_type):
            continue
        if entity_id not in index:
            continue
        pool = candidate_pool(store, entity_id, same_type_only=same_type_only)
        pair = most_similar(index, entity_id, pool)
        if pair is not None:
            pairs.append(pair)
    return pairs


def save_related(pairs: Iterable[RelatedPair], path: Path | str) -> None:
    write_jsonl(
        path,
        ({"anchor": p.anchor, "related": p.related, "score": p.score} for p in pairs),
    )


def load_related(path: Path | str) -> dict[str, RelatedPair]:
    out: dict[str, RelatedPair] = {}
    for payload in read_jsonl(path):
        pair = RelatedPair(
            anchor=payload["anchor"], related=payload["related"], score=float(payload["score"])
        )
        out[pair.anchor] = pair
    return out
