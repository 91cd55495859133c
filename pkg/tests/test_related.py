"""Embedding index, inner-product lookup, and popularity gating."""

from __future__ import annotations

import random

import pytest

from convsmith.errors import EmbeddingFormatError, NotFoundError
from convsmith.kgstore import EntityRecord, KgStore, Statement, Value
from convsmith.related import (
    EmbeddingIndex,
    build_ontology_index,
    candidate_pool,
    export_embeddings,
    is_popular,
    load_embeddings,
    most_similar,
    related_pairs,
)


def index_from(rows: dict[str, list[float]]) -> EmbeddingIndex:
    lines = [f"{k}\t{' '.join(str(x) for x in v)}" for k, v in rows.items()]
    return load_embeddings(lines)


def test_load_three_rows_dim_four():
    index = index_from({"Q1": [1, 0, 0, 0], "Q2": [0, 1, 0, 0], "Q3": [0, 0, 1, 0]})
    assert index.dimension == 4
    assert len(index.vectors) == 3


def test_dimension_mismatch_names_row():
    with pytest.raises(EmbeddingFormatError, match="row 2"):
        index_from({"Q1": [1, 0, 0, 0], "Q2": [0, 1, 0, 0, 9]})


def test_non_finite_component_rejected():
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(["Q1\t1.0 nan"])


def test_duplicate_id_last_wins():
    index = load_embeddings(["Q1\t1 0", "Q1\t0 1"])
    assert list(index.vectors["Q1"]) == [0.0, 1.0]


def test_export_round_trip(tmp_path):
    index = index_from({"Q1": [0.25, -1.5], "Q2": [3.0, 0.125]})
    path = tmp_path / "vectors.tsv"
    export_embeddings(index, path)
    reloaded = load_embeddings(path)
    assert reloaded.dimension == index.dimension
    for key, vector in index.vectors.items():
        assert list(reloaded.vectors[key]) == list(vector)


def test_most_similar_orthogonal():
    index = index_from({"X": [1, 0], "A": [1, 0], "B": [0, 1]})
    pair = most_similar(index, "X", ["A", "B"])
    assert pair.related == "A"
    assert pair.score == 1.0


def test_most_similar_empty_candidates():
    index = index_from({"X": [1, 0]})
    assert most_similar(index, "X", []) is None


def test_most_similar_excludes_anchor():
    index = index_from({"X": [1, 0], "B": [0.5, 0]})
    pair = most_similar(index, "X", ["X", "B"])
    assert pair.related == "B"


def test_missing_anchor_is_not_found():
    index = index_from({"A": [1, 0]})
    with pytest.raises(NotFoundError):
        most_similar(index, "Zed", ["A"])


def test_tie_breaks_to_smallest_id():
    index = index_from({"X": [1, 1], "Q9": [2, 2], "Q10": [2, 2]})
    pair = most_similar(index, "X", ["Q9", "Q10"])
    assert pair.related == "Q10"  # lexicographic: "Q10" < "Q9"


def test_most_similar_equals_exhaustive_scan():
    rng = random.Random(20240817)
    for trial in range(25):
        n = rng.randint(2, 50)
        dim = rng.randint(2, 8)
        ids = [f"Q{i}" for i in range(n)]
        vectors = {i: [rng.uniform(-2, 2) for _ in range(dim)] for i in ids}
        index = index_from(vectors)
        anchor = ids[0]
        pair = most_similar(index, anchor, ids)
        # brute-force oracle with the same tie rule
        best = None
        for candidate in ids[1:]:
            score = sum(a * b for a, b in zip(vectors[anchor], vectors[candidate]))
            if best is None or score > best[1] or (score == best[1] and candidate < best[0]):
                best = (candidate, score)
        assert pair.related == best[0]
        assert pair.score == pytest.approx(best[1], abs=1e-12)


def make_person(entity_id, statement_count, types=("Q5",)):
    statements = tuple(
        Statement(property=f"P{i}", property_label=f"p{i}", value=Value.text_value(f"v{i}"))
        for i in range(statement_count)
    )
    return EntityRecord(id=entity_id, label=entity_id, types=tuple(types), statements=statements)


def test_is_popular_threshold():
    store = KgStore([make_person("Q1", 12), make_person("Q2", 9), make_person("Q3", 5, types=("Q515",))])
    assert is_popular(store, "Q1", 10) is True
    assert is_popular(store, "Q2", 10) is False
    assert is_popular(store, "Q3", 0) is False  # type gate beats any threshold


def test_is_popular_zero_threshold_boundary():
    store = KgStore([make_person("Q1", 0)])
    assert is_popular(store, "Q1", 0) is True


def test_is_popular_unknown_entity():
    store = KgStore([])
    with pytest.raises(NotFoundError):
        is_popular(store, "Q1", 1)


def test_ontology_index_spouses_most_similar(store):
    index = build_ontology_index(store)
    assert index.dimension > 0
    pool = candidate_pool(store, "Q2001")
    pair = most_similar(index, "Q2001", pool)
    assert pair.related == "Q2002"  # the only other actor sharing the spouse predicate


def test_related_pairs_respects_popularity_and_type(store):
    index = build_ontology_index(store)
    pairs = related_pairs(store, index, min_statements=5)
    anchors = {p.anchor for p in pairs}
    assert anchors  # every actor/singer has >= 5 statements? actors with spouse do
    for pair in pairs:
        assert pair.anchor != pair.related
        assert "Q5" in store.get(pair.anchor).types
