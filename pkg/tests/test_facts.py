"""Fact materialization: simple/complex classification and qualifier flattening."""

from __future__ import annotations

import json

import pytest
from conftest import fixture_lines

from convsmith.errors import NotFoundError
from convsmith.facts import (
    COMPLEX,
    QUALIFIED,
    SIMPLE,
    extract_all,
    extract_facts,
    extract_qualified_facts,
    fact_pools,
    load_facts,
    save_facts,
)
from convsmith.predicates import PredicateRow, SelectedPredicates


def selection(type_id, *rows):
    return SelectedPredicates(type_id=type_id, type_label="", rows=list(rows))


def test_single_spouse_is_simple(store):
    sel = selection("Q5", PredicateRow(id="P26", label="spouse"))
    facts = extract_facts(store, "Q2001", sel)
    assert len(facts) == 1
    assert facts[0].kind == SIMPLE
    assert len(facts[0].objects) == 1
    assert store.render_value(facts[0].objects[0]) == "Tomas Reiner"


def test_three_official_languages_are_complex(store):
    sel = selection("Q6256", PredicateRow(id="P37", label="official language"))
    facts = extract_facts(store, "Q4001", sel)
    assert len(facts) == 1
    assert facts[0].kind == COMPLEX
    assert [store.render_value(v) for v in facts[0].objects] == ["English", "French", "German"]


def test_absent_predicate_is_skipped(store):
    sel = selection("Q5", PredicateRow(id="P26", label="spouse"))
    assert extract_facts(store, "Q2003", sel) == []  # Ada Corvin has no spouse


def test_unknown_entity_not_found(store):
    sel = selection("Q5", PredicateRow(id="P26", label="spouse"))
    with pytest.raises(NotFoundError):
        extract_facts(store, "Q31337", sel)


def test_ceo_with_start_date_flattens_to_qualified(store):
    sel = selection(
        "Q4830453",
        PredicateRow(id="P169", label="chief executive officer", qualifier_id="P580", qualifier_label="start time"),
    )
    facts = extract_qualified_facts(store, "Q6001", sel)
    assert len(facts) == 1
    fact = facts[0]
    assert fact.kind == QUALIFIED
    assert fact.qualifier_predicate == "P580"
    assert store.render_value(fact.qualifier_value) == "2015"
    assert store.render_value(fact.objects[0]) == "Omar Veld"


def test_statement_without_qualifier_falls_back_to_simple(store):
    # Salt and Iron's cast statement has no character-role qualifier
    sel = selection(
        "Q11424",
        PredicateRow(id="P161", label="cast member", qualifier_id="P453", qualifier_label="character role"),
    )
    facts = extract_qualified_facts(store, "Q3003", sel)
    assert [f.kind for f in facts] == [SIMPLE]
    assert store.render_value(facts[0].objects[0]) == "Nina Falk"


def test_two_qualified_cast_statements_match_hand_enumeration(store):
    sel = selection(
        "Q11424",
        PredicateRow(id="P161", label="cast member", qualifier_id="P453", qualifier_label="character role"),
    )
    facts = extract_qualified_facts(store, "Q3001", sel)
    flattened = {
        (store.render_value(f.objects[0]), store.render_value(f.qualifier_value)) for f in facts
    }
    assert flattened == {("Mara Lindel", "Captain Vey"), ("Tomas Reiner", "Dr. Holt")}
    assert all(f.kind == QUALIFIED for f in facts)


def brute_force_facts(entity_payload, selected_rows):
    """Independent oracle: group raw claims by property / flatten qualifiers."""
    expected = []
    for row_id, qualifier_id in selected_rows:
        matching = [c for c in entity_payload["claims"] if c["property"] == row_id]
        if qualifier_id is None:
            values = [json.dumps(c["value"], sort_keys=True) for c in matching]
            if values:
                expected.append(("simple" if len(values) == 1 else "complex", tuple(values), None))
            continue
        leftovers = []
        for c in matching:
            q_values = [
                json.dumps(q["value"], sort_keys=True)
                for q in c["qualifiers"]
                if q["property"] == qualifier_id
            ]
            if not q_values:
                leftovers.append(json.dumps(c["value"], sort_keys=True))
            for qv in q_values:
                expected.append(("qualified", (json.dumps(c["value"], sort_keys=True),), qv))
        if leftovers:
            expected.append(
                ("simple" if len(leftovers) == 1 else "complex", tuple(leftovers), None)
            )
    return expected


def test_extraction_equals_brute_force_group_by(store):
    payloads = {json.loads(line)["id"]: json.loads(line) for line in fixture_lines()}
    cases = [
        ("Q4001", [("P37", None), ("P1082", "P585"), ("P31", None)]),
        ("Q3001", [("P161", None), ("P161", "P453"), ("P577", None)]),
        ("Q6002", [("P169", "P580")]),
        ("Q2001", [("P26", None), ("P569", None), ("P19", None)]),
    ]
    for entity_id, row_keys in cases:
        rows = [
            PredicateRow(id=i, label="", qualifier_id=q, qualifier_label="" if q else None)
            for i, q in row_keys
        ]
        sel = selection("T", *rows)
        observed = [
            (
                f.kind,
                tuple(json.dumps(v.to_json(), sort_keys=True) for v in f.objects),
                json.dumps(f.qualifier_value.to_json(), sort_keys=True) if f.qualifier_value else None,
            )
            for f in extract_all(store, entity_id, sel)
        ]
        assert observed == brute_force_facts(payloads[entity_id], row_keys)


def test_closure_every_fact_predicate_selected(store):
    sel = selection(
        "Q6256",
        PredicateRow(id="P37", label="official language"),
        PredicateRow(id="P1082", label="population", qualifier_id="P585", qualifier_label="point in time"),
    )
    facts = extract_all(store, "Q4001", sel)
    assert {f.predicate for f in facts} <= {"P37", "P1082"}


def test_partition_no_value_in_two_facts_of_same_slot(store):
    sel = selection(
        "Q6256",
        PredicateRow(id="P1082", label="population", qualifier_id="P585", qualifier_label="point in time"),
    )
    facts = extract_all(store, "Q4001", sel)
    slots = [
        (f.predicate, f.qualifier_predicate, json.dumps(f.qualifier_value.to_json()) if f.qualifier_value else None, json.dumps(f.objects[0].to_json()))
        for f in facts
    ]
    assert len(slots) == len(set(slots))


def test_partition_plain_plus_qualified_rows_never_duplicate(store):
    # Q4002's population has no point-in-time qualifier: the qualified row's
    # fallback must not re-emit the plain row's fact
    sel = selection(
        "Q6256",
        PredicateRow(id="P1082", label="population"),
        PredicateRow(id="P1082", label="population", qualifier_id="P585", qualifier_label="point in time"),
    )
    facts = extract_all(store, "Q4002", sel)
    assert len(facts) == 1
    assert facts[0].kind == SIMPLE
    ids = [f.fact_id for f in extract_all(store, "Q4001", sel)]
    assert len(ids) == len(set(ids))


def test_fact_ids_stable_and_distinct(store):
    sel = selection(
        "Q6256",
        PredicateRow(id="P1082", label="population", qualifier_id="P585", qualifier_label="point in time"),
    )
    first = extract_all(store, "Q4001", sel)
    second = extract_all(store, "Q4001", sel)
    assert [f.fact_id for f in first] == [f.fact_id for f in second]
    assert len({f.fact_id for f in first}) == len(first)


def test_fact_file_round_trip(tmp_path, store):
    sel = selection(
        "Q11424",
        PredicateRow(id="P161", label="cast member", qualifier_id="P453", qualifier_label="character role"),
        PredicateRow(id="P577", label="publication date"),
    )
    facts = extract_all(store, "Q3001", sel)
    path = tmp_path / "facts.jsonl"
    save_facts(store, facts, path)
    first_row = json.loads(path.read_text().splitlines()[0])
    assert set(first_row) <= {"subject", "predicate", "kind", "objects", "qualifier"}
    assert {"rendered", "raw"} == set(first_row["objects"][0])
    loaded = load_facts(path, store)
    assert [f.fact_id for f in loaded] == [f.fact_id for f in facts]
    assert loaded[0].predicate_label == "cast member"


def test_fact_pools_assign_first_matching_selection(store):
    selections = [
        SelectedPredicates(type_id="Q5", type_label="human", rows=[PredicateRow(id="P569", label="date of birth")]),
        SelectedPredicates(type_id="Q33999", type_label="actor", rows=[PredicateRow(id="P26", label="spouse")]),
    ]
    pools = fact_pools(store, selections)
    # every human lands under the Q5 selection, never the actor one
    assert all(sel.type_id == "Q5" for sel, _ in pools.values())
    assert {f.predicate for _, facts in pools.values() for f in facts} == {"P569"}
