"""Predicate extraction and chat-model selection."""

from __future__ import annotations

import json

import pytest
from conftest import fixture_lines

from convsmith import prompts
from convsmith.errors import ContractViolation, NotFoundError, SelectorError, SelectorParseError
from convsmith.gateway import GatewayError, ScriptedGateway
from convsmith.predicates import (
    SELECTOR_BATCH_LIMIT,
    PredicateRow,
    TypePredicateTable,
    build_selector_prompt,
    extract_predicates,
    load_selected,
    parse_selector_response,
    save_selected,
    select_predicates,
)


def rows(n, prefix="P"):
    return [PredicateRow(id=f"{prefix}{i}", label=f"prop {i}") for i in range(1, n + 1)]


def test_extract_includes_spouse_for_actors(store):
    table = extract_predicates(store, "Q33999")
    ids = {row.id for row in table.rows}
    assert "P26" in ids  # spouse
    assert "P569" in ids


def test_extract_unknown_type_is_error(store):
    with pytest.raises(NotFoundError):
        extract_predicates(store, "Q424242")


def test_extract_equals_brute_force_union(store):
    # oracle: set union over the raw fixture claims of film-typed entities
    expected = set()
    for line in fixture_lines():
        payload = json.loads(line)
        if "Q11424" not in payload["types"]:
            continue
        for claim in payload["claims"]:
            expected.add((claim["property"], None))
            for qualifier in claim["qualifiers"]:
                expected.add((claim["property"], qualifier["property"]))
    table = extract_predicates(store, "Q11424")
    assert {(r.id, r.qualifier_id) for r in table.rows} == expected


def test_extract_emits_qualifier_rows(store):
    table = extract_predicates(store, "Q11424")
    keys = {(r.id, r.qualifier_id) for r in table.rows}
    assert ("P161", None) in keys
    assert ("P161", "P453") in keys


def test_rows_sorted_for_deterministic_batching(store):
    table = extract_predicates(store, "Q5")
    keys = [(r.id, r.qualifier_id or "") for r in table.rows]
    assert keys == sorted(keys)


def test_selector_prompt_shape():
    request = build_selector_prompt("singer", [PredicateRow(id="P412", label="voice type")])
    assert request.system == prompts.SELECTOR_SYSTEM
    assert "Type: singer" in request.user
    assert "('P412', 'voice type')" in request.user


def test_selector_prompt_renders_qualifier_rows():
    row = PredicateRow(id="P161", label="cast member", qualifier_id="P453", qualifier_label="character role")
    request = build_selector_prompt("film", [row])
    assert "('P161', 'cast member', 'P453', 'character role')" in request.user


def test_selector_prompt_batch_bounds():
    with pytest.raises(ContractViolation):
        build_selector_prompt("singer", [])
    with pytest.raises(ContractViolation):
        build_selector_prompt("singer", rows(51))
    assert build_selector_prompt("singer", rows(50))  # boundary accepted


def test_parse_tuple_list():
    batch = [PredicateRow(id="P412", label="voice type")]
    assert parse_selector_response("[('P412', 'voice type')]", batch) == ["P412"]


def test_parse_empty_list():
    assert parse_selector_response("[]", rows(3)) == []


def test_parse_drops_hallucinated_ids():
    batch = [PredicateRow(id="P412", label="voice type")]
    assert parse_selector_response("['P412','P999']", batch) == ["P412"]


def test_parse_preserves_response_order():
    batch = rows(5)
    assert parse_selector_response("['P3', 'P1', 'P5']", batch) == ["P3", "P1", "P5"]


def test_parse_tolerates_prose_and_falls_back_to_tokens():
    batch = rows(3)
    text = "Sure! The useful ones are ['P1', 'P2'] as requested."
    assert parse_selector_response(text, batch) == ["P1", "P2"]


def test_parse_without_brackets_is_error():
    with pytest.raises(SelectorParseError):
        parse_selector_response("no list here", rows(2))


def test_parse_unquoted_tokens_is_error_not_empty():
    # an unquoted list is nonconforming; erroring lets the retry path engage
    with pytest.raises(SelectorParseError):
        parse_selector_response("[P1, P2]", rows(2))


def test_select_batches_of_fifty():
    table = TypePredicateTable(type_id="T", type_label="thing", rows=rows(120))
    gateway = ScriptedGateway(fallback=lambda req: "[]")
    select_predicates(gateway, table)
    assert len(gateway.requests) == 3
    sizes = [req.user.count("('P") for req in gateway.requests]
    assert sizes == [50, 50, 20]
    assert all(size <= SELECTOR_BATCH_LIMIT for size in sizes)


def test_select_single_row_table():
    table = TypePredicateTable(type_id="T", type_label="thing", rows=rows(1))
    gateway = ScriptedGateway(fallback=lambda req: "['P1']")
    selected = select_predicates(gateway, table)
    assert [r.id for r in selected.rows] == ["P1"]


def test_select_union_matches_hand_merge():
    table = TypePredicateTable(type_id="T", type_label="thing", rows=rows(120))
    replies = iter(["['P1', 'P7']", "['P60', 'P51']", "['P101', 'P1']"])
    gateway = ScriptedGateway(fallback=lambda req: next(replies))
    selected = select_predicates(gateway, table)
    # hand merge: batch order, first occurrence wins, duplicate P1 dropped
    assert [r.id for r in selected.rows] == ["P1", "P7", "P60", "P51", "P101"]


def test_selected_id_activates_plain_and_qualifier_rows():
    table = TypePredicateTable(
        type_id="T",
        type_label="film",
        rows=[
            PredicateRow(id="P161", label="cast member"),
            PredicateRow(id="P161", label="cast member", qualifier_id="P453", qualifier_label="character role"),
        ],
    )
    gateway = ScriptedGateway(fallback=lambda req: "['P161']")
    selected = select_predicates(gateway, table)
    assert [(r.id, r.qualifier_id) for r in selected.rows] == [("P161", None), ("P161", "P453")]


def test_selection_is_subset_of_table(store):
    table = extract_predicates(store, "Q5")
    gateway = ScriptedGateway(fallback=lambda req: "['P569', 'P26', 'P999']")
    selected = select_predicates(gateway, table)
    table_keys = {r.key for r in table.rows}
    assert all(r.key in table_keys for r in selected.rows)


def test_select_empty_table_rejected():
    table = TypePredicateTable(type_id="T", type_label="thing", rows=[])
    with pytest.raises(ContractViolation):
        select_predicates(ScriptedGateway(), table)


def test_gateway_failure_reports_completed_batches():
    table = TypePredicateTable(type_id="T", type_label="thing", rows=rows(120))
    calls = {"n": 0}

    def flaky(request):
        calls["n"] += 1
        if calls["n"] > 1:
            raise GatewayError("boom")
        return "['P1']"

    gateway = ScriptedGateway(fallback=flaky)
    with pytest.raises(SelectorError) as excinfo:
        select_predicates(gateway, table, parse_retries=0)
    assert excinfo.value.completed_batches == 1


def test_parse_retry_recovers_once():
    table = TypePredicateTable(type_id="T", type_label="thing", rows=rows(2))
    replies = iter(["garbage with no list", "['P2']"])
    gateway = ScriptedGateway(fallback=lambda req: next(replies))
    selected = select_predicates(gateway, table, parse_retries=1)
    assert [r.id for r in selected.rows] == ["P2"]


def test_selected_file_round_trip(tmp_path, store):
    table = extract_predicates(store, "Q11424")
    gateway = ScriptedGateway(fallback=lambda req: "['P161', 'P577']")
    selected = select_predicates(gateway, table)
    path = tmp_path / "selected.jsonl"
    save_selected([selected], path)
    payload = json.loads(path.read_text().splitlines()[0])
    assert set(payload) == {"type_id", "type_label", "predicates"}
    assert {"id": "P161", "label": "cast member", "qualifier_id": "P453"} in payload["predicates"]
    loaded = load_selected(path, store)
    assert [(r.id, r.qualifier_id) for r in loaded[0].rows] == [
        (r.id, r.qualifier_id) for r in selected.rows
    ]
    assert loaded[0].rows[1].qualifier_label == "character role"


def test_selection_idempotent_under_replay(store):
    table = extract_predicates(store, "Q5")
    gateway = ScriptedGateway(fallback=lambda req: "['P569', 'P19']")
    first = select_predicates(gateway, table)
    second = select_predicates(gateway, table)
    assert [r.key for r in first.rows] == [r.key for r in second.rows]
    assert first.provenance["request_hashes"] == second.provenance["request_hashes"]
