"""Store ingest, filtering, rendering, and statistics."""

from __future__ import annotations

import json

import pytest
from conftest import fixture_lines

from convsmith.errors import IngestSourceError, NotFoundError
from convsmith.kgstore import (
    DatasetStats,
    IngestFilter,
    KgStore,
    Value,
    format_time,
    ingest_dump,
    stats,
    types_of,
    write_reject_log,
)


def wikidata_line(entity_id, labels, claims=None, aliases=None, entity_type="item", rank=None):
    record = {"type": entity_type, "id": entity_id, "labels": labels, "claims": claims or {}}
    if aliases:
        record["aliases"] = aliases
    return json.dumps(record)


def entity_snak(prop, target):
    return {
        "mainsnak": {
            "snaktype": "value",
            "property": prop,
            "datavalue": {"type": "wikibase-entityid", "value": {"entity-type": "item", "id": target}},
        },
        "rank": "normal",
    }


def test_german_only_entity_dropped():
    lines = [
        wikidata_line("Q1", {"de": {"language": "de", "value": "Haus"}}),
        wikidata_line("Q2", {"en": {"language": "en", "value": "House"}}),
    ]
    store = ingest_dump(lines).store
    assert "Q1" not in store
    assert "Q2" in store


def test_empty_stream_gives_empty_store():
    result = ingest_dump([])
    assert len(result.store) == 0
    assert result.store.stats() == DatasetStats(0, 0, 0, 0)
    assert result.rejects == []


def test_five_line_fixture_counts():
    # three English entities carrying 2, 1, 0 statements; one German; one malformed
    lines = [
        wikidata_line(
            "Q1",
            {"en": {"language": "en", "value": "One"}},
            claims={"P31": [entity_snak("P31", "Q5")], "P19": [entity_snak("P19", "Q60")]},
        ),
        wikidata_line("Q2", {"en": {"language": "en", "value": "Two"}}, claims={"P31": [entity_snak("P31", "Q5")]}),
        wikidata_line("Q3", {"en": {"language": "en", "value": "Three"}}),
        wikidata_line("Q4", {"de": {"language": "de", "value": "Vier"}}),
        "{ this is not json",
    ]
    result = ingest_dump(lines)
    assert result.store.stats().entity_count == 3
    assert result.store.stats().fact_count == 3
    assert result.rejects == [(5, "invalid JSON: Expecting property name enclosed in double quotes")]


def test_reject_log_format(tmp_path):
    result = ingest_dump(["not json at all", wikidata_line("Q1", {"en": {"language": "en", "value": "x"}})])
    log = tmp_path / "rejects.tsv"
    write_reject_log(result.rejects, log)
    line_no, reason = log.read_text().strip().split("\t")
    assert line_no == "1"
    assert "JSON" in reason


def test_unreadable_source_is_fatal(tmp_path):
    with pytest.raises(IngestSourceError):
        ingest_dump(tmp_path / "does-not-exist.jsonl")


def test_wikidata_array_framing_and_trailing_commas():
    lines = ["[", wikidata_line("Q1", {"en": {"language": "en", "value": "One"}}) + ",", "]"]
    result = ingest_dump(lines)
    assert len(result.store) == 1
    assert result.rejects == []


def test_types_union_of_instance_of_and_occupation(store):
    assert types_of(store, "Q2001") == {"Q5", "Q33999"}


def test_types_of_unknown_entity(store):
    with pytest.raises(NotFoundError):
        types_of(store, "Q999999")


def test_types_of_multi_occupation():
    lines = [
        wikidata_line(
            "Q1",
            {"en": {"language": "en", "value": "Multi"}},
            claims={
                "P31": [entity_snak("P31", "Q5")],
                "P106": [entity_snak("P106", "Q33999"), entity_snak("P106", "Q177220")],
            },
        )
    ]
    store = ingest_dump(lines).store
    assert types_of(store, "Q1") == {"Q5", "Q33999", "Q177220"}


def test_entity_with_no_type_statements_has_empty_types(store):
    assert types_of(store, "Q1860") == set()


def test_stats_equal_brute_force_rescan(store):
    # independent oracle: recount from the raw fixture JSON lines
    entities = 0
    facts = 0
    type_ids = set()
    predicates = set()
    for line in fixture_lines():
        payload = json.loads(line)
        entities += 1
        facts += len(payload["claims"])
        type_ids.update(payload["types"])
        predicates.update(c["property"] for c in payload["claims"])
    observed = stats(store)
    assert observed == DatasetStats(entities, facts, len(type_ids), len(predicates))


def test_ingest_determinism_byte_identical_export(tmp_path):
    first = ingest_dump(fixture_lines()).store
    second = ingest_dump(fixture_lines()).store
    first.save(tmp_path / "a")
    second.save(tmp_path / "b")
    assert (tmp_path / "a" / "entities.jsonl").read_bytes() == (tmp_path / "b" / "entities.jsonl").read_bytes()


def test_canonical_round_trip_bit_exact(tmp_path):
    store = ingest_dump(fixture_lines()).store
    store.save(tmp_path / "first")
    exported = (tmp_path / "first" / "entities.jsonl").read_bytes()
    reloaded = ingest_dump(tmp_path / "first" / "entities.jsonl").store
    reloaded.save(tmp_path / "second")
    assert (tmp_path / "second" / "entities.jsonl").read_bytes() == exported


def test_streaming_touches_each_line_exactly_once():
    seen = []

    def counting_source():
        for line in fixture_lines():
            seen.append(1)
            yield line

    result = ingest_dump(counting_source())
    assert len(seen) == len(fixture_lines())
    assert result.lines_read == len(seen)


def test_filter_soundness_every_stored_entity_labeled(store):
    assert all(record.label for record in store.entities())


def test_type_allowlist_gate():
    filt = IngestFilter(type_allowlist=frozenset({"Q515"}))
    store = ingest_dump(fixture_lines(), filt).store
    assert set(store.entity_ids()) == {"Q5001", "Q5002", "Q5003"}


def test_entity_allowlist_bypasses_type_gate():
    filt = IngestFilter(type_allowlist=frozenset({"Q515"}), entity_allowlist=frozenset({"Q1860"}))
    store = ingest_dump(fixture_lines(), filt).store
    assert "Q1860" in store
    assert types_of(store, "Q1860") == set()


def test_preferred_rank_filter():
    claims = {
        "P19": [
            dict(entity_snak("P19", "Q60"), rank="preferred"),
            dict(entity_snak("P19", "Q61"), rank="normal"),
            dict(entity_snak("P19", "Q62"), rank="deprecated"),
        ]
    }
    line = wikidata_line("Q1", {"en": {"language": "en", "value": "One"}}, claims=claims)
    all_ranks = ingest_dump([line]).store
    preferred = ingest_dump([line], IngestFilter(keep_ranks="preferred")).store
    assert len(all_ranks.get("Q1").statements) == 3
    assert [s.value.entity_id for s in preferred.get("Q1").statements] == ["Q60"]


def test_wikidata_qualifiers_and_property_label_backfill():
    lines = [
        json.dumps({"type": "property", "id": "P580", "labels": {"en": {"language": "en", "value": "start time"}}}),
        json.dumps(
            {
                "type": "item",
                "id": "Q1",
                "labels": {"en": {"language": "en", "value": "Acme"}},
                "claims": {
                    "P169": [
                        {
                            "mainsnak": {
                                "snaktype": "value",
                                "property": "P169",
                                "datavalue": {
                                    "type": "wikibase-entityid",
                                    "value": {"entity-type": "item", "id": "Q2"},
                                },
                            },
                            "qualifiers": {
                                "P580": [
                                    {
                                        "snaktype": "value",
                                        "property": "P580",
                                        "datavalue": {
                                            "type": "time",
                                            "value": {"time": "+2015-01-01T00:00:00Z", "precision": 9},
                                        },
                                    }
                                ]
                            },
                        }
                    ]
                },
            }
        ),
    ]
    store = ingest_dump(lines).store
    assert "P580" not in store  # property records are harvested, not stored
    statement = store.get("Q1").statements[0]
    assert statement.qualifiers[0].property_label == "start time"
    assert statement.qualifiers[0].value.time == "+2015-01-01T00:00:00Z"


def test_dropped_value_entities_render_as_raw_id(store):
    # Q9999 is not in the store; rendering must fall back to the id
    assert store.render_value(Value.entity("Q9999")) == "Q9999"
    assert store.render_value(Value.entity("Q1860")) == "English"


def test_time_rendering_truncates_to_precision():
    assert format_time("+1952-03-11T00:00:00Z", 11) == "1952-03-11"
    assert format_time("+1952-03-11T00:00:00Z", 10) == "1952-03"
    assert format_time("+1952-03-11T00:00:00Z", 9) == "1952"
    assert format_time("2019-11-08", 11) == "2019-11-08"
    assert format_time("garbage", 11) == "garbage"


def test_quantity_rendering_with_and_without_unit():
    lines = [
        json.dumps(
            {
                "id": "Q1",
                "label": "Thing",
                "aliases": [],
                "types": [],
                "claims": [
                    {"property": "P2044", "property_label": "elevation", "value": {"kind": "quantity", "amount": "+173", "unit": "Q11573"}, "qualifiers": []},
                    {"property": "P1082", "property_label": "population", "value": {"kind": "quantity", "amount": "+5600000", "unit": "Q999999"}, "qualifiers": []},
                ],
            }
        ),
        json.dumps({"id": "Q11573", "label": "metre", "aliases": [], "types": [], "claims": []}),
    ]
    store = ingest_dump(lines).store
    values = [s.value for s in store.get("Q1").statements]
    assert store.render_value(values[0]) == "173 metre"
    assert store.render_value(values[1]) == "5600000"  # unknown unit omitted


def test_store_save_load_round_trip(tmp_path, store):
    store.save(tmp_path / "store")
    loaded = KgStore.load(tmp_path / "store")
    assert loaded.stats() == store.stats()
    assert loaded.provenance["dump_id"] == "fixture"
    assert loaded.get("Q2001").aliases == ("Mara J. Lindel",)
