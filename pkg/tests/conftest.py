"""Shared fixture knowledge graph: 33 entities across 7 types, with English
labels, aliases, multi-valued predicates, and qualified statements."""

from __future__ import annotations

import json

import pytest

from convsmith.kgstore import KgStore, ingest_dump

HUMAN = "Q5"
ACTOR = "Q33999"
SINGER = "Q177220"
FILM = "Q11424"
COUNTRY = "Q6256"
CITY = "Q515"
BUSINESS = "Q4830453"

DOB = "P569"
POB = "P19"
SPOUSE = "P26"
CITIZENSHIP = "P27"
OCCUPATION = "P106"
INSTANCE_OF = "P31"
OFFICIAL_LANGUAGE = "P37"
POPULATION = "P1082"
POINT_IN_TIME = "P585"
CEO = "P169"
START_TIME = "P580"
CAST_MEMBER = "P161"
CHARACTER_ROLE = "P453"
PUBLICATION_DATE = "P577"

PROPERTY_LABELS = {
    DOB: "date of birth",
    POB: "place of birth",
    SPOUSE: "spouse",
    CITIZENSHIP: "country of citizenship",
    OCCUPATION: "occupation",
    INSTANCE_OF: "instance of",
    OFFICIAL_LANGUAGE: "official language",
    POPULATION: "population",
    POINT_IN_TIME: "point in time",
    CEO: "chief executive officer",
    START_TIME: "start time",
    CAST_MEMBER: "cast member",
    CHARACTER_ROLE: "character role",
    PUBLICATION_DATE: "publication date",
}


def entity_value(target):
    return {"kind": "entity", "id": target}


def time_value(date, precision=11):
    return {"kind": "time", "time": date, "precision": precision}


def claim(prop, value, qualifiers=()):
    return {
        "property": prop,
        "property_label": PROPERTY_LABELS.get(prop, ""),
        "value": value,
        "qualifiers": [
            {"property": q_prop, "property_label": PROPERTY_LABELS.get(q_prop, ""), "value": q_value}
            for q_prop, q_value in qualifiers
        ],
    }


def record(entity_id, label, aliases=(), types=(), claims=()):
    return {
        "id": entity_id,
        "label": label,
        "aliases": list(aliases),
        "types": list(types),
        "claims": list(claims),
    }


def person(entity_id, label, occupation, dob, pob, spouse=None, citizenship=None, aliases=()):
    claims = [
        claim(INSTANCE_OF, entity_value(HUMAN)),
        claim(OCCUPATION, entity_value(occupation)),
        claim(DOB, time_value(dob)),
        claim(POB, entity_value(pob)),
    ]
    if spouse:
        claims.append(claim(SPOUSE, entity_value(spouse)))
    if citizenship:
        claims.append(claim(CITIZENSHIP, entity_value(citizenship)))
    return record(entity_id, label, aliases=aliases, types=[HUMAN, occupation], claims=claims)


def fixture_records() -> list[dict]:
    records = [
        record(HUMAN, "human"),
        record(ACTOR, "actor"),
        record(SINGER, "singer"),
        record(FILM, "film"),
        record(COUNTRY, "country"),
        record(CITY, "city"),
        record(BUSINESS, "business"),
        record("Q1860", "English", aliases=["English language"]),
        record("Q150", "French"),
        record("Q188", "German"),
    ]
    cities = [
        record("Q5001", "Springfield", types=[CITY], claims=[
            claim(INSTANCE_OF, entity_value(CITY)),
            claim(POPULATION, {"kind": "quantity", "amount": "116250"}),
        ]),
        record("Q5002", "Riverton", types=[CITY], claims=[
            claim(INSTANCE_OF, entity_value(CITY)),
            claim(POPULATION, {"kind": "quantity", "amount": "84300"}),
        ]),
        record("Q5003", "Lakewood", types=[CITY], claims=[
            claim(INSTANCE_OF, entity_value(CITY)),
            claim(POPULATION, {"kind": "quantity", "amount": "40110"}),
        ]),
    ]
    countries = [
        record("Q4001", "Veridia", types=[COUNTRY], claims=[
            claim(INSTANCE_OF, entity_value(COUNTRY)),
            claim(OFFICIAL_LANGUAGE, entity_value("Q1860")),
            claim(OFFICIAL_LANGUAGE, entity_value("Q150")),
            claim(OFFICIAL_LANGUAGE, entity_value("Q188")),
            claim(POPULATION, {"kind": "quantity", "amount": "5200000"},
                  qualifiers=[(POINT_IN_TIME, time_value("2010-01-01", 9))]),
            claim(POPULATION, {"kind": "quantity", "amount": "5600000"},
                  qualifiers=[(POINT_IN_TIME, time_value("2020-01-01", 9))]),
        ]),
        record("Q4002", "Norland", types=[COUNTRY], claims=[
            claim(INSTANCE_OF, entity_value(COUNTRY)),
            claim(OFFICIAL_LANGUAGE, entity_value("Q1860")),
            claim(POPULATION, {"kind": "quantity", "amount": "9100000"}),
        ]),
        record("Q4003", "Esteria", types=[COUNTRY], claims=[
            claim(INSTANCE_OF, entity_value(COUNTRY)),
            claim(OFFICIAL_LANGUAGE, entity_value("Q150")),
        ]),
    ]
    actors = [
        person("Q2001", "Mara Lindel", ACTOR, "1975-03-11", "Q5001", spouse="Q2002", citizenship="Q4001",
               aliases=["Mara J. Lindel"]),
        person("Q2002", "Tomas Reiner", ACTOR, "1971-06-02", "Q5002", spouse="Q2001", citizenship="Q4001"),
        person("Q2003", "Ada Corvin", ACTOR, "1983-12-25", "Q5003", citizenship="Q4002"),
        person("Q2004", "Leo Brandt", ACTOR, "1990-01-30", "Q5001", citizenship="Q4002"),
        person("Q2005", "Nina Falk", ACTOR, "1968-07-19", "Q5002", spouse="Q2006", citizenship="Q4003"),
        person("Q2006", "Omar Veld", ACTOR, "1965-04-04", "Q5003", spouse="Q2005", citizenship="Q4003"),
        person("Q2007", "Petra Stahl", ACTOR, "1988-10-08", "Q5001", citizenship="Q4001"),
        person("Q2008", "Ivo Marek", ACTOR, "1979-02-14", "Q5002", citizenship="Q4002"),
    ]
    singers = [
        person("Q2101", "Selma Voss", SINGER, "1992-05-21", "Q5001", citizenship="Q4001",
               aliases=["Selma V."]),
        person("Q2102", "Ruben Dale", SINGER, "1985-09-09", "Q5002", citizenship="Q4002"),
        person("Q2103", "Ilka Reyes", SINGER, "1996-11-03", "Q5003", citizenship="Q4003"),
        person("Q2104", "Hanne Lieb", SINGER, "1978-08-27", "Q5001", citizenship="Q4001"),
    ]
    films = [
        record("Q3001", "Glass Harbor", types=[FILM], claims=[
            claim(INSTANCE_OF, entity_value(FILM)),
            claim(PUBLICATION_DATE, time_value("2019-11-08")),
            claim(CAST_MEMBER, entity_value("Q2001"),
                  qualifiers=[(CHARACTER_ROLE, {"kind": "text", "text": "Captain Vey"})]),
            claim(CAST_MEMBER, entity_value("Q2002"),
                  qualifiers=[(CHARACTER_ROLE, {"kind": "text", "text": "Dr. Holt"})]),
        ]),
        record("Q3002", "Night Cartographers", types=[FILM], claims=[
            claim(INSTANCE_OF, entity_value(FILM)),
            claim(PUBLICATION_DATE, time_value("2021-03-19")),
            claim(CAST_MEMBER, entity_value("Q2003"),
                  qualifiers=[(CHARACTER_ROLE, {"kind": "text", "text": "The Mapmaker"})]),
        ]),
        record("Q3003", "Salt and Iron", types=[FILM], claims=[
            claim(INSTANCE_OF, entity_value(FILM)),
            claim(PUBLICATION_DATE, time_value("2015-06-12")),
            claim(CAST_MEMBER, entity_value("Q2005")),
        ]),
    ]
    businesses = [
        record("Q6001", "Helix Dynamics", types=[BUSINESS], claims=[
            claim(INSTANCE_OF, entity_value(BUSINESS)),
            claim(CEO, entity_value("Q2006"),
                  qualifiers=[(START_TIME, time_value("2015-01-01", 9))]),
        ]),
        record("Q6002", "Bluefern Studios", types=[BUSINESS], claims=[
            claim(INSTANCE_OF, entity_value(BUSINESS)),
            claim(CEO, entity_value("Q2007"),
                  qualifiers=[(START_TIME, time_value("2018-01-01", 9))]),
            claim(CEO, entity_value("Q2008"),
                  qualifiers=[(START_TIME, time_value("2021-01-01", 9))]),
        ]),
    ]
    records.extend(cities + countries + actors + singers + films + businesses)
    return records


def fixture_lines() -> list[str]:
    return [json.dumps(rec, ensure_ascii=False, separators=(",", ":")) for rec in fixture_records()]


@pytest.fixture(scope="session")
def store() -> KgStore:
    return ingest_dump(fixture_lines(), dump_id="fixture", cutoff="2023-06").store


@pytest.fixture(scope="session")
def selections(store):
    from convsmith.offline import offline_gateway
    from convsmith.predicates import extract_predicates, select_predicates

    gateway = offline_gateway("selector")
    out = []
    for type_id in store.type_ids():
        table = extract_predicates(store, type_id)
        if table.rows:
            out.append(select_predicates(gateway, table))
    return out


def resolve_templates(units, cache_dir):
    """Offline-synthesized template sets covering every unit signature."""
    from convsmith.offline import offline_gateway
    from convsmith.templates import TemplateCache, ensure_templates, signature_key

    signatures, seen = [], set()
    for unit in units:
        for sig in unit.signatures():
            key = signature_key(sig)
            if key not in seen:
                seen.add(key)
                signatures.append(sig)
    resolved, quarantined = ensure_templates(
        offline_gateway("templates"), signatures, TemplateCache(cache_dir)
    )
    assert not quarantined
    return resolved
