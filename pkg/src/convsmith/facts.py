"""Materialize facts for an entity under its type's selected predicates.

A selected plain predicate yields one fact per entity: simple when it has a
single value, complex when multi-valued. A selected (predicate, qualifier)
row flattens into one qualified fact per (value, matching qualifier value)
pair; statements lacking that qualifier fall back to simple/complex.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ContractViolation
from .kgstore import KgStore, Value
from .predicates import PredicateRow, SelectedPredicates
from .util import canonical_json, content_hash, read_jsonl, write_jsonl

SIMPLE = "simple"
COMPLEX = "complex"
QUALIFIED = "qualified"


@dataclass(frozen=True)
class Fact:
    subject: str
    predicate: str
    predicate_label: str
    objects: tuple[Value, ...]
    kind: str
    qualifier_predicate: str | None = None
    qualifier_label: str | None = None
    qualifier_value: Value | None = None

    def __post_init__(self):
        if not self.objects:
            raise ContractViolation("a fact needs at least one object")
        if self.kind == SIMPLE and (len(self.objects) != 1 or self.qualifier_predicate):
            raise ContractViolation("simple facts have one object and no qualifier")
        if self.kind == COMPLEX and len(self.objects) < 2:
            raise ContractViolation("complex facts have at least two objects")
        if self.kind == QUALIFIED and self.qualifier_predicate is None:
            raise ContractViolation("qualified facts carry a qualifier predicate")

    @property
    def fact_id(self) -> str:
        payload = {
            "subject": self.subject,
            "predicate": self.predicate,
            "kind": self.kind,
            "objects": [o.to_json() for o in self.objects],
            "qualifier_predicate": self.qualifier_predicate,
            "qualifier_value": self.qualifier_value.to_json() if self.qualifier_value else None,
        }
        return content_hash(canonical_json(payload))[:16]


def _plain_fact(store: KgStore, entity_id: str, row: PredicateRow, values: list[Value]) -> Fact | None:
    if not values:
        return None
    kind = SIMPLE if len(values) == 1 else COMPLEX
    label = row.label or store.property_label(row.id)
    return Fact(
        subject=entity_id,
        predicate=row.id,
        predicate_label=label,
        objects=tuple(values),
        kind=kind,
    )


def extract_facts(store: KgStore, entity_id: str, selected: SelectedPredicates) -> list[Fact]:
    """Simple/complex facts for the selected plain predicate rows."""
    record = store.get(entity_id)
    facts: list[Fact] = []
    for row in selected.rows:
        if row.qualifier_id is not None:
            continue
        values = [s.value for s in record.statements if s.property == row.id]
        fact = _plain_fact(store, entity_id, row, values)
        if fact is not None:
            facts.append(fact)
    return facts


def extract_qualified_facts(
    store: KgStore, entity_id: str, selected: SelectedPredicates
) -> list[Fact]:
    """Qualified facts, flattened per (statement value, qualifier value) pair."""
    record = store.get(entity_id)
    facts: list[Fact] = []
    for row in selected.rows:
        if row.qualifier_id is None:
            continue
        label = row.label or store.property_label(row.id)
        qualifier_label = row.qualifier_label or store.property_label(row.qualifier_id)
        unqualified: list[Value] = []
        for stmt in record.statements:
            if stmt.property != row.id:
                continue
            matches = [q.value for q in stmt.qualifiers if q.property == row.qualifier_id]
            if not matches:
                unqualified.append(stmt.value)
                continue
            for qualifier_value in matches:
                facts.append(
                    Fact(
                        subject=entity_id,
                        predicate=row.id,
                        predicate_label=label,
                        objects=(stmt.value,),
                        kind=QUALIFIED,
                        qualifier_predicate=row.qualifier_id,
                        qualifier_label=qualifier_label,
                        qualifier_value=qualifier_value,
                    )
                )
        fact = _plain_fact(store, entity_id, row, unqualified)
        if fact is not None:
            facts.append(fact)
    return facts


def extract_all(store: KgStore, entity_id: str, selected: SelectedPredicates) -> list[Fact]:
    """Plain and qualified facts, in selected-row order.

    When both (p, None) and (p, q) rows are selected, the qualified row's
    unqualified fallback would duplicate the plain row's fact; content-derived
    fact ids keep the output a partition.
    """
    record = store.get(entity_id)
    facts: list[Fact] = []
    seen: set[str] = set()
    for row in selected.rows:
        one_row = SelectedPredicates(
            type_id=selected.type_id, type_label=selected.type_label, rows=[row]
        )
        if row.qualifier_id is None:
            extracted = extract_facts(store, record.id, one_row)
        else:
            extracted = extract_qualified_facts(store, record.id, one_row)
        for fact in extracted:
            if fact.fact_id not in seen:
                seen.add(fact.fact_id)
                facts.append(fact)
    return facts


def fact_pools(
    store: KgStore, selections: Iterable[SelectedPredicates]
) -> dict[str, tuple[SelectedPredicates, list[Fact]]]:
    """Fact pool per entity, under the first selection matching one of its
    types (selection file order wins). Entities with no facts are skipped."""
    pools: dict[str, tuple[SelectedPredicates, list[Fact]]] = {}
    for selection in selections:
        if not selection.rows:
            continue
        try:
            members = store.entities_of_type(selection.type_id)
        except KeyError:
            continue
        for entity_id in members:
            if entity_id in pools:
                continue
            facts = extract_all(store, entity_id, selection)
            if facts:
                pools[entity_id] = (selection, facts)
    return pools


def save_facts(store: KgStore, facts: Iterable[Fact], path: Path | str) -> None:
    rows = []
    for fact in facts:
        entry: dict = {
            "subject": fact.subject,
            "predicate": fact.predicate,
            "kind": fact.kind,
            "objects": [
                {"rendered": store.render_value(o), "raw": o.to_json()} for o in fact.objects
            ],
        }
        if fact.kind == QUALIFIED:
            entry["qualifier"] = {
                "predicate": fact.qualifier_predicate,
                "rendered": store.render_value(fact.qualifier_value),
                "raw": fact.qualifier_value.to_json(),
            }
        rows.append(entry)
    write_jsonl(path, rows)


def load_facts(path: Path | str, store: KgStore) -> list[Fact]:
    """Labels are not stored in the fact file; resolve them from the store."""
    facts = []
    for payload in read_jsonl(path):
        qualifier = payload.get("qualifier")
        facts.append(
            Fact(
                subject=payload["subject"],
                predicate=payload["predicate"],
                predicate_label=store.property_label(payload["predicate"]),
                objects=tuple(Value.from_json(o["raw"]) for o in payload["objects"]),
                kind=payload["kind"],
                qualifier_predicate=qualifier["predicate"] if qualifier else None,
                qualifier_label=store.property_label(qualifier["predicate"]) if qualifier else None,
                qualifier_value=Value.from_json(qualifier["raw"]) if qualifier else None,
            )
        )
    return facts
