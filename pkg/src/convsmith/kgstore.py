"""Streaming knowledge-graph store.

Ingests one entity per line from either a raw Wikidata dump or the canonical
JSONL format documented below, applies an English-label filter (plus an
optional type allowlist), and exposes an immutable, type-indexed store.

Canonical JSONL entity format (field names are normative, one object per line)::

    {"id": "Q42", "label": "...", "aliases": ["..."], "types": ["Q5"],
     "claims": [{"property": "P26", "property_label": "spouse",
                 "value": {...}, "qualifiers": [{...}]}]}

Values are tagged by kind: ``{"kind": "entity", "id": ...}``,
``{"kind": "text", "text": ...}``, ``{"kind": "quantity", "amount": ..., "unit"?: ...}``,
``{"kind": "time", "time": ..., "precision": ...}``, ``{"kind": "other", "raw": ...}``.
Exports round-trip bit-exactly.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import IngestSourceError, NotFoundError

logger = logging.getLogger(__name__)

INSTANCE_OF = "P31"
OCCUPATION = "P106"

_TIME_RE = re.compile(r"^([+-]?)(\d+)(?:-(\d{2}))?(?:-(\d{2}))?")


@dataclass(frozen=True)
class Value:
    """A statement object. Exactly one variant is populated per ``kind``;
    rendering to display text is total."""

    kind: str
    entity_id: str | None = None
    text: str | None = None
    amount: str | None = None
    unit: str | None = None
    time: str | None = None
    precision: int | None = None
    raw: str | None = None

    @classmethod
    def entity(cls, entity_id: str) -> "Value":
        return cls(kind="entity", entity_id=entity_id)

    @classmethod
    def text_value(cls, text: str) -> "Value":
        return cls(kind="text", text=text)

    @classmethod
    def quantity(cls, amount: str, unit: str | None = None) -> "Value":
        return cls(kind="quantity", amount=amount, unit=unit)

    @classmethod
    def timestamp(cls, time: str, precision: int = 11) -> "Value":
        return cls(kind="time", time=time, precision=precision)

    @classmethod
    def other(cls, raw: str) -> "Value":
        return cls(kind="other", raw=raw)

    def to_json(self) -> dict:
        if self.kind == "entity":
            return {"kind": "entity", "id": self.entity_id}
        if self.kind == "text":
            return {"kind": "text", "text": self.text}
        if self.kind == "quantity":
            out = {"kind": "quantity", "amount": self.amount}
            if self.unit:
                out["unit"] = self.unit
            return out
        if self.kind == "time":
            return {"kind": "time", "time": self.time, "precision": self.precision}
        return {"kind": "other", "raw": self.raw or ""}

    @classmethod
    def from_json(cls, payload: dict) -> "Value":
        kind = payload.get("kind")
        if kind == "entity":
            return cls.entity(str(payload["id"]))
        if kind == "text":
            return cls.text_value(str(payload["text"]))
        if kind == "quantity":
            unit = payload.get("unit")
            return cls.quantity(str(payload["amount"]), str(unit) if unit else None)
        if kind == "time":
            return cls.timestamp(str(payload["time"]), int(payload.get("precision", 11)))
        if kind == "other":
            return cls.other(str(payload.get("raw", "")))
        raise ValueError(f"unknown value kind: {kind!r}")

    def fallback_text(self) -> str:
        """Label-free rendering; never fails."""
        if self.kind == "entity":
            return self.entity_id or ""
        if self.kind == "text":
            return self.text or ""
        if self.kind == "quantity":
            return (self.amount or "").lstrip("+")
        if self.kind == "time":
            return format_time(self.time or "", self.precision or 11)
        return self.raw or ""


def format_time(time_str: str, precision: int) -> str:
    """ISO-8601 date truncated to the stated precision (11=day, 10=month, 9=year).

    Accepts Wikidata-style ``+1952-03-11T00:00:00Z`` and bare ``1952-03-11``.
    Unparseable input is returned as-is so rendering stays total.
    """
    head = time_str.split("T", 1)[0]
    m = _TIME_RE.match(head)
    if not m:
        return time_str
    sign, year, month, day = m.groups()
    sign = "-" if sign == "-" else ""
    if precision >= 11 and month and day:
        return f"{sign}{year}-{month}-{day}"
    if precision >= 10 and month:
        return f"{sign}{year}-{month}"
    return f"{sign}{year}"


@dataclass(frozen=True)
class Qualifier:
    property: str
    property_label: str
    value: Value

    def to_json(self) -> dict:
        return {
            "property": self.property,
            "property_label": self.property_label,
            "value": self.value.to_json(),
        }


@dataclass(frozen=True)
class Statement:
    """One item-property-value assertion, optionally refined by qualifiers."""

    property: str
    property_label: str
    value: Value
    qualifiers: tuple[Qualifier, ...] = ()

    def to_json(self) -> dict:
        return {
            "property": self.property,
            "property_label": self.property_label,
            "value": self.value.to_json(),
            "qualifiers": [q.to_json() for q in self.qualifiers],
        }


@dataclass(frozen=True)
class EntityRecord:
    id: str
    label: str
    aliases: tuple[str, ...] = ()
    types: tuple[str, ...] = ()
    statements: tuple[Statement, ...] = ()

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "aliases": list(self.aliases),
            "types": list(self.types),
            "claims": [s.to_json() for s in self.statements],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EntityRecord":
        statements = []
        for claim in payload.get("claims", []):
            qualifiers = tuple(
                Qualifier(
                    property=str(q["property"]),
                    property_label=str(q.get("property_label", "")),
                    value=Value.from_json(q["value"]),
                )
                for q in claim.get("qualifiers", [])
            )
            statements.append(
                Statement(
                    property=str(claim["property"]),
                    property_label=str(claim.get("property_label", "")),
                    value=Value.from_json(claim["value"]),
                    qualifiers=qualifiers,
                )
            )
        return cls(
            id=str(payload["id"]),
            label=str(payload.get("label", "")),
            aliases=tuple(str(a) for a in payload.get("aliases", [])),
            types=tuple(str(t) for t in payload.get("types", [])),
            statements=tuple(statements),
        )


@dataclass(frozen=True)
class DatasetStats:
    entity_count: int
    fact_count: int
    unique_type_count: int
    unique_predicate_count: int


@dataclass(frozen=True)
class IngestFilter:
    """What the ingest keeps.

    Entities must carry a label in ``label_language``. When ``type_allowlist``
    is set, an entity is kept only if it has an allowlisted type or its id is
    in ``entity_allowlist`` (the one way a stored entity may end up typeless
    under an active allowlist). Default is no type filtering.
    """

    label_language: str = "en"
    type_allowlist: frozenset[str] | None = None
    entity_allowlist: frozenset[str] = frozenset()
    instance_of_property: str = INSTANCE_OF
    occupation_property: str = OCCUPATION
    keep_ranks: str = "all"  # "all" | "preferred" (raw-dump lines only)


@dataclass
class IngestResult:
    store: "KgStore"
    rejects: list[tuple[int, str]] = field(default_factory=list)
    lines_read: int = 0


class KgStore:
    """Immutable entity store with a by-type index. Safe for concurrent reads."""

    def __init__(self, records: Iterable[EntityRecord], provenance: dict | None = None):
        self._entities: dict[str, EntityRecord] = {}
        for record in records:
            self._entities[record.id] = record
        self._by_type: dict[str, list[str]] = {}
        self._property_labels: dict[str, str] = {}
        for record in self._entities.values():
            for type_id in record.types:
                self._by_type.setdefault(type_id, []).append(record.id)
            for stmt in record.statements:
                if stmt.property_label and not self._property_labels.get(stmt.property):
                    self._property_labels[stmt.property] = stmt.property_label
                for q in stmt.qualifiers:
                    if q.property_label and not self._property_labels.get(q.property):
                        self._property_labels[q.property] = q.property_label
        self.provenance = dict(provenance or {})

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def get(self, entity_id: str) -> EntityRecord:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise NotFoundError(f"unknown entity: {entity_id}") from None

    def entity_ids(self) -> list[str]:
        return list(self._entities)

    def entities(self) -> Iterator[EntityRecord]:
        return iter(self._entities.values())

    def type_ids(self) -> list[str]:
        return list(self._by_type)

    def entities_of_type(self, type_id: str) -> list[str]:
        try:
            return list(self._by_type[type_id])
        except KeyError:
            raise NotFoundError(f"no entities of type: {type_id}") from None

    def label_of(self, entity_id: str) -> str | None:
        record = self._entities.get(entity_id)
        return record.label if record else None

    def display(self, entity_id: str) -> str:
        """Label when known, else the raw id (dropped value targets stay renderable)."""
        return self.label_of(entity_id) or entity_id

    def property_label(self, property_id: str) -> str:
        return self._property_labels.get(property_id, "")

    def render_value(self, value: Value) -> str:
        if value.kind == "entity":
            return self.display(value.entity_id or "")
        if value.kind == "quantity":
            amount = (value.amount or "").lstrip("+")
            unit_label = self.label_of(value.unit) if value.unit else None
            return f"{amount} {unit_label}" if unit_label else amount
        return value.fallback_text()

    def stats(self) -> DatasetStats:
        fact_count = 0
        predicates: set[str] = set()
        types: set[str] = set()
        for record in self._entities.values():
            fact_count += len(record.statements)
            types.update(record.types)
            predicates.update(s.property for s in record.statements)
        return DatasetStats(
            entity_count=len(self._entities),
            fact_count=fact_count,
            unique_type_count=len(types),
            unique_predicate_count=len(predicates),
        )

    def canonical_lines(self) -> Iterator[str]:
        for record in self._entities.values():
            yield json.dumps(record.to_json(), ensure_ascii=False, separators=(",", ":"))

    def save(self, directory: Path | str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "entities.jsonl", "w", encoding="utf-8") as fh:
            for line in self.canonical_lines():
                fh.write(line)
                fh.write("\n")
        stats = self.stats()
        meta = {
            "schema_version": 1,
            "dump_id": self.provenance.get("dump_id", ""),
            "cutoff": self.provenance.get("cutoff", ""),
            "stats": {
                "entity_count": stats.entity_count,
                "fact_count": stats.fact_count,
                "unique_type_count": stats.unique_type_count,
                "unique_predicate_count": stats.unique_predicate_count,
            },
        }
        with open(directory / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, ensure_ascii=False, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory: Path | str) -> "KgStore":
        directory = Path(directory)
        meta_path = directory / "meta.json"
        provenance = {}
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            provenance = {"dump_id": meta.get("dump_id", ""), "cutoff": meta.get("cutoff", "")}
        records = []
        with open(directory / "entities.jsonl", "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(EntityRecord.from_json(json.loads(line)))
        return cls(records, provenance)


def types_of(store: KgStore, entity_id: str) -> set[str]:
    """Union of InstanceOf and Occupation targets for the entity."""
    return set(store.get(entity_id).types)


def stats(store: KgStore) -> DatasetStats:
    return store.stats()


# --- ingest ---------------------------------------------------------------


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            fh: IO = open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise IngestSourceError(f"cannot read {path}: {exc}") from exc
        with fh:
            yield from fh
        return
    for line in source:
        if isinstance(line, bytes):
            yield line.decode("utf-8", errors="replace")
        else:
            yield line


def _wikidata_value(datavalue: dict) -> Value | None:
    value = datavalue.get("value")
    value_type = datavalue.get("type")
    if value_type == "wikibase-entityid" and isinstance(value, dict):
        target = value.get("id")
        if not target and value.get("numeric-id") is not None:
            prefix = "P" if value.get("entity-type") == "property" else "Q"
            target = f"{prefix}{value['numeric-id']}"
        return Value.entity(str(target)) if target else None
    if value_type == "string":
        return Value.text_value(str(value))
    if value_type == "monolingualtext" and isinstance(value, dict):
        return Value.text_value(str(value.get("text", "")))
    if value_type == "quantity" and isinstance(value, dict):
        unit = value.get("unit") or ""
        unit_id = unit.rsplit("/", 1)[-1] if unit.startswith("http") else None
        return Value.quantity(str(value.get("amount", "")), unit_id)
    if value_type == "time" and isinstance(value, dict):
        return Value.timestamp(str(value.get("time", "")), int(value.get("precision", 11)))
    if value_type == "globecoordinate" and isinstance(value, dict):
        return Value.other(f"{value.get('latitude')},{value.get('longitude')}")
    if value is None:
        return None
    return Value.other(str(value))


def _parse_wikidata_entity(obj: dict, filt: IngestFilter) -> dict | None:
    """Raw dump line -> canonical intermediate, or None when the filter drops it."""
    labels = obj.get("labels") or {}
    label_entry = labels.get(filt.label_language) or {}
    label = label_entry.get("value", "") if isinstance(label_entry, dict) else ""
    if not label:
        return None
    aliases = [
        a.get("value", "")
        for a in (obj.get("aliases") or {}).get(filt.label_language, [])
        if isinstance(a, dict) and a.get("value")
    ]
    claims = []
    types = []
    for property_id, statements in (obj.get("claims") or {}).items():
        if not isinstance(statements, list):
            continue
        if filt.keep_ranks == "preferred":
            ranks = [s.get("rank", "normal") for s in statements if isinstance(s, dict)]
            wanted = {"preferred"} if "preferred" in ranks else {"normal"}
        else:
            wanted = None
        for stmt in statements:
            if not isinstance(stmt, dict):
                continue
            if wanted is not None and stmt.get("rank", "normal") not in wanted:
                continue
            mainsnak = stmt.get("mainsnak") or {}
            if mainsnak.get("snaktype", "value") != "value":
                continue  # novalue/somevalue carry nothing to ask about
            value = _wikidata_value(mainsnak.get("datavalue") or {})
            if value is None:
                continue
            qualifiers = []
            for q_pid, q_snaks in (stmt.get("qualifiers") or {}).items():
                for snak in q_snaks if isinstance(q_snaks, list) else []:
                    if snak.get("snaktype", "value") != "value":
                        continue
                    q_value = _wikidata_value(snak.get("datavalue") or {})
                    if q_value is not None:
                        qualifiers.append(
                            {"property": q_pid, "property_label": "", "value": q_value.to_json()}
                        )
            claims.append(
                {
                    "property": property_id,
                    "property_label": "",
                    "value": value.to_json(),
                    "qualifiers": qualifiers,
                }
            )
            if property_id in (filt.instance_of_property, filt.occupation_property):
                if value.kind == "entity" and value.entity_id not in types:
                    types.append(value.entity_id)
    return {
        "id": str(obj["id"]),
        "label": label,
        "aliases": aliases,
        "types": types,
        "claims": claims,
    }


def _passes_type_gate(intermediate: dict, filt: IngestFilter) -> bool:
    if filt.type_allowlist is None:
        return True
    if intermediate["id"] in filt.entity_allowlist:
        return True
    return any(t in filt.type_allowlist for t in intermediate["types"])


def ingest_dump(
    source,
    filt: IngestFilter | None = None,
    *,
    dump_id: str = "",
    cutoff: str = "",
) -> IngestResult:
    """Single-pass streaming ingest of a line-oriented entity dump.

    Accepts raw Wikidata dump lines (JSON array framing and trailing commas
    tolerated) and canonical JSONL, mixed freely. Malformed lines are recorded
    as (line_number, reason) rejects and ingest continues; an unreadable
    source raises :class:`IngestSourceError`. Raw-dump property records are
    harvested for predicate labels but not stored as entities.
    """
    filt = filt or IngestFilter()
    rejects: list[tuple[int, str]] = []
    kept: list[dict] = []
    property_labels: dict[str, str] = {}
    lines_read = 0

    for line_no, line in enumerate(_iter_lines(source), start=1):
        lines_read += 1
        text = line.strip()
        if not text or text in ("[", "]"):
            continue
        text = text.rstrip(",")
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            rejects.append((line_no, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict) or not obj.get("id"):
            rejects.append((line_no, "not an entity object with an id"))
            continue
        try:
            if isinstance(obj.get("claims"), list) or isinstance(obj.get("label"), str):
                # canonical format
                if not isinstance(obj.get("label"), str):
                    rejects.append((line_no, "canonical record missing label"))
                    continue
                intermediate = {
                    "id": str(obj["id"]),
                    "label": obj.get("label", ""),
                    "aliases": [str(a) for a in obj.get("aliases", [])],
                    "types": [str(t) for t in obj.get("types", [])],
                    "claims": obj.get("claims", []),
                }
                # validate claim shape early so bad lines land in the reject log
                EntityRecord.from_json(intermediate)
            elif obj.get("type") == "property":
                label_entry = (obj.get("labels") or {}).get(filt.label_language) or {}
                if isinstance(label_entry, dict) and label_entry.get("value"):
                    property_labels[str(obj["id"])] = label_entry["value"]
                continue
            else:
                intermediate = _parse_wikidata_entity(obj, filt)
                if intermediate is None:
                    continue  # dropped by the language filter
        except (KeyError, TypeError, ValueError) as exc:
            rejects.append((line_no, f"malformed entity: {exc}"))
            continue
        if not intermediate["label"]:
            continue
        if not _passes_type_gate(intermediate, filt):
            continue
        kept.append(intermediate)

    records = []
    for intermediate in kept:
        for claim in intermediate["claims"]:
            if not claim.get("property_label"):
                claim["property_label"] = property_labels.get(claim["property"], "")
            for q in claim.get("qualifiers", []):
                if not q.get("property_label"):
                    q["property_label"] = property_labels.get(q["property"], "")
        records.append(EntityRecord.from_json(intermediate))

    store = KgStore(records, {"dump_id": dump_id, "cutoff": cutoff})
    return IngestResult(store=store, rejects=rejects, lines_read=lines_read)


def write_reject_log(rejects: list[tuple[int, str]], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line_no, reason in rejects:
            fh.write(f"{line_no}\t{reason}\n")
