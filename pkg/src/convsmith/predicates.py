"""Per-type predicate extraction and chat-model predicate selection.

Extraction unions every statement property over the entities of a type; a
statement with qualifiers contributes one row per distinct qualifier
predicate plus the plain row. Selection sends the rows to a chat model in
batches of at most 50 and keeps the intersection of the reply with the batch
(hallucinated ids are dropped, not fatal).
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import prompts
from .errors import ContractViolation, GatewayError, SelectorError, SelectorParseError
from .gateway import ChatRequest, Gateway, request_hash
from .kgstore import KgStore
from .util import chunked, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

SELECTOR_BATCH_LIMIT = 50

_BRACKET_TOKEN_RE = re.compile(r"""['"]([^'"]+)['"]""")


@dataclass(frozen=True)
class PredicateRow:
    id: str
    label: str
    qualifier_id: str | None = None
    qualifier_label: str | None = None

    @property
    def key(self) -> tuple[str, str | None]:
        return (self.id, self.qualifier_id)


@dataclass
class TypePredicateTable:
    type_id: str
    type_label: str
    rows: list[PredicateRow]


@dataclass
class SelectedPredicates:
    type_id: str
    type_label: str
    rows: list[PredicateRow]
    provenance: dict = field(default_factory=dict)


def extract_predicates(store: KgStore, type_id: str) -> TypePredicateTable:
    """All (predicate, optional qualifier predicate) rows seen on entities of
    the type, sorted by id so selector batch boundaries are deterministic."""
    members = store.entities_of_type(type_id)  # raises NotFoundError for unknown types
    found: dict[tuple[str, str | None], PredicateRow] = {}
    for entity_id in members:
        record = store.get(entity_id)
        for stmt in record.statements:
            label = stmt.property_label or store.property_label(stmt.property)
            plain = (stmt.property, None)
            if plain not in found:
                found[plain] = PredicateRow(id=stmt.property, label=label)
            for qualifier in stmt.qualifiers:
                key = (stmt.property, qualifier.property)
                if key not in found:
                    q_label = qualifier.property_label or store.property_label(qualifier.property)
                    found[key] = PredicateRow(
                        id=stmt.property,
                        label=label,
                        qualifier_id=qualifier.property,
                        qualifier_label=q_label,
                    )
    rows = sorted(found.values(), key=lambda r: (r.id, r.qualifier_id or ""))
    return TypePredicateTable(
        type_id=type_id, type_label=store.display(type_id), rows=rows
    )


def _render_row(row: PredicateRow) -> str:
    if row.qualifier_id:
        return f"('{row.id}', '{row.label}', '{row.qualifier_id}', '{row.qualifier_label}')"
    return f"('{row.id}', '{row.label}')"


def build_selector_prompt(
    type_label: str, batch: Sequence[PredicateRow], *, model_profile: str = "selector"
) -> ChatRequest:
    if not 1 <= len(batch) <= SELECTOR_BATCH_LIMIT:
        raise ContractViolation(
            f"selector batch must have 1..{SELECTOR_BATCH_LIMIT} rows, got {len(batch)}"
        )
    table = "[" + ", ".join(_render_row(row) for row in batch) + "]"
    return ChatRequest(
        system=prompts.SELECTOR_SYSTEM,
        user=f"Type: {type_label}\nPredicates: {table}",
        model_profile=model_profile,
    )


def _parse_selector(text: str, batch: Sequence[PredicateRow]) -> tuple[list[str], list[str]]:
    start = text.find("[")
    end = text.rfind("]")
    if start == -1 or end <= start:
        raise SelectorParseError("no bracketed list in selector response", raw_text=text)
    region = text[start : end + 1]
    tokens: list[str] = []
    try:
        parsed = ast.literal_eval(region)
    except (ValueError, SyntaxError):
        parsed = None
    if isinstance(parsed, (list, tuple)):
        for item in parsed:
            if isinstance(item, str):
                tokens.append(item)
            elif isinstance(item, (list, tuple)) and item and isinstance(item[0], str):
                tokens.append(item[0])
    else:
        tokens = _BRACKET_TOKEN_RE.findall(region)
        if not tokens and any(ch.isalnum() for ch in region):
            raise SelectorParseError("bracketed list is not parseable", raw_text=text)
    batch_ids = {row.id for row in batch}
    kept: list[str] = []
    dropped: list[str] = []
    for token in tokens:
        if token in batch_ids:
            if token not in kept:
                kept.append(token)
        else:
            dropped.append(token)
    return kept, dropped


def parse_selector_response(text: str, batch: Sequence[PredicateRow]) -> list[str]:
    """Ordered predicate ids from the reply, intersected with the batch."""
    kept, dropped = _parse_selector(text, batch)
    if dropped:
        logger.info("selector returned %d id(s) not in the batch: %s", len(dropped), dropped)
    return kept


def select_predicates(
    gateway: Gateway,
    table: TypePredicateTable,
    *,
    model_profile: str = "selector",
    parse_retries: int = 1,
) -> SelectedPredicates:
    """Run the selection over <=50-row batches and merge, first occurrence wins."""
    if not table.rows:
        raise ContractViolation(f"predicate table for {table.type_id} is empty")
    selected: list[PredicateRow] = []
    seen: set[tuple[str, str | None]] = set()
    hashes: list[str] = []
    dropped_all: list[str] = []
    batches = list(chunked(table.rows, SELECTOR_BATCH_LIMIT))
    for batch_index, batch in enumerate(batches):
        request = build_selector_prompt(table.type_label, batch, model_profile=model_profile)
        hashes.append(request_hash(request))
        kept = None
        last_error: Exception | None = None
        for _ in range(1 + max(0, parse_retries)):
            try:
                reply = gateway.chat(request)
                kept, dropped = _parse_selector(reply, batch)
                dropped_all.extend(dropped)
                break
            except (GatewayError, SelectorParseError) as exc:
                last_error = exc
        if kept is None:
            raise SelectorError(
                f"batch {batch_index + 1}/{len(batches)} for {table.type_id} failed "
                f"({last_error}); {batch_index} batch(es) completed",
                completed_batches=batch_index,
            )
        for pid in kept:
            for row in batch:
                if row.id == pid and row.key not in seen:
                    seen.add(row.key)
                    selected.append(row)
    if dropped_all:
        logger.info("dropped %d hallucinated id(s) for %s", len(dropped_all), table.type_id)
    return SelectedPredicates(
        type_id=table.type_id,
        type_label=table.type_label,
        rows=selected,
        provenance={
            "model_profile": model_profile,
            "request_hashes": hashes,
            "dropped_ids": dropped_all,
        },
    )


def save_selected(selections: Iterable[SelectedPredicates], path: Path | str) -> None:
    rows = []
    for sel in selections:
        predicates = []
        for row in sel.rows:
            entry = {"id": row.id, "label": row.label}
            if row.qualifier_id:
                entry["qualifier_id"] = row.qualifier_id
            predicates.append(entry)
        rows.append(
            {"type_id": sel.type_id, "type_label": sel.type_label, "predicates": predicates}
        )
    write_jsonl(path, rows)


def load_selected(path: Path | str, store: KgStore) -> list[SelectedPredicates]:
    """Qualifier labels are not stored in the file; resolve them from the store."""
    out = []
    for payload in read_jsonl(path):
        rows = []
        for entry in payload.get("predicates", []):
            qualifier_id = entry.get("qualifier_id")
            rows.append(
                PredicateRow(
                    id=entry["id"],
                    label=entry.get("label", "") or store.property_label(entry["id"]),
                    qualifier_id=qualifier_id,
                    qualifier_label=store.property_label(qualifier_id) if qualifier_id else None,
                )
            )
        out.append(
            SelectedPredicates(
                type_id=payload["type_id"],
                type_label=payload.get("type_label", ""),
                rows=rows,
            )
        )
    return out
