"""Hashing, canonical JSON, and seed-derivation helpers.

All randomness in the pipeline flows from one global seed through
``derive_rng(seed, stage, *item_ids)`` so partial reruns stay deterministic.
"""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence


def canonical_json(obj: Any) -> str:
    """Stable, compact serialization used for hashing and cache keys."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def content_hash(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def file_hash(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def derive_seed(seed: int, *parts: Any) -> int:
    """Derive a child seed from the global seed plus stage/item identifiers."""
    material = canonical_json([seed, *[str(p) for p in parts]])
    return int(content_hash(material)[:16], 16)


def derive_rng(seed: int, *parts: Any) -> random.Random:
    return random.Random(derive_seed(seed, *parts))


def chunked(items: Sequence, size: int) -> Iterator[list]:
    """Yield consecutive slices of at most ``size`` items."""
    if size < 1:
        raise ValueError("chunk size must be positive")
    for start in range(0, len(items), size):
        yield list(items[start : start + size])


def write_jsonl(path: Path | str, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path: Path | str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
