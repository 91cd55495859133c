"""Turn-indexed question-template sets: prompt building, parsing, validation, cache.

A template request covers at most five turns. Per turn the model returns,
for every phenomenon family, exactly three question variants plus the turn's
object placeholder as the answer. Validation rules enforced on parse:

* family set matches the signature: voice -> original/deixis/disfluencies/
  deixis_disfluencies, text -> original/deixis, qualified -> original/deixis
* exactly three string variants per family
* every original variant contains the subject placeholder ``[<type>]`` verbatim
* the turn's answer equals its object placeholder ``[<letter>]``
* the turn's own object placeholder never appears in its questions
* object placeholders from other turns are allowed only in qualified sets and
  only between turns sharing a predicate
* text-interaction and qualified variants never begin with a question word
  (who/whom/what/when/which/how)

Text-interaction typo families are not requested from the model; they are
derived deterministically by the typo augmenter downstream.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from . import prompts
from .errors import ContractViolation, GatewayError, TemplateParseError, TemplateValidationError
from .gateway import ChatRequest, Gateway
from .util import canonical_json, content_hash

logger = logging.getLogger(__name__)

MAX_TEMPLATE_TURNS = 5
VARIANTS_PER_FAMILY = 3

VOICE = "voice"
TEXT = "text"
INTERACTIONS = (VOICE, TEXT)

VOICE_FAMILIES = ("original", "deixis", "disfluencies", "deixis_disfluencies")
TEXT_FAMILIES = ("original", "deixis")
DERIVED_TEXT_FAMILIES = ("typos", "deixis_typos")

WH_WORDS = ("how", "what", "when", "which", "who", "whom")
WH_PENALTY = -100.0
WH_START_RE = re.compile(r"^(?:%s)\b" % "|".join(WH_WORDS))

_OBJECT_PLACEHOLDER_RE = re.compile(r"\[([a-z])\]")


def turn_letter(turn: int) -> str:
    """Object placeholder letter for a 1-based turn number within a batch."""
    return chr(ord("a") + turn - 1)


def object_placeholder(turn: int) -> str:
    return f"[{turn_letter(turn)}]"


@dataclass(frozen=True)
class SignatureTurn:
    predicate_label: str
    qualifier_label: str | None = None


@dataclass(frozen=True)
class FactSignature:
    """What a template set is keyed by: subject type, the ordered predicate
    (and optional qualifier) labels of up to five turns, and the interaction."""

    subject_type_label: str
    turns: tuple[SignatureTurn, ...]
    interaction: str

    def __post_init__(self):
        if self.interaction not in INTERACTIONS:
            raise ContractViolation(f"unknown interaction: {self.interaction}")
        if not 1 <= len(self.turns) <= MAX_TEMPLATE_TURNS:
            raise ContractViolation(
                f"signature must have 1..{MAX_TEMPLATE_TURNS} turns, got {len(self.turns)}"
            )

    @property
    def is_qualified(self) -> bool:
        return all(t.qualifier_label is not None for t in self.turns)

    @property
    def subject_placeholder(self) -> str:
        return f"[{self.subject_type_label}]"

    def to_json(self) -> dict:
        return {
            "subject_type_label": self.subject_type_label,
            "turns": [[t.predicate_label, t.qualifier_label] for t in self.turns],
            "interaction": self.interaction,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FactSignature":
        return cls(
            subject_type_label=payload["subject_type_label"],
            turns=tuple(SignatureTurn(p, q) for p, q in payload["turns"]),
            interaction=payload["interaction"],
        )


def signature_key(sig: FactSignature) -> str:
    return content_hash(canonical_json(sig.to_json()))


def expected_families(sig: FactSignature) -> tuple[str, ...]:
    if sig.is_qualified:
        return TEXT_FAMILIES
    return VOICE_FAMILIES if sig.interaction == VOICE else TEXT_FAMILIES


@dataclass(frozen=True)
class TurnTemplates:
    families: Mapping[str, tuple[str, str, str]]
    answer: str

    def to_json(self) -> dict:
        return {
            "families": {name: list(v) for name, v in self.families.items()},
            "answer": self.answer,
        }


@dataclass(frozen=True)
class TemplateSet:
    signature: FactSignature
    turns: Mapping[int, TurnTemplates]

    def to_json(self) -> dict:
        return {
            "signature": self.signature.to_json(),
            "turns": {str(k): self.turns[k].to_json() for k in sorted(self.turns)},
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TemplateSet":
        sig = FactSignature.from_json(payload["signature"])
        turns = {
            int(k): TurnTemplates(
                families={name: tuple(v) for name, v in spec["families"].items()},
                answer=spec["answer"],
            )
            for k, spec in payload["turns"].items()
        }
        return cls(signature=sig, turns=turns)


# --- prompt building --------------------------------------------------------


def _turn_rows(sig: FactSignature) -> str:
    rows = []
    for i, turn in enumerate(sig.turns, start=1):
        if turn.qualifier_label is not None:
            inner = f"[{sig.subject_type_label}], {turn.predicate_label}, {turn.qualifier_label}, {object_placeholder(i)}"
        else:
            inner = f"[{sig.subject_type_label}], {turn.predicate_label}, {object_placeholder(i)}"
        rows.append(f"Turn {i}: ({inner})")
    return "\n".join(rows)


def _compose_user(preamble: str, sig: FactSignature) -> str:
    return preamble.format(count=len(sig.turns)) + "\n\n# Triples\n" + _turn_rows(sig)


def build_voice_prompt(sig: FactSignature, *, model_profile: str = "templates") -> ChatRequest:
    if sig.interaction != VOICE:
        raise ContractViolation("voice prompt requires a voice signature")
    if any(t.qualifier_label is not None for t in sig.turns):
        raise ContractViolation("voice prompt does not take qualifier rows")
    return ChatRequest(
        system=prompts.VOICE_TEMPLATE_SYSTEM,
        user=_compose_user(prompts.VOICE_TEMPLATE_USER_PREAMBLE, sig),
        in_context_examples=prompts.VOICE_EXAMPLES,
        model_profile=model_profile,
    )


def build_text_prompt(sig: FactSignature, *, model_profile: str = "templates") -> ChatRequest:
    """Search-style prompt; question words are suppressed via logit penalties."""
    if sig.interaction != TEXT:
        raise ContractViolation("text prompt requires a text signature")
    if any(t.qualifier_label is not None for t in sig.turns):
        raise ContractViolation("text prompt does not take qualifier rows")
    return ChatRequest(
        system=prompts.TEXT_TEMPLATE_SYSTEM,
        user=_compose_user(prompts.TEXT_TEMPLATE_USER_PREAMBLE, sig),
        in_context_examples=prompts.TEXT_EXAMPLES,
        logit_penalties={word: WH_PENALTY for word in WH_WORDS},
        model_profile=model_profile,
    )


def build_qualified_prompt(sig: FactSignature, *, model_profile: str = "templates") -> ChatRequest:
    if not sig.is_qualified:
        raise ContractViolation("qualified prompt requires a qualifier label on every turn")
    return ChatRequest(
        system=prompts.QUALIFIED_TEMPLATE_SYSTEM,
        user=_compose_user(prompts.QUALIFIED_TEMPLATE_USER_PREAMBLE, sig),
        in_context_examples=prompts.QUALIFIED_EXAMPLES,
        logit_penalties={word: WH_PENALTY for word in WH_WORDS},
        model_profile=model_profile,
    )


def build_template_prompt(sig: FactSignature, *, model_profile: str = "templates") -> ChatRequest:
    if sig.is_qualified:
        return build_qualified_prompt(sig, model_profile=model_profile)
    if sig.interaction == VOICE:
        return build_voice_prompt(sig, model_profile=model_profile)
    return build_text_prompt(sig, model_profile=model_profile)


# --- response parsing and validation ----------------------------------------


@dataclass(frozen=True)
class TemplateViolation:
    rule: str
    turn: int | None = None
    family: str | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = []
        if self.turn is not None:
            where.append(f"turn {self.turn}")
        if self.family:
            where.append(self.family)
        location = " ".join(where) or "set"
        return f"{self.rule} ({location}): {self.detail}" if self.detail else f"{self.rule} ({location})"


def _extract_json_object(text: str) -> dict:
    stripped = text.strip()
    try:
        payload = json.loads(stripped)
        if isinstance(payload, dict):
            return payload
    except json.JSONDecodeError:
        pass
    # tolerate prose around the JSON object; scan balanced braces string-aware
    for start in (i for i, ch in enumerate(text) if ch == "{"):
        depth = 0
        in_string = False
        escaped = False
        for end in range(start, len(text)):
            ch = text[end]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        payload = json.loads(text[start : end + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(payload, dict):
                        return payload
                    break
        # no balanced object from this start; try the next brace
    raise TemplateParseError("no JSON object found in response", raw_text=text)


def _check_placeholders(
    question: str,
    sig: FactSignature,
    turn: int,
    family: str,
    violations: list[TemplateViolation],
) -> None:
    own = turn_letter(turn)
    predicates = [t.predicate_label for t in sig.turns]
    for match in _OBJECT_PLACEHOLDER_RE.finditer(question):
        letter = match.group(1)
        if letter == sig.subject_type_label:
            continue  # single-character type label, not an object slot
        other = ord(letter) - ord("a") + 1
        if letter == own:
            violations.append(
                TemplateViolation("object-in-question", turn, family, f"contains own placeholder [{letter}]")
            )
        elif not 1 <= other <= len(sig.turns):
            violations.append(
                TemplateViolation("unknown-placeholder", turn, family, f"[{letter}] maps to no turn")
            )
        elif not sig.is_qualified:
            violations.append(
                TemplateViolation("cross-turn-object", turn, family, f"[{letter}] not allowed outside qualified sets")
            )
        elif predicates[other - 1] != predicates[turn - 1]:
            violations.append(
                TemplateViolation(
                    "cross-turn-object", turn, family, f"[{letter}] belongs to a different predicate"
                )
            )


def validate_template_payload(payload: dict, sig: FactSignature) -> tuple[TemplateSet | None, list[TemplateViolation]]:
    """Structural validation; returns (set or None, violations)."""
    violations: list[TemplateViolation] = []
    families = expected_families(sig)
    wh_checked = sig.interaction == TEXT or sig.is_qualified

    turns: dict[int, dict] = {}
    for key, value in payload.items():
        try:
            turn = int(key)
        except (TypeError, ValueError):
            violations.append(TemplateViolation("turn-key", detail=f"non-integer key {key!r}"))
            continue
        turns[turn] = value

    expected_turns = set(range(1, len(sig.turns) + 1))
    for missing in sorted(expected_turns - set(turns)):
        violations.append(TemplateViolation("missing-turn", missing))
    for extra in sorted(set(turns) - expected_turns):
        violations.append(TemplateViolation("unexpected-turn", extra))

    parsed_turns: dict[int, TurnTemplates] = {}
    for turn in sorted(expected_turns & set(turns)):
        spec = turns[turn]
        if not isinstance(spec, dict):
            violations.append(TemplateViolation("turn-shape", turn, detail="turn value is not an object"))
            continue
        for unexpected in sorted(set(spec) - set(families) - {"answer"}):
            violations.append(TemplateViolation("unexpected-family", turn, unexpected))
        answer = spec.get("answer")
        if answer != object_placeholder(turn):
            violations.append(
                TemplateViolation(
                    "answer-mismatch", turn, detail=f"expected {object_placeholder(turn)!r}, got {answer!r}"
                )
            )
        family_map: dict[str, tuple[str, str, str]] = {}
        for family in families:
            variants = spec.get(family)
            if variants is None:
                violations.append(TemplateViolation("missing-family", turn, family))
                continue
            if not isinstance(variants, list) or not all(isinstance(v, str) and v for v in variants):
                violations.append(
                    TemplateViolation("variant-type", turn, family, "variants must be non-empty strings")
                )
                continue
            if len(variants) != VARIANTS_PER_FAMILY:
                violations.append(
                    TemplateViolation(
                        "variant-count", turn, family, f"expected {VARIANTS_PER_FAMILY}, got {len(variants)}"
                    )
                )
                continue
            for question in variants:
                if family == "original" and sig.subject_placeholder not in question:
                    violations.append(
                        TemplateViolation(
                            "missing-subject", turn, family, f"original lacks {sig.subject_placeholder!r}"
                        )
                    )
                if wh_checked and WH_START_RE.match(question.strip().lower()):
                    violations.append(
                        TemplateViolation("wh-word-initial", turn, family, question[:40])
                    )
                _check_placeholders(question, sig, turn, family, violations)
            family_map[family] = tuple(variants)
        if len(family_map) == len(families):
            parsed_turns[turn] = TurnTemplates(families=family_map, answer=str(answer))

    if violations:
        return None, violations
    return TemplateSet(signature=sig, turns=parsed_turns), violations


def parse_template_response(text: str, sig: FactSignature, *, strict: bool = False) -> TemplateSet:
    """Total parser: returns a validated set or raises a typed, structured error."""
    if strict:
        try:
            payload = json.loads(text.strip())
        except json.JSONDecodeError as exc:
            raise TemplateParseError(f"strict JSON parse failed: {exc.msg}", raw_text=text) from exc
        if not isinstance(payload, dict):
            raise TemplateParseError("strict mode requires a top-level JSON object", raw_text=text)
    else:
        payload = _extract_json_object(text)
    template_set, violations = validate_template_payload(payload, sig)
    if template_set is None:
        raise TemplateValidationError(violations)
    return template_set


# --- cache -------------------------------------------------------------------


class TemplateCache:
    """Content-addressed persistent cache: one JSON file per signature hash,
    holding the raw model response and the validated set. Corrupt entries are
    treated as misses."""

    def __init__(self, directory: Path | str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, sig: FactSignature) -> Path:
        return self.directory / f"{signature_key(sig)}.json"

    def get(self, sig: FactSignature) -> TemplateSet | None:
        path = self.path_for(sig)
        if not path.exists():
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            return TemplateSet.from_json(payload["template_set"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ContractViolation) as exc:
            logger.warning("corrupt template cache entry %s (%s); treating as miss", path.name, exc)
            return None

    def put(self, sig: FactSignature, template_set: TemplateSet, raw_response: str | None = None) -> Path:
        path = self.path_for(sig)
        payload = {
            "schema_version": 1,
            "signature": sig.to_json(),
            "raw_response": raw_response,
            "template_set": template_set.to_json(),
        }
        path.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )
        return path


@dataclass
class QuarantinedSignature:
    signature: FactSignature
    reason: str


def ensure_templates(
    gateway: Gateway,
    signatures: Iterable[FactSignature],
    cache: TemplateCache,
    *,
    retries: int = 3,
    model_profile: str = "templates",
) -> tuple[dict[str, TemplateSet], list[QuarantinedSignature]]:
    """Resolve every signature to a validated set, via cache or the gateway.

    A signature failing validation ``retries`` times is quarantined and
    excluded rather than aborting the run.
    """
    resolved: dict[str, TemplateSet] = {}
    quarantined: list[QuarantinedSignature] = []
    for sig in signatures:
        key = signature_key(sig)
        if key in resolved:
            continue
        cached = cache.get(sig)
        if cached is not None:
            resolved[key] = cached
            continue
        request = build_template_prompt(sig, model_profile=model_profile)
        last_error = "no attempt made"
        for _ in range(max(1, retries)):
            try:
                raw = gateway.chat(request)
            except GatewayError as exc:
                last_error = f"gateway: {exc}"
                continue
            try:
                template_set = parse_template_response(raw, sig)
            except (TemplateParseError, TemplateValidationError) as exc:
                last_error = str(exc)
                continue
            cache.put(sig, template_set, raw_response=raw)
            resolved[key] = template_set
            break
        else:
            logger.warning("quarantining signature %s: %s", key[:12], last_error)
            quarantined.append(QuarantinedSignature(signature=sig, reason=last_error))
    return resolved, quarantined
