"""Deterministic offline gateways.

One stand-in per model role, so the whole pipeline runs end-to-end with no
credentials: the selector echoes every batch id, the template synthesizer
emits schema-valid template JSON from the request's turn rows, the answerer
produces hash-derived answers (refusing every fourth question), and the judge
string-matches candidates against gold answers. All are pure functions of the
request content.
"""

from __future__ import annotations

import ast
import json
import re

from .errors import GatewayError
from .gateway import ChatRequest, Gateway
from .util import content_hash

_TURN_ROW_RE = re.compile(r"^Turn (\d+): \((.*)\)\s*$", re.MULTILINE)
_PREDICATES_RE = re.compile(r"Predicates: (\[.*\])", re.DOTALL)
_JUDGE_BLOCK_RE = re.compile(r"Gold Answers: (.*)\nCandidates: (.*)")


class OfflineSelectorGateway(Gateway):
    """Selects every predicate id in the batch, in table order."""

    def chat(self, request: ChatRequest) -> str:
        match = _PREDICATES_RE.search(request.user)
        if not match:
            raise GatewayError("selector request carries no predicate table")
        try:
            rows = ast.literal_eval(match.group(1))
        except (ValueError, SyntaxError) as exc:
            raise GatewayError(f"unreadable predicate table: {exc}") from exc
        ids = []
        for row in rows:
            token = row[0] if isinstance(row, (list, tuple)) else row
            if token not in ids:
                ids.append(token)
        return repr(ids)


def _parse_turn_rows(user: str) -> list[tuple[str, str, str | None]]:
    """(type label, predicate label, qualifier label) per requested turn.

    Rows are split on ', '; labels containing that separator would mis-split,
    which is acceptable for a synthesizer mock.
    """
    rows = []
    for match in _TURN_ROW_RE.finditer(user.split("# Triples")[-1]):
        parts = match.group(2).split(", ")
        subject = parts[0].strip("[]")
        if len(parts) >= 4:
            rows.append((subject, parts[1], parts[2]))
        else:
            rows.append((subject, parts[1], None))
    return rows


class OfflineTemplateGateway(Gateway):
    """Synthesizes a valid template-set response for any template request."""

    def chat(self, request: ChatRequest) -> str:
        rows = _parse_turn_rows(request.user)
        if not rows:
            raise GatewayError("template request carries no turn rows")
        voice = "disfluencies" in request.system
        qualified = "relationship predicate" in request.system
        payload = {}
        for turn, (subject, predicate, qualifier) in enumerate(rows, start=1):
            letter = chr(ord("a") + turn - 1)
            if qualified:
                sibling = None
                for other, other_row in enumerate(rows, start=1):
                    if other != turn and other_row[1] == predicate:
                        sibling = chr(ord("a") + other - 1)
                        break
                original = [
                    f"[{subject}] {predicate} {qualifier}",
                    f"{qualifier} for the {predicate} of [{subject}]",
                    f"[{subject}] {predicate} by {qualifier}",
                ]
                if sibling is not None:
                    original[1] = f"{qualifier} of [{sibling}] in [{subject}]"
                deixis = [
                    f"their {predicate} {qualifier}",
                    f"and the {qualifier} of that {predicate}",
                    f"its {predicate} by {qualifier}",
                ]
                spec = {"original": original, "deixis": deixis}
            elif voice:
                spec = {
                    "original": [
                        f"what is the {predicate} of [{subject}]",
                        f"can you tell me the {predicate} of [{subject}]",
                        f"do you know the {predicate} of [{subject}]",
                    ],
                    "deixis": [
                        f"what is their {predicate}",
                        f"can you tell me their {predicate}",
                        f"do you know their {predicate}",
                    ],
                    "disfluencies": [
                        f"um what is the {predicate} of [{subject}]",
                        f"uh can you tell me the {predicate} of [{subject}]",
                        f"hmm do you know the {predicate} of [{subject}]",
                    ],
                    "deixis_disfluencies": [
                        f"um what is their {predicate}",
                        f"uh can you tell me their {predicate}",
                        f"hmm do you know their {predicate}",
                    ],
                }
            else:
                spec = {
                    "original": [
                        f"[{subject}] {predicate}",
                        f"{predicate} of [{subject}]",
                        f"[{subject}] {predicate} info",
                    ],
                    "deixis": [
                        f"their {predicate}",
                        f"the {predicate} of that one",
                        f"also their {predicate}",
                    ],
                }
            spec["answer"] = f"[{letter}]"
            payload[str(turn)] = spec
        return json.dumps(payload, ensure_ascii=False)


class OfflineAnswerGateway(Gateway):
    """Hash-derived answers: deterministic, wrong, and occasionally refusing."""

    def chat(self, request: ChatRequest) -> str:
        digest = content_hash(request.user)
        if int(digest[:8], 16) % 4 == 0:
            return "Answer: NA"
        return f"Answer: fact-{digest[:8]}"


class OfflineJudgeGateway(Gateway):
    """Rates 1 when any candidate string matches any gold answer (case-folded)."""

    def chat(self, request: ChatRequest) -> str:
        ratings = []
        for gold_text, candidate_text in _JUDGE_BLOCK_RE.findall(request.user):
            golds = {g.lower() for g in _split_values(gold_text)}
            candidates = [c.lower() for c in _split_values(candidate_text)]
            hit = any(c in golds for c in candidates if c and c != "na")
            ratings.append(1 if hit else 0)
        if not ratings:
            raise GatewayError("judge request carries no turn blocks")
        return f"Ratings: {ratings!r}"


def _split_values(text: str) -> list[str]:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        return [part.strip().strip("'\"") for part in text[1:-1].split(",") if part.strip()]
    return [text]


OFFLINE_ROLES = {
    "selector": OfflineSelectorGateway,
    "templates": OfflineTemplateGateway,
    "answerer": OfflineAnswerGateway,
    "judge": OfflineJudgeGateway,
}


def offline_gateway(role: str) -> Gateway:
    try:
        return OFFLINE_ROLES[role]()
    except KeyError:
        raise GatewayError(f"no offline gateway for role {role!r}") from None
