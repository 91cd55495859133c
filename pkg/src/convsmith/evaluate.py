"""Turn-by-turn model evaluation with gold history and a binary judge.

The candidate model answers each question with the *gold* conversational
history replayed before it (never its own prior outputs). A judge model then
rates the whole conversation's candidates against the gold answers in one
request. Metrics: mean rating over all turns, mean of per-conversation mean
ratings, and the NA ratio. NA turns count as rating 0 in both means; the NA
ratio is computed from parsed NA flags only, never from judge output.
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import prompts
from .errors import AnswerParseError, ContractViolation, GatewayError, JudgeParseError
from .gateway import ChatRequest, Gateway

logger = logging.getLogger(__name__)

_ANSWER_LINE_RE = re.compile(r"Answer:\s*(.*)", re.DOTALL)
_RATINGS_RE = re.compile(r"Ratings:\s*(\[.*?\])", re.DOTALL)
_BRACKET_RE = re.compile(r"\[.*?\]", re.DOTALL)


@dataclass
class AnswerRecord:
    turn_index: int
    raw: str
    values: tuple[str, ...]
    is_na: bool = False
    is_list: bool = False
    nonconforming: bool = False

    def candidate_text(self) -> str:
        """Single-line rendering for the judge block (NA stays literal)."""
        if self.is_na:
            return "NA"
        flat = [" ".join(value.split()) for value in self.values]
        if self.is_list:
            return "[" + ", ".join(flat) + "]"
        return flat[0] if flat else ""


def render_gold_history(gold_primary: Sequence[str]) -> str:
    """Assistant-side text for a replayed gold turn: bare string, or a
    pythonic list when the turn has multiple answers."""
    if len(gold_primary) == 1:
        return gold_primary[0]
    return "[" + ", ".join(repr(g) for g in gold_primary) + "]"


def build_answer_request(
    history: Sequence[tuple[str, str]], question: str, *, model_profile: str = "answerer"
) -> ChatRequest:
    """History pairs are (question, gold answer text) from *gold* data."""
    return ChatRequest(
        system=prompts.ANSWER_SYSTEM,
        user=question,
        in_context_examples=tuple(history),
        model_profile=model_profile,
    )


def parse_answer(text: str, turn_index: int = 0) -> AnswerRecord:
    """Extract the final ``Answer:`` line; NA only when that line is exactly
    ``Answer: NA``. Text with no such line becomes a single nonconforming
    answer; empty text is a parse error."""
    stripped = text.strip()
    if not stripped:
        raise AnswerParseError("empty answer text")
    answer_line = None
    for line in stripped.splitlines():
        if "Answer:" in line:
            answer_line = line
    if answer_line is None:
        return AnswerRecord(
            turn_index=turn_index, raw=text, values=(stripped,), nonconforming=True
        )
    payload = _ANSWER_LINE_RE.search(answer_line).group(1).strip()
    if answer_line.strip() == "Answer: NA":
        return AnswerRecord(turn_index=turn_index, raw=text, values=(), is_na=True)
    if payload.startswith("["):
        values = _parse_list_payload(payload)
        return AnswerRecord(turn_index=turn_index, raw=text, values=values, is_list=True)
    return AnswerRecord(turn_index=turn_index, raw=text, values=(payload,))


def _parse_list_payload(payload: str) -> tuple[str, ...]:
    try:
        parsed = ast.literal_eval(payload)
        if isinstance(parsed, (list, tuple)):
            return tuple(str(item) for item in parsed)
    except (ValueError, SyntaxError):
        pass
    inner = payload.strip()[1:-1] if payload.strip().endswith("]") else payload.strip()[1:]
    return tuple(part.strip().strip("'\"") for part in inner.split(",") if part.strip())


@dataclass
class JudgeTurn:
    question: str
    gold_answers: tuple[str, ...]
    candidate: AnswerRecord


def _render_gold(gold_answers: Sequence[str]) -> str:
    if len(gold_answers) == 1:
        return gold_answers[0]
    return "[" + ", ".join(gold_answers) + "]"


def build_judge_request(turns: Sequence[JudgeTurn], *, model_profile: str = "judge") -> ChatRequest:
    if not turns:
        raise ContractViolation("cannot judge an empty conversation")
    blocks = []
    for turn in turns:
        blocks.append(
            f"Question: {turn.question}\n\n"
            f"Gold Answers: {_render_gold(turn.gold_answers)}\n"
            f"Candidates: {turn.candidate.candidate_text()}"
        )
    return ChatRequest(
        system=prompts.JUDGE_SYSTEM,
        user="\n\n".join(blocks),
        model_profile=model_profile,
    )


def parse_ratings(text: str, expected_turns: int) -> tuple[int, ...]:
    """A ``Ratings:`` list (or the first bracketed list) of exactly
    ``expected_turns`` binary elements."""
    if expected_turns < 1:
        raise ContractViolation("expected_turns must be positive")
    match = _RATINGS_RE.search(text) or _BRACKET_RE.search(text)
    if not match:
        raise JudgeParseError("no ratings list in judge response")
    region = match.group(1) if match.re is _RATINGS_RE else match.group(0)
    try:
        parsed = ast.literal_eval(region)
    except (ValueError, SyntaxError) as exc:
        raise JudgeParseError(f"unparseable ratings list: {exc}") from exc
    if not isinstance(parsed, (list, tuple)):
        raise JudgeParseError("ratings payload is not a list")
    ratings = []
    for item in parsed:
        if isinstance(item, bool) or item not in (0, 1, "0", "1"):
            raise JudgeParseError(f"non-binary rating element: {item!r}")
        ratings.append(int(item))
    if len(ratings) != expected_turns:
        raise JudgeParseError(f"expected {expected_turns} ratings, got {len(ratings)}")
    return tuple(ratings)


@dataclass
class ConversationScore:
    conversation_id: str
    config_tag: str
    ratings: tuple[int, ...]
    na_flags: tuple[bool, ...]

    def __post_init__(self):
        if len(self.ratings) != len(self.na_flags):
            raise ContractViolation("ratings and NA flags must align")
        # NA turns always score 0, whatever the judge said
        self.ratings = tuple(
            0 if na else rating for rating, na in zip(self.ratings, self.na_flags)
        )

    @property
    def mean(self) -> float:
        return sum(self.ratings) / len(self.ratings)


@dataclass
class EvalReport:
    mean_turn: float
    mean_conv: float
    na_ratio: float
    total_turns: int
    total_conversations: int
    per_config: dict[str, dict] = field(default_factory=dict)
    unscored: tuple[str, ...] = ()
    per_conversation: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mean_turn": self.mean_turn,
            "mean_conv": self.mean_conv,
            "na_ratio": self.na_ratio,
            "total_turns": self.total_turns,
            "total_conversations": self.total_conversations,
            "per_config": self.per_config,
            "unscored": list(self.unscored),
            "per_conversation": self.per_conversation,
        }


def _aggregate(scores: Sequence[ConversationScore]) -> tuple[float, float, float, int]:
    total_turns = sum(len(s.ratings) for s in scores)
    mean_turn = sum(sum(s.ratings) for s in scores) / total_turns
    mean_conv = sum(s.mean for s in scores) / len(scores)
    na_ratio = sum(sum(s.na_flags) for s in scores) / total_turns
    return mean_turn, mean_conv, na_ratio, total_turns


def compute_metrics(
    scores: Sequence[ConversationScore], unscored: Sequence[str] = ()
) -> EvalReport:
    if not scores:
        raise ContractViolation("no scored conversations to aggregate")
    mean_turn, mean_conv, na_ratio, total_turns = _aggregate(scores)
    per_config: dict[str, dict] = {}
    for tag in sorted({s.config_tag for s in scores}):
        subset = [s for s in scores if s.config_tag == tag]
        c_turn, c_conv, c_na, c_total = _aggregate(subset)
        per_config[tag] = dict(_tag_columns(tag))
        per_config[tag].update(
            {
                "mean_turn": c_turn,
                "mean_conv": c_conv,
                "na_ratio": c_na,
                "turns": c_total,
                "conversations": len(subset),
            }
        )
    return EvalReport(
        mean_turn=mean_turn,
        mean_conv=mean_conv,
        na_ratio=na_ratio,
        total_turns=total_turns,
        total_conversations=len(scores),
        per_config=per_config,
        unscored=tuple(unscored),
        per_conversation=[
            {
                "id": s.conversation_id,
                "config": s.config_tag,
                "ratings": list(s.ratings),
                "na_flags": [int(f) for f in s.na_flags],
                "mean": s.mean,
            }
            for s in scores
        ],
    )


def _tag_columns(tag: str) -> dict:
    """Explicit report columns (interaction, deixis, disfluency, typo, related)
    recovered from a config tag like ``voice-dx1-df0-rel0``."""
    parts = tag.split("-")
    columns: dict = {"interaction": parts[0], "deixis": None, "disfluency": None, "typo": None, "related": None}
    for part in parts[1:]:
        if part.startswith("dx"):
            columns["deixis"] = bool(int(part[2:]))
        elif part.startswith("df"):
            columns["disfluency"] = bool(int(part[2:]))
        elif part.startswith("ty"):
            columns["typo"] = bool(int(part[2:]))
        elif part.startswith("rel"):
            columns["related"] = bool(int(part[3:]))
    return columns


def _config_tag(config: Mapping) -> str:
    bits = [config.get("interaction", "?"), f"dx{int(bool(config.get('deixis')))}"]
    if config.get("interaction") == "voice":
        bits.append(f"df{int(bool(config.get('disfluency')))}")
    else:
        bits.append(f"ty{int(bool(config.get('typo')))}")
    bits.append(f"rel{int(bool(config.get('related')))}")
    return "-".join(bits)


def evaluate_conversations(
    rows: Iterable[Mapping],
    answerer: Gateway,
    judge: Gateway,
    *,
    judge_retries: int = 1,
) -> EvalReport:
    """Run the full protocol over dataset rows (as written by the generator).

    Answer requests within a conversation are strictly sequential; a judge
    response that fails to parse is retried once, then the conversation is
    excluded from the means and listed as unscored.
    """
    scores: list[ConversationScore] = []
    unscored: list[str] = []
    for row in rows:
        turns = row.get("turns", [])
        if not turns:
            continue
        history: list[tuple[str, str]] = []
        judge_turns: list[JudgeTurn] = []
        na_flags: list[bool] = []
        for turn in turns:
            request = build_answer_request(history, turn["question"])
            try:
                raw = answerer.chat(request)
                record = parse_answer(raw, turn_index=turn["index"])
            except (GatewayError, AnswerParseError) as exc:
                logger.warning("turn %s of %s unanswerable (%s)", turn["index"], row.get("id"), exc)
                record = AnswerRecord(
                    turn_index=turn["index"], raw="", values=("",), nonconforming=True
                )
            na_flags.append(record.is_na)
            judge_turns.append(
                JudgeTurn(
                    question=turn["question"],
                    gold_answers=tuple(turn["gold_answers"]),
                    candidate=record,
                )
            )
            history.append((turn["question"], render_gold_history(turn["gold_primary"])))
        request = build_judge_request(judge_turns)
        ratings: tuple[int, ...] | None = None
        for _ in range(1 + max(0, judge_retries)):
            try:
                ratings = parse_ratings(judge.chat(request), len(judge_turns))
                break
            except (GatewayError, JudgeParseError) as exc:
                last_error = exc
        if ratings is None:
            logger.warning("conversation %s unscored: %s", row.get("id"), last_error)
            unscored.append(str(row.get("id")))
            continue
        scores.append(
            ConversationScore(
                conversation_id=str(row.get("id")),
                config_tag=_config_tag(row.get("config", {})),
                ratings=ratings,
                na_flags=tuple(na_flags),
            )
        )
    report = compute_metrics(scores, unscored)
    _self_check(report, scores)
    return report


def _self_check(report: EvalReport, scores: Sequence[ConversationScore]) -> None:
    """Recompute the headline numbers with a plain fold; refuse to emit a
    report that disagrees with its own raw ratings."""
    flat = [r for s in scores for r in s.ratings]
    nas = [f for s in scores for f in s.na_flags]
    assert abs(report.mean_turn - sum(flat) / len(flat)) < 1e-12
    assert abs(report.na_ratio - sum(nas) / len(nas)) < 1e-12
    per_conv = [sum(s.ratings) / len(s.ratings) for s in scores]
    assert abs(report.mean_conv - sum(per_conv) / len(per_conv)) < 1e-12
