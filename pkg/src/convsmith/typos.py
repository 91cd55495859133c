"""Character-level typo injection: exactly one typo per question turn.

One eligible word is altered by one of three attacks chosen at random:
random character deletion, neighboring character swap, or substitution with
a QWERTY-adjacent key. Ineligible draws are redrawn without replacement; a
question with no eligible word is returned unchanged and flagged.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from random import Random

from .errors import IneligibleWordError

MIN_WORD_LENGTH = 3

ATTACK_KINDS = ("random_char_deletion", "neighboring_char_swap", "qwerty_substitution")

# Standard QWERTY layout, letters only. Values are ordered strings so draws
# are deterministic under a seeded rng; the table is symmetric and no key is
# adjacent to itself (checked by tests).
QWERTY_ADJACENCY: dict[str, str] = {
    "q": "wa",
    "w": "qeas",
    "e": "wrsd",
    "r": "etdf",
    "t": "ryfg",
    "y": "tugh",
    "u": "yihj",
    "i": "uojk",
    "o": "ipkl",
    "p": "ol",
    "a": "qwsz",
    "s": "weadzx",
    "d": "ersfxc",
    "f": "rtdgcv",
    "g": "tyfhvb",
    "h": "yugjbn",
    "j": "uihknm",
    "k": "iojlm",
    "l": "opk",
    "z": "asx",
    "x": "zsdc",
    "c": "xdfv",
    "v": "cfgb",
    "b": "vghn",
    "n": "bhjm",
    "m": "njk",
}


def random_char_deletion(word: str, rng: Random) -> str:
    if len(word) < MIN_WORD_LENGTH:
        raise IneligibleWordError(f"word too short for deletion: {word!r}")
    index = rng.randrange(len(word))
    return word[:index] + word[index + 1 :]


def neighboring_char_swap(word: str, rng: Random) -> str:
    if len(word) < MIN_WORD_LENGTH:
        raise IneligibleWordError(f"word too short for swap: {word!r}")
    positions = [i for i in range(len(word) - 1) if word[i] != word[i + 1]]
    if not positions:
        raise IneligibleWordError(f"no unequal adjacent pair in {word!r}")
    i = rng.choice(positions)
    return word[:i] + word[i + 1] + word[i] + word[i + 2 :]


def qwerty_substitution(word: str, rng: Random) -> str:
    if len(word) < MIN_WORD_LENGTH:
        raise IneligibleWordError(f"word too short for substitution: {word!r}")
    positions = [i for i, ch in enumerate(word) if ch.lower() in QWERTY_ADJACENCY]
    if not positions:
        raise IneligibleWordError(f"no substitutable letter in {word!r}")
    i = rng.choice(positions)
    original = word[i]
    neighbor = rng.choice(QWERTY_ADJACENCY[original.lower()])
    if original.isupper():
        neighbor = neighbor.upper()
    return word[:i] + neighbor + word[i + 1 :]


_ATTACKS = {
    "random_char_deletion": random_char_deletion,
    "neighboring_char_swap": neighboring_char_swap,
    "qwerty_substitution": qwerty_substitution,
}

_SEGMENT_RE = re.compile(r"\S+|\s+")


@dataclass(frozen=True)
class TypoReport:
    augmented: bool
    word_index: int | None = None
    attack: str | None = None
    before: str | None = None
    after: str | None = None

    def to_json(self) -> dict:
        return {
            "augmented": self.augmented,
            "word_index": self.word_index,
            "attack": self.attack,
            "before": self.before,
            "after": self.after,
        }


def _eligible(word: str) -> bool:
    if len(word) < MIN_WORD_LENGTH:
        return False
    if "[" in word or "]" in word:
        return False  # never corrupt a slot remnant
    alpha = sum(1 for ch in word if ch.isalpha())
    return alpha * 2 > len(word)


def augment_turn(question: str, rng: Random) -> tuple[str, TypoReport]:
    """Apply exactly one typo to one eligible word; all other bytes unchanged.

    Eligible means length >= 3 with an alphabetic majority. Word and attack
    are drawn uniformly and redrawn without replacement when an attack cannot
    apply; with no eligible word the question comes back unchanged with an
    unaugmentable report.
    """
    segments = _SEGMENT_RE.findall(question)
    word_slots = [i for i, seg in enumerate(segments) if not seg.isspace()]
    candidates = [i for i in word_slots if _eligible(segments[i])]

    while candidates:
        pick = rng.randrange(len(candidates))
        slot = candidates.pop(pick)
        word = segments[slot]
        attacks = list(ATTACK_KINDS)
        while attacks:
            attack = attacks.pop(rng.randrange(len(attacks)))
            try:
                mutated = _ATTACKS[attack](word, rng)
            except IneligibleWordError:
                continue
            if mutated == word:
                continue
            segments[slot] = mutated
            report = TypoReport(
                augmented=True,
                word_index=word_slots.index(slot),
                attack=attack,
                before=word,
                after=mutated,
            )
            return "".join(segments), report

    return question, TypoReport(augmented=False)
