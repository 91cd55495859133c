"""Assemble slot-filled conversations from facts and cached template sets.

Assembly rules: the first turn never uses a deixis family; predicates in the
same grouping rule occupy adjacent turns when co-selected; qualified facts of
one predicate keep their extraction order; related-entity facts form a
contiguous suffix block. Every question must leave the assembler free of
placeholder brackets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import AssemblyError, ContractViolation
from .facts import QUALIFIED, Fact, fact_pools
from .kgstore import KgStore
from .predicates import SelectedPredicates
from .related import RelatedPair
from .templates import (
    DERIVED_TEXT_FAMILIES,
    INTERACTIONS,
    MAX_TEMPLATE_TURNS,
    TEXT,
    TEXT_FAMILIES,
    VOICE,
    VOICE_FAMILIES,
    FactSignature,
    SignatureTurn,
    TemplateSet,
    object_placeholder,
    signature_key,
)
from .typos import TypoReport, augment_turn
from .util import derive_rng

DEFAULT_TURNS = 5
DEFAULT_RELATED_TURNS = 2
DEFAULT_FOLLOWUP_FACTS = 5
FOLLOWUP_VARIANTS = 3
FOLLOWUP_INTERACTIONS = 2

# Default grouping: birth date and birth place stay on adjacent turns.
DEFAULT_GROUPS: tuple[frozenset[str], ...] = (frozenset({"P569", "P19"}),)


@dataclass(frozen=True)
class PredicateGroupingRules:
    groups: tuple[frozenset[str], ...] = DEFAULT_GROUPS

    def __post_init__(self):
        seen: set[str] = set()
        for group in self.groups:
            overlap = seen & group
            if overlap:
                raise ContractViolation(f"grouping rules overlap on {sorted(overlap)}")
            seen |= group

    def group_of(self, predicate: str) -> frozenset[str] | None:
        for group in self.groups:
            if predicate in group:
                return group
        return None


@dataclass(frozen=True)
class ConversationConfig:
    """One cell of the interaction/phenomena grid."""

    interaction: str
    deixis: bool = False
    disfluency: bool = False
    typo: bool = False
    related: bool = False
    turns: int = DEFAULT_TURNS
    seed: int = 0

    def __post_init__(self):
        if self.interaction not in INTERACTIONS:
            raise ContractViolation(f"unknown interaction: {self.interaction}")
        if self.disfluency and self.interaction != VOICE:
            raise ContractViolation("disfluency applies to voice interactions only")
        if self.typo and self.interaction != TEXT:
            raise ContractViolation("typo applies to text interactions only")
        if self.turns < 1:
            raise ContractViolation("turns must be positive")

    def tag(self) -> str:
        bits = [self.interaction, f"dx{int(self.deixis)}"]
        if self.interaction == VOICE:
            bits.append(f"df{int(self.disfluency)}")
        else:
            bits.append(f"ty{int(self.typo)}")
        bits.append(f"rel{int(self.related)}")
        return "-".join(bits)

    def to_json(self) -> dict:
        return {
            "interaction": self.interaction,
            "deixis": self.deixis,
            "disfluency": self.disfluency,
            "typo": self.typo,
            "related": self.related,
            "turns": self.turns,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ConversationConfig":
        return cls(
            interaction=payload["interaction"],
            deixis=bool(payload.get("deixis", False)),
            disfluency=bool(payload.get("disfluency", False)),
            typo=bool(payload.get("typo", False)),
            related=bool(payload.get("related", False)),
            turns=int(payload.get("turns", DEFAULT_TURNS)),
            seed=int(payload.get("seed", 0)),
        )


def config_matrix(*, turns: int = DEFAULT_TURNS, seed: int = 0) -> list[ConversationConfig]:
    """The full 16-setting grid: interaction x deixis x (disfluency | typo) x related."""
    configs = []
    for related in (False, True):
        for deixis in (False, True):
            for disfluency in (False, True):
                configs.append(
                    ConversationConfig(
                        interaction=VOICE,
                        deixis=deixis,
                        disfluency=disfluency,
                        related=related,
                        turns=turns,
                        seed=seed,
                    )
                )
        for deixis in (False, True):
            for typo in (False, True):
                configs.append(
                    ConversationConfig(
                        interaction=TEXT,
                        deixis=deixis,
                        typo=typo,
                        related=related,
                        turns=turns,
                        seed=seed,
                    )
                )
    return configs


@dataclass
class ConversationTurn:
    index: int
    question: str
    gold_answers: tuple[str, ...]
    gold_primary: tuple[str, ...]
    fact: Fact
    family: str
    variant: int
    typo: TypoReport | None = None


@dataclass
class Conversation:
    id: str
    primary_entity: str
    primary_type: str
    related_entity: str | None
    config: ConversationConfig
    turns: list[ConversationTurn]
    short: bool = False


# --- fact sequence planning --------------------------------------------------


def _arrange_block(pairs: list[tuple[int, Fact]], rules: PredicateGroupingRules) -> list[tuple[int, Fact]]:
    """Grouping adjacency, then source order for same-predicate qualified facts."""
    emitted: list[tuple[int, Fact]] = []
    done: set[int] = set()
    for pos, (src, fact) in enumerate(pairs):
        if pos in done:
            continue
        done.add(pos)
        emitted.append((src, fact))
        group = rules.group_of(fact.predicate)
        if group is None:
            continue
        for later in range(pos + 1, len(pairs)):
            if later in done:
                continue
            if pairs[later][1].predicate in group:
                done.add(later)
                emitted.append(pairs[later])

    by_predicate: dict[str, list[int]] = {}
    for index, (_, fact) in enumerate(emitted):
        if fact.kind == QUALIFIED:
            by_predicate.setdefault(fact.predicate, []).append(index)
    for positions in by_predicate.values():
        if len(positions) < 2:
            continue
        ordered = sorted((emitted[i] for i in positions), key=lambda pair: pair[0])
        for index, pair in zip(positions, ordered):
            emitted[index] = pair
    return emitted


def plan_fact_sequence(
    facts: Sequence[Fact],
    related_facts: Sequence[Fact] | None,
    rules: PredicateGroupingRules,
    turns: int,
    rng: Random,
    *,
    related_turns: int = DEFAULT_RELATED_TURNS,
) -> list[Fact]:
    """Pick and order the facts for one conversation.

    Related-entity facts, when supplied, fill a contiguous suffix of up to
    ``related_turns`` positions; the rest come from the primary pool.
    """
    if not facts:
        raise ContractViolation("cannot plan a conversation from an empty fact pool")
    suffix_len = 0
    if related_facts:
        suffix_len = min(related_turns, len(related_facts), max(0, turns - 1))
    primary_len = min(turns - suffix_len, len(facts))
    primary_sample = rng.sample(range(len(facts)), primary_len)
    primary = _arrange_block([(i, facts[i]) for i in primary_sample], rules)
    sequence = [fact for _, fact in primary]
    if suffix_len:
        related_sample = rng.sample(range(len(related_facts)), suffix_len)
        suffix = _arrange_block([(i, related_facts[i]) for i in related_sample], rules)
        sequence.extend(fact for _, fact in suffix)
    return sequence


# --- template batching --------------------------------------------------------


@dataclass
class Chunk:
    """A run of consecutive turns sharing one subject and one qualified-ness,
    capped at the five-turn template batch limit."""

    start: int  # 0-based position in the conversation sequence
    facts: list[Fact]
    subject: str
    type_label: str
    qualified: bool

    def signature(self, interaction: str) -> FactSignature:
        rows = tuple(
            SignatureTurn(
                predicate_label=f.predicate_label,
                qualifier_label=f.qualifier_label if f.kind == QUALIFIED else None,
            )
            for f in self.facts
        )
        return FactSignature(
            subject_type_label=self.type_label, turns=rows, interaction=interaction
        )


def chunk_plan(sequence: Sequence[Fact], type_labels: Mapping[str, str]) -> list[Chunk]:
    chunks: list[Chunk] = []
    for position, fact in enumerate(sequence):
        qualified = fact.kind == QUALIFIED
        current = chunks[-1] if chunks else None
        if (
            current is None
            or current.subject != fact.subject
            or current.qualified != qualified
            or len(current.facts) >= MAX_TEMPLATE_TURNS
        ):
            try:
                type_label = type_labels[fact.subject]
            except KeyError:
                raise AssemblyError(f"no type label for subject {fact.subject}") from None
            current = Chunk(
                start=position,
                facts=[],
                subject=fact.subject,
                type_label=type_label,
                qualified=qualified,
            )
            chunks.append(current)
        current.facts.append(fact)
    return chunks


def plan_signatures(
    sequence: Sequence[Fact],
    type_labels: Mapping[str, str],
    interactions: Sequence[str] = INTERACTIONS,
) -> list[FactSignature]:
    sigs = []
    for chunk in chunk_plan(sequence, type_labels):
        for interaction in interactions:
            sigs.append(chunk.signature(interaction))
    return sigs


# --- slot filling --------------------------------------------------------------


@dataclass
class AssemblyContext:
    store: KgStore
    type_labels: dict[str, str]


def _gold_strings(store: KgStore, fact: Fact) -> tuple[tuple[str, ...], tuple[str, ...]]:
    primary = tuple(store.render_value(value) for value in fact.objects)
    answers = list(primary)
    for value in fact.objects:
        if value.kind == "entity" and value.entity_id and value.entity_id in store:
            record = store.get(value.entity_id)
            for alias in (record.label, *record.aliases):
                if alias and alias not in answers:
                    answers.append(alias)
    return tuple(answers), primary


def _family_for(config: ConversationConfig, turn_index: int, available: Iterable[str]) -> str:
    if config.interaction == VOICE:
        family = "disfluencies" if config.disfluency else "original"
        if config.deixis and turn_index > 1:
            family = "deixis_disfluencies" if config.disfluency else "deixis"
    else:
        family = "deixis" if config.deixis and turn_index > 1 else "original"
    available = set(available)
    # qualified template sets carry no disfluency families; degrade gracefully
    while family not in available:
        family = {"deixis_disfluencies": "deixis", "disfluencies": "original"}.get(family, "original")
        if family == "original":
            break
    return family


def _fill(
    template: str,
    chunk: Chunk,
    local_turn: int,
    subject_label: str,
    letter_values: Mapping[int, str],
) -> str:
    question = template.replace(f"[{chunk.type_label}]", subject_label)
    for turn, rendered in letter_values.items():
        if turn == local_turn:
            continue
        question = question.replace(object_placeholder(turn), rendered)
    if "[" in question or "]" in question:
        raise AssemblyError(
            f"unresolved placeholder in question {question!r} (turn {chunk.start + local_turn})"
        )
    return question


def assemble(
    sequence: Sequence[Fact],
    template_sets: Mapping[str, TemplateSet],
    config: ConversationConfig,
    context: AssemblyContext,
    rng: Random,
    *,
    conversation_id: str,
    primary_entity: str,
    primary_type: str,
    related_entity: str | None = None,
    variant: int | None = None,
) -> Conversation:
    """Slot-fill one conversation. ``variant`` pins the template variant for
    every turn (universe mode); otherwise each turn draws one of the three."""
    turns: list[ConversationTurn] = []
    store = context.store
    for chunk in chunk_plan(sequence, context.type_labels):
        signature = chunk.signature(config.interaction)
        key = signature_key(signature)
        template_set = template_sets.get(key)
        if template_set is None:
            raise AssemblyError(f"no template coverage for signature {signature.to_json()}")
        subject_label = store.display(chunk.subject)
        letter_values = {
            local: store.render_value(fact.objects[0])
            for local, fact in enumerate(chunk.facts, start=1)
        }
        for local, fact in enumerate(chunk.facts, start=1):
            index = chunk.start + local
            turn_templates = template_set.turns[local]
            family = _family_for(config, index, turn_templates.families)
            chosen = variant if variant is not None else rng.randrange(3)
            template = turn_templates.families[family][chosen]
            question = _fill(template, chunk, local, subject_label, letter_values)
            typo_report: TypoReport | None = None
            if config.typo:
                question, typo_report = augment_turn(question, rng)
            gold_answers, gold_primary = _gold_strings(store, fact)
            turns.append(
                ConversationTurn(
                    index=index,
                    question=question,
                    gold_answers=gold_answers,
                    gold_primary=gold_primary,
                    fact=fact,
                    family=family,
                    variant=chosen,
                    typo=typo_report,
                )
            )
    return Conversation(
        id=conversation_id,
        primary_entity=primary_entity,
        primary_type=primary_type,
        related_entity=related_entity if config.related else None,
        config=config,
        turns=turns,
        short=len(turns) < config.turns,
    )


# --- planning units and dataset generation -------------------------------------


@dataclass
class PlanUnit:
    """Everything one primary entity contributes: its planned fact sequences
    (with and without the related suffix) plus the related follow-up plan."""

    entity_id: str
    type_id: str
    type_label: str
    base_sequence: list[Fact]
    related_sequence: list[Fact] | None = None
    followup_sequence: list[Fact] | None = None
    related_entity: str | None = None
    related_type_label: str | None = None
    type_labels: dict[str, str] = field(default_factory=dict)

    def signatures(self, interactions: Sequence[str] = INTERACTIONS) -> list[FactSignature]:
        sigs: list[FactSignature] = []
        for sequence in (self.base_sequence, self.related_sequence, self.followup_sequence):
            if sequence:
                sigs.extend(plan_signatures(sequence, self.type_labels, interactions))
        unique: dict[str, FactSignature] = {}
        for sig in sigs:
            unique.setdefault(signature_key(sig), sig)
        return list(unique.values())


@dataclass
class GenerationOptions:
    turns: int = DEFAULT_TURNS
    related_turns: int = DEFAULT_RELATED_TURNS
    followup_facts: int = DEFAULT_FOLLOWUP_FACTS
    limit: int | None = None
    mode: str = "sample"  # "sample" | "universe"
    seed: int = 0
    rules: PredicateGroupingRules = field(default_factory=PredicateGroupingRules)


def build_plan_units(
    store: KgStore,
    selections: Sequence[SelectedPredicates],
    related: Mapping[str, RelatedPair] | None,
    options: GenerationOptions,
    pools: Mapping[str, tuple[SelectedPredicates, Sequence[Fact]]] | None = None,
) -> list[PlanUnit]:
    """Deterministic plans per entity; both the template stage and the
    generate stage derive the same plans from the same seed. ``pools`` (from
    a materialized fact file) overrides in-store extraction."""
    if pools is None:
        pools = fact_pools(store, selections)
    units: list[PlanUnit] = []
    for entity_id, (selection, facts) in pools.items():
        rng = derive_rng(options.seed, "plan", entity_id)
        base_sequence = plan_fact_sequence(list(facts), None, options.rules, options.turns, rng)
        type_label = store.display(selection.type_id).lower()
        unit = PlanUnit(
            entity_id=entity_id,
            type_id=selection.type_id,
            type_label=type_label,
            base_sequence=base_sequence,
            type_labels={entity_id: type_label},
        )
        pair = related.get(entity_id) if related else None
        if pair is not None and pair.related in pools and pair.related != entity_id:
            related_selection, related_facts = pools[pair.related]
            related_label = store.display(related_selection.type_id).lower()
            unit.related_entity = pair.related
            unit.related_type_label = related_label
            unit.type_labels[pair.related] = related_label
            unit.related_sequence = plan_fact_sequence(
                list(facts),
                list(related_facts),
                options.rules,
                options.turns,
                derive_rng(options.seed, "plan-related", entity_id),
                related_turns=options.related_turns,
            )
            unit.followup_sequence = plan_fact_sequence(
                list(related_facts),
                None,
                options.rules,
                options.followup_facts,
                derive_rng(options.seed, "plan-followup", entity_id),
            )
        units.append(unit)
        if options.limit is not None and len(units) >= options.limit:
            break
    return units


def conversation_to_json(conv: Conversation, *, variant: int | None) -> dict:
    config = conv.config.to_json()
    config["variant"] = variant
    turns = []
    for turn in conv.turns:
        fact = turn.fact
        entry = {
            "index": turn.index,
            "question": turn.question,
            "family": turn.family,
            "variant": turn.variant,
            "gold_answers": list(turn.gold_answers),
            "gold_primary": list(turn.gold_primary),
            "fact": {
                "fact_id": fact.fact_id,
                "subject": fact.subject,
                "predicate": fact.predicate,
                "kind": fact.kind,
                "qualifier_predicate": fact.qualifier_predicate,
            },
            "typo": turn.typo.to_json() if turn.typo else None,
        }
        turns.append(entry)
    return {
        "schema_version": 1,
        "id": conv.id,
        "primary_entity": conv.primary_entity,
        "primary_type": conv.primary_type,
        "related_entity": conv.related_entity,
        "config": config,
        "short": conv.short,
        "turns": turns,
    }


def generate_dataset(
    store: KgStore,
    units: Sequence[PlanUnit],
    template_sets: Mapping[str, TemplateSet],
    configs: Sequence[ConversationConfig],
    options: GenerationOptions,
) -> Iterator[dict]:
    """Yield conversation JSON rows for every (unit, config) cell; universe
    mode emits one conversation per template variant index."""
    for unit in units:
        context = AssemblyContext(store=store, type_labels=unit.type_labels)
        for config in configs:
            use_related = config.related and unit.related_sequence
            sequence = unit.related_sequence if use_related else unit.base_sequence
            variants: Sequence[int | None]
            variants = (0, 1, 2) if options.mode == "universe" else (None,)
            for variant in variants:
                suffix = "s" if variant is None else str(variant)
                conversation_id = f"{unit.entity_id}.{config.tag()}.v{suffix}"
                rng = derive_rng(options.seed, "conversation", conversation_id)
                conv = assemble(
                    sequence,
                    template_sets,
                    config,
                    context,
                    rng,
                    conversation_id=conversation_id,
                    primary_entity=unit.entity_id,
                    primary_type=unit.type_id,
                    related_entity=unit.related_entity if use_related else None,
                    variant=variant,
                )
                yield conversation_to_json(conv, variant=variant)


# --- fan-out accounting ----------------------------------------------------------


def questions_per_fact(universe, *, followup_facts: int = DEFAULT_FOLLOWUP_FACTS) -> int:
    """Question strings one fact fans out to across a whole setting universe."""
    if isinstance(universe, str):
        if universe == "general":
            families = len(VOICE_FAMILIES) + len(TEXT_FAMILIES) + len(DERIVED_TEXT_FAMILIES)
            return families * 3
        if universe == "related":
            followups = followup_facts * FOLLOWUP_VARIANTS * FOLLOWUP_INTERACTIONS
            return questions_per_fact("general") + followups
        raise ContractViolation(f"unknown universe: {universe}")
    return len(list(universe)) * 3


def enumerate_universe(
    store: KgStore,
    units: Sequence[PlanUnit],
    template_sets: Mapping[str, TemplateSet],
    *,
    seed: int,
    universe: str = "general",
) -> Iterator[dict]:
    """Enumerate every (family, variant) question string per fact.

    Voice families come straight from the voice set, text original/deixis from
    the text set, and the typos/deixis_typos families are derived by the typo
    augmenter with a seed bound to (fact, family, variant). Related-universe
    rows add the follow-up questions from the related entity's plan.
    """
    if universe not in ("general", "related"):
        raise ContractViolation(f"unknown universe: {universe}")
    for unit in units:
        yield from _enumerate_sequence(store, unit, unit.base_sequence, template_sets, seed, False)
        if universe == "related" and unit.followup_sequence:
            yield from _enumerate_sequence(
                store, unit, unit.followup_sequence, template_sets, seed, True
            )


def _enumerate_sequence(
    store: KgStore,
    unit: PlanUnit,
    sequence: Sequence[Fact],
    template_sets: Mapping[str, TemplateSet],
    seed: int,
    followup: bool,
) -> Iterator[dict]:
    for chunk in chunk_plan(sequence, unit.type_labels):
        sets = {}
        for interaction in INTERACTIONS:
            signature = chunk.signature(interaction)
            template_set = template_sets.get(signature_key(signature))
            if template_set is None:
                raise AssemblyError(f"no template coverage for signature {signature.to_json()}")
            sets[interaction] = template_set
        subject_label = store.display(chunk.subject)
        letter_values = {
            local: store.render_value(fact.objects[0])
            for local, fact in enumerate(chunk.facts, start=1)
        }
        for local, fact in enumerate(chunk.facts, start=1):
            def row(interaction: str, family: str, variant: int, question: str) -> dict:
                return {
                    "fact_id": fact.fact_id,
                    "subject": fact.subject,
                    "predicate": fact.predicate,
                    "anchor": unit.entity_id,
                    "interaction": interaction,
                    "family": family,
                    "variant": variant,
                    "question": question,
                    "followup": followup,
                }

            voice_families = () if followup else sets[VOICE].turns[local].families
            for family in voice_families:
                for variant in range(3):
                    template = sets[VOICE].turns[local].families[family][variant]
                    yield row(VOICE, family, variant, _fill(template, chunk, local, subject_label, letter_values))
            if followup:
                for interaction in INTERACTIONS:
                    for variant in range(3):
                        template = sets[interaction].turns[local].families["original"][variant]
                        question = _fill(template, chunk, local, subject_label, letter_values)
                        yield row(interaction, "original", variant, question)
                continue
            text_turn = sets[TEXT].turns[local]
            for family in text_turn.families:
                for variant in range(3):
                    template = text_turn.families[family][variant]
                    yield row(TEXT, family, variant, _fill(template, chunk, local, subject_label, letter_values))
            for source, derived in zip(TEXT_FAMILIES, DERIVED_TEXT_FAMILIES):
                for variant in range(3):
                    template = text_turn.families[source][variant]
                    question = _fill(template, chunk, local, subject_label, letter_values)
                    rng = derive_rng(seed, "typo", fact.fact_id, derived, variant)
                    augmented, _ = augment_turn(question, rng)
                    yield row(TEXT, derived, variant, augmented)
