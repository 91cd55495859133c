"""Staged pipeline runner with a content-hash manifest.

Stages run in dependency order (ingest, predicates, related, facts,
templates, generate, evaluate, stats). A stage is skipped when its input
fingerprint matches the manifest and all of its recorded outputs still hash
the same; deleting an intermediate artifact therefore reruns only that stage
and whatever its change invalidates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .assemble import (
    ConversationConfig,
    GenerationOptions,
    PredicateGroupingRules,
    build_plan_units,
    config_matrix,
    enumerate_universe,
    generate_dataset,
)
from .errors import PipelineConfigError
from .evaluate import evaluate_conversations
from .facts import fact_pools, load_facts, save_facts
from .gateway import (
    Gateway,
    GatewayProfile,
    HttpGateway,
    ReplayGateway,
    ResilientGateway,
    ScriptedGateway,
    TranscriptWriter,
)
from .kgstore import IngestFilter, KgStore, ingest_dump, write_reject_log
from .offline import offline_gateway
from .predicates import extract_predicates, load_selected, save_selected, select_predicates
from .related import (
    build_ontology_index,
    load_embeddings,
    load_related,
    related_pairs,
    save_related,
)
from .templates import FactSignature, TemplateCache, ensure_templates, signature_key
from .util import canonical_json, content_hash, file_hash, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

STAGE_ORDER = (
    "ingest",
    "predicates",
    "related",
    "facts",
    "templates",
    "generate",
    "evaluate",
    "stats",
)

GATEWAY_ROLES = ("selector", "templates", "answerer", "judge")


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    out_dir: Path
    seed: int

    @classmethod
    def load(cls, path: Path | str, *, seed_override: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise PipelineConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise PipelineConfigError(f"config {path} is not valid JSON: {exc}") from exc
        config = cls(
            raw=raw,
            base_dir=path.parent,
            out_dir=path.parent / raw.get("out_dir", "out"),
            seed=seed_override if seed_override is not None else int(raw.get("seed", 0)),
        )
        config.validate()
        return config

    def resolve(self, value: str) -> Path:
        candidate = Path(value)
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    def validate(self) -> None:
        if self.raw.get("schema_version") != 1:
            raise PipelineConfigError("config schema_version must be 1")
        ingest = self.raw.get("ingest")
        if not isinstance(ingest, dict) or "dump" not in ingest:
            raise PipelineConfigError("config needs an ingest section with a dump path")
        dump = self.resolve(ingest["dump"])
        if not dump.exists():
            raise PipelineConfigError(f"dump path does not resolve: {dump}")
        embeddings = self.raw.get("embeddings")
        if embeddings and not self.resolve(embeddings).exists():
            raise PipelineConfigError(f"embeddings path does not resolve: {embeddings}")
        gateways = self.raw.get("gateways", {})
        for role in GATEWAY_ROLES:
            spec = gateways.get(role, {"kind": "offline"})
            if not isinstance(spec, dict) or "kind" not in spec:
                raise PipelineConfigError(f"gateway spec for {role} needs a kind")
            if spec["kind"] not in ("offline", "openai", "replay", "scripted"):
                raise PipelineConfigError(f"unknown gateway kind {spec['kind']!r} for {role}")
            if spec["kind"] == "replay":
                transcript = spec.get("transcript", "")
                if not transcript or not self.resolve(transcript).exists():
                    raise PipelineConfigError(f"replay transcript missing for {role}")
            if spec["kind"] == "scripted":
                responses = spec.get("responses", "")
                if not responses or not self.resolve(responses).exists():
                    raise PipelineConfigError(f"scripted responses missing for {role}")
        for group in self.raw.get("grouping", []):
            if not isinstance(group, list) or not group:
                raise PipelineConfigError("grouping must be a list of predicate-id lists")

    # --- config accessors -------------------------------------------------

    def ingest_filter(self) -> IngestFilter:
        ingest = self.raw["ingest"]
        allowlist = ingest.get("type_allowlist")
        if isinstance(allowlist, str):
            lines = self.resolve(allowlist).read_text(encoding="utf-8").split()
            allowlist = frozenset(lines)
        elif isinstance(allowlist, list):
            allowlist = frozenset(allowlist)
        else:
            allowlist = None
        return IngestFilter(
            label_language=ingest.get("lang", "en"),
            type_allowlist=allowlist,
            entity_allowlist=frozenset(ingest.get("entity_allowlist", [])),
            keep_ranks=ingest.get("keep_ranks", "all"),
        )

    def grouping_rules(self) -> PredicateGroupingRules:
        groups = self.raw.get("grouping")
        if groups is None:
            return PredicateGroupingRules()
        return PredicateGroupingRules(groups=tuple(frozenset(g) for g in groups))

    def generation_options(self) -> GenerationOptions:
        gen = self.raw.get("generation", {})
        return GenerationOptions(
            turns=int(gen.get("turns", 5)),
            related_turns=int(gen.get("related_turns", 2)),
            followup_facts=int(gen.get("followup_facts", 5)),
            limit=gen.get("limit"),
            mode=gen.get("mode", "sample"),
            seed=self.seed,
            rules=self.grouping_rules(),
        )

    def conversation_configs(self) -> list[ConversationConfig]:
        gen = self.raw.get("generation", {})
        configs = gen.get("configs", "matrix")
        turns = int(gen.get("turns", 5))
        if configs == "matrix":
            return config_matrix(turns=turns, seed=self.seed)
        return [
            ConversationConfig.from_json({"turns": turns, "seed": self.seed, **c})
            for c in configs
        ]

    def gateway_spec(self, role: str) -> dict:
        return self.raw.get("gateways", {}).get(role, {"kind": "offline"})

    def build_gateway(self, role: str) -> Gateway:
        spec = self.gateway_spec(role)
        kind = spec["kind"]
        if kind == "offline":
            inner: Gateway = offline_gateway(role)
            profile = GatewayProfile(name=f"offline-{role}")
        elif kind == "replay":
            inner = ReplayGateway(self.resolve(spec["transcript"]))
            profile = GatewayProfile(name=f"replay-{role}")
        elif kind == "scripted":
            responses = json.loads(self.resolve(spec["responses"]).read_text(encoding="utf-8"))
            inner = ScriptedGateway(responses)
            profile = GatewayProfile(name=f"scripted-{role}")
        else:
            profile = GatewayProfile(
                name=spec.get("name", role),
                endpoint=spec.get("endpoint", ""),
                model=spec.get("model", ""),
                auth_env=spec.get("auth_env", ""),
                max_concurrent=int(spec.get("max_concurrent", 1)),
                requests_per_minute=int(spec.get("requests_per_minute", 0)),
                max_attempts=int(spec.get("max_attempts", 3)),
                backoff_base=float(spec.get("backoff_base", 0.5)),
                token_bias=spec.get("token_bias", {}),
            )
            inner = HttpGateway(profile)
        transcript = TranscriptWriter(self.out_dir / "transcripts" / f"{role}.jsonl")
        return ResilientGateway(inner, profile, transcript)


# --- manifest ----------------------------------------------------------------


class Manifest:
    def __init__(self, path: Path):
        self.path = path
        self.data: dict = {"schema_version": 1, "stages": {}, "artifacts": {}}
        if path.exists():
            try:
                self.data = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                logger.warning("manifest unreadable; starting fresh")

    def stage_fresh(self, stage: str, fingerprint: str) -> bool:
        record = self.data["stages"].get(stage)
        if not record or record.get("fingerprint") != fingerprint:
            return False
        for rel_path, digest in record.get("outputs", {}).items():
            path = self.path.parent / rel_path
            if not path.exists() or file_hash(path) != digest:
                return False
        return True

    def record_stage(self, stage: str, fingerprint: str, outputs: list[Path]) -> None:
        entries = {}
        for output in outputs:
            rel = output.relative_to(self.path.parent).as_posix()
            entries[rel] = file_hash(output)
        self.data["stages"][stage] = {"fingerprint": fingerprint, "outputs": entries}
        self.data["artifacts"].update(entries)

    def record_failure(self, stage: str, error: str) -> None:
        self.data["stages"][stage] = {"failed": error}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(
            json.dumps(self.data, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    def artifact_paths(self) -> list[Path]:
        return [self.path.parent / rel for rel in sorted(self.data["artifacts"])]


@dataclass
class StageResult:
    name: str
    ran: bool
    outputs: list[Path] = field(default_factory=list)


class PipelineRun:
    """Holds loaded intermediates so later stages do not re-read everything."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = config.out_dir
        self.store: KgStore | None = None
        self._units = None
        self._template_sets = None

    # paths
    @property
    def store_dir(self) -> Path:
        return self.out / "store"

    @property
    def selected_path(self) -> Path:
        return self.out / "selected.jsonl"

    @property
    def related_path(self) -> Path:
        return self.out / "related.jsonl"

    @property
    def facts_path(self) -> Path:
        return self.out / "facts.jsonl"

    @property
    def cache_dir(self) -> Path:
        return self.out / "templates"

    @property
    def templates_index_path(self) -> Path:
        return self.out / "templates_index.json"

    @property
    def dataset_path(self) -> Path:
        return self.out / "dataset.jsonl"

    @property
    def universe_path(self) -> Path:
        return self.out / "universe.jsonl"

    @property
    def report_path(self) -> Path:
        return self.out / "report.json"

    @property
    def stats_path(self) -> Path:
        return self.out / "stats.json"

    def load_store(self) -> KgStore:
        if self.store is None:
            self.store = KgStore.load(self.store_dir)
        return self.store

    def units(self):
        """Plan units rebuilt from the on-disk artifacts (facts file is the
        fact-pool source; pool order mirrors selection-file order)."""
        if self._units is None:
            store = self.load_store()
            selections = load_selected(self.selected_path, store)
            by_subject: dict[str, list] = {}
            for fact in load_facts(self.facts_path, store):
                by_subject.setdefault(fact.subject, []).append(fact)
            pools = {}
            for selection in selections:
                try:
                    members = store.entities_of_type(selection.type_id)
                except KeyError:
                    continue
                for entity_id in members:
                    if entity_id in pools or entity_id not in by_subject:
                        continue
                    pools[entity_id] = (selection, by_subject[entity_id])
            related = load_related(self.related_path) if self.related_path.exists() else {}
            self._units = build_plan_units(
                store, selections, related, self.config.generation_options(), pools
            )
        return self._units

    def template_sets(self):
        if self._template_sets is None:
            cache = TemplateCache(self.cache_dir)
            sets = {}
            index = json.loads(self.templates_index_path.read_text(encoding="utf-8"))
            for sig_json in index["signatures"]:
                sig = FactSignature.from_json(sig_json)
                template_set = cache.get(sig)
                if template_set is not None:
                    sets[signature_key(sig)] = template_set
            self._template_sets = sets
        return self._template_sets


# --- stages --------------------------------------------------------------------


def _stage_ingest(run: PipelineRun) -> list[Path]:
    config = run.config
    ingest_cfg = config.raw["ingest"]
    result = ingest_dump(
        config.resolve(ingest_cfg["dump"]),
        config.ingest_filter(),
        dump_id=ingest_cfg.get("dump_id", Path(ingest_cfg["dump"]).name),
        cutoff=ingest_cfg.get("cutoff", ""),
    )
    result.store.save(run.store_dir)
    write_reject_log(result.rejects, run.store_dir / "reject_log.tsv")
    run.store = result.store
    return [run.store_dir / "entities.jsonl", run.store_dir / "meta.json", run.store_dir / "reject_log.tsv"]


def _stage_predicates(run: PipelineRun) -> list[Path]:
    store = run.load_store()
    gateway = run.config.build_gateway("selector")
    selections = []
    for type_id in store.type_ids():
        table = extract_predicates(store, type_id)
        if table.rows:
            selections.append(select_predicates(gateway, table))
    save_selected(selections, run.selected_path)
    return [run.selected_path]


def _stage_related(run: PipelineRun) -> list[Path]:
    store = run.load_store()
    config = run.config
    embeddings = config.raw.get("embeddings")
    if embeddings:
        index = load_embeddings(config.resolve(embeddings))
    else:
        index = build_ontology_index(store)
    related_cfg = config.raw.get("related", {})
    pairs = related_pairs(
        store,
        index,
        min_statements=int(related_cfg.get("min_statements", 10)),
        person_type=related_cfg.get("person_type", "Q5"),
        same_type_only=bool(related_cfg.get("same_type_only", True)),
    )
    save_related(pairs, run.related_path)
    return [run.related_path]


def _stage_facts(run: PipelineRun) -> list[Path]:
    store = run.load_store()
    selections = load_selected(run.selected_path, store)
    pools = fact_pools(store, selections)
    all_facts = [fact for _, facts in pools.values() for fact in facts]
    save_facts(store, all_facts, run.facts_path)
    return [run.facts_path]


def _stage_templates(run: PipelineRun) -> list[Path]:
    units = run.units()
    signatures = []
    seen = set()
    for unit in units:
        for sig in unit.signatures():
            key = signature_key(sig)
            if key not in seen:
                seen.add(key)
                signatures.append(sig)
    cache = TemplateCache(run.cache_dir)
    gateway = run.config.build_gateway("templates")
    retries = int(run.config.raw.get("templates", {}).get("retries", 3))
    resolved, quarantined = ensure_templates(gateway, signatures, cache, retries=retries)
    index = {
        "signatures": [sig.to_json() for sig in signatures if signature_key(sig) in resolved],
        "quarantined": [
            {"signature": q.signature.to_json(), "reason": q.reason} for q in quarantined
        ],
    }
    run.templates_index_path.write_text(
        json.dumps(index, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    run._template_sets = resolved
    outputs = [run.templates_index_path]
    outputs.extend(sorted(run.cache_dir.glob("*.json")))
    return outputs


def _stage_generate(run: PipelineRun) -> list[Path]:
    store = run.load_store()
    units = run.units()
    template_sets = run.template_sets()
    options = run.config.generation_options()
    configs = run.config.conversation_configs()
    rows = generate_dataset(store, units, template_sets, configs, options)
    write_jsonl(run.dataset_path, rows)
    outputs = [run.dataset_path]
    gen_cfg = run.config.raw.get("generation", {})
    if gen_cfg.get("emit_universe"):
        universe = gen_cfg.get("universe", "general")
        write_jsonl(
            run.universe_path,
            enumerate_universe(store, units, template_sets, seed=run.config.seed, universe=universe),
        )
        outputs.append(run.universe_path)
    return outputs


def _stage_evaluate(run: PipelineRun) -> list[Path]:
    eval_cfg = run.config.raw.get("evaluate", {})
    if not eval_cfg.get("enabled", True):
        run.report_path.write_text('{"skipped": true}\n', encoding="utf-8")
        return [run.report_path]
    answerer = run.config.build_gateway("answerer")
    judge = run.config.build_gateway("judge")
    report = evaluate_conversations(
        read_jsonl(run.dataset_path),
        answerer,
        judge,
        judge_retries=int(eval_cfg.get("judge_retries", 1)),
    )
    run.report_path.write_text(
        json.dumps(report.to_json(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return [run.report_path]


def _stage_stats(run: PipelineRun) -> list[Path]:
    rows = list(read_jsonl(run.dataset_path))
    universe_rows = list(read_jsonl(run.universe_path)) if run.universe_path.exists() else None
    summary = dataset_statistics(rows, universe_rows)
    run.stats_path.write_text(
        json.dumps(summary, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return [run.stats_path]


def dataset_statistics(rows: list[dict], universe_rows: list[dict] | None = None) -> dict:
    """Brute-force-checkable dataset summary.

    ``questions_per_fact`` is the maximum number of distinct question strings
    any single fact fans out to (universe rows preferred when present;
    first-turn facts never receive deixis variants, so the maximum is the
    attained fan-out).
    """
    entities: set[str] = set()
    types: set[str] = set()
    predicates: set[str] = set()
    facts: set[str] = set()
    questions: dict[str, set[str]] = {}
    per_config: dict[str, int] = {}
    turn_count = 0
    for row in rows:
        types.add(row.get("primary_type", ""))
        tag = _row_tag(row.get("config", {}))
        per_config[tag] = per_config.get(tag, 0) + 1
        for turn in row.get("turns", []):
            turn_count += 1
            fact = turn.get("fact", {})
            entities.add(fact.get("subject", ""))
            predicates.add(fact.get("predicate", ""))
            facts.add(fact.get("fact_id", ""))
            questions.setdefault(fact.get("fact_id", ""), set()).add(turn.get("question", ""))
    if universe_rows:
        questions = {}
        for urow in universe_rows:
            questions.setdefault(urow["fact_id"], set()).add(urow["question"])
    per_fact = max((len(qs) for qs in questions.values()), default=0)
    return {
        "conversations": len(rows),
        "turns": turn_count,
        "entities": len(entities - {""}),
        "facts": len(facts - {""}),
        "unique_types": len(types - {""}),
        "unique_predicates": len(predicates - {""}),
        "questions_per_fact": per_fact,
        "per_config": dict(sorted(per_config.items())),
    }


def _row_tag(config: dict) -> str:
    bits = [config.get("interaction", "?"), f"dx{int(bool(config.get('deixis')))}"]
    if config.get("interaction") == "voice":
        bits.append(f"df{int(bool(config.get('disfluency')))}")
    else:
        bits.append(f"ty{int(bool(config.get('typo')))}")
    bits.append(f"rel{int(bool(config.get('related')))}")
    return "-".join(bits)


def format_stats_table(summary: dict) -> str:
    lines = [
        f"conversations        {summary['conversations']}",
        f"turns                {summary['turns']}",
        f"entities             {summary['entities']}",
        f"facts                {summary['facts']}",
        f"unique types         {summary['unique_types']}",
        f"unique predicates    {summary['unique_predicates']}",
        f"questions per fact   {summary['questions_per_fact']}",
        "per-config conversation counts:",
    ]
    for tag, count in summary["per_config"].items():
        lines.append(f"  {tag:20s} {count}")
    return "\n".join(lines)


# --- runner ---------------------------------------------------------------------


def _fingerprints(run: PipelineRun) -> dict[str, Callable[[], str]]:
    config = run.config

    def slice_of(*keys: str) -> dict:
        return {key: config.raw.get(key) for key in keys}

    def fp(payload: dict, *paths: Path) -> str:
        parts = [canonical_json(payload), str(config.seed)]
        for path in paths:
            parts.append(file_hash(path) if path.exists() else "missing")
        return content_hash("|".join(parts))

    return {
        "ingest": lambda: fp(slice_of("ingest"), config.resolve(config.raw["ingest"]["dump"])),
        "predicates": lambda: fp(
            {"gateway": config.gateway_spec("selector")}, run.store_dir / "entities.jsonl"
        ),
        "related": lambda: fp(
            slice_of("related", "embeddings"), run.store_dir / "entities.jsonl"
        ),
        "facts": lambda: fp({}, run.store_dir / "entities.jsonl", run.selected_path),
        "templates": lambda: fp(
            {
                "gateway": config.gateway_spec("templates"),
                "generation": config.raw.get("generation"),
                "templates": config.raw.get("templates"),
                "grouping": config.raw.get("grouping"),
            },
            run.store_dir / "entities.jsonl",
            run.selected_path,
            run.facts_path,
            run.related_path,
        ),
        "generate": lambda: fp(
            {"generation": config.raw.get("generation"), "grouping": config.raw.get("grouping")},
            run.store_dir / "entities.jsonl",
            run.selected_path,
            run.facts_path,
            run.related_path,
            run.templates_index_path,
        ),
        "evaluate": lambda: fp(
            {
                "evaluate": config.raw.get("evaluate"),
                "answerer": config.gateway_spec("answerer"),
                "judge": config.gateway_spec("judge"),
            },
            run.dataset_path,
        ),
        "stats": lambda: fp({}, run.dataset_path),
    }


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "predicates": _stage_predicates,
    "related": _stage_related,
    "facts": _stage_facts,
    "templates": _stage_templates,
    "generate": _stage_generate,
    "evaluate": _stage_evaluate,
    "stats": _stage_stats,
}


def run_pipeline(
    config: PipelineConfig, *, dry_run: bool = False, echo: Callable[[str], None] = logger.info
) -> list[StageResult]:
    """Execute all stages; a stage failure halts downstream stages and is
    recorded in the manifest."""
    run = PipelineRun(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(config.out_dir / "manifest.json")
    fingerprints = _fingerprints(run)
    results: list[StageResult] = []
    for stage in STAGE_ORDER:
        fingerprint = fingerprints[stage]()
        if manifest.stage_fresh(stage, fingerprint):
            echo(f"[skip] {stage}")
            results.append(StageResult(stage, ran=False))
            continue
        if dry_run:
            echo(f"[would run] {stage}")
            results.append(StageResult(stage, ran=False))
            continue
        echo(f"[run ] {stage}")
        try:
            outputs = _STAGE_FUNCS[stage](run)
        except Exception as exc:
            manifest.record_failure(stage, f"{type(exc).__name__}: {exc}")
            manifest.save()
            raise
        manifest.record_stage(stage, fingerprint, outputs)
        results.append(StageResult(stage, ran=True, outputs=outputs))
    if not dry_run:
        manifest.save()
    return results
