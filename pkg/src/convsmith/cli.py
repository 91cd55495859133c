"""Command-line interface: stage subcommands plus the end-to-end pipeline."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .assemble import (
    ConversationConfig,
    GenerationOptions,
    PredicateGroupingRules,
    build_plan_units,
    config_matrix,
    enumerate_universe,
    generate_dataset,
)
from .errors import ConvsmithError
from .evaluate import evaluate_conversations
from .facts import fact_pools, load_facts, save_facts
from .gateway import Gateway, GatewayProfile, HttpGateway, ReplayGateway, ResilientGateway, TranscriptWriter
from .kgstore import IngestFilter, KgStore, ingest_dump, write_reject_log
from .offline import offline_gateway
from .pipeline import PipelineConfig, dataset_statistics, format_stats_table, run_pipeline
from .predicates import extract_predicates, load_selected, save_selected, select_predicates
from .related import build_ontology_index, load_embeddings, load_related, related_pairs, save_related
from .templates import TemplateCache, ensure_templates, signature_key
from .util import read_jsonl, write_jsonl


def _gateway(spec: str, role: str, transcript: str | None = None) -> Gateway:
    """Resolve a --gateway value: "offline", "replay:<transcript>", or a JSON
    profile file for a live endpoint."""
    writer = TranscriptWriter(transcript) if transcript else None
    if spec == "offline":
        return ResilientGateway(offline_gateway(role), GatewayProfile(name=f"offline-{role}"), writer)
    if spec.startswith("replay:"):
        return ResilientGateway(
            ReplayGateway(spec.split(":", 1)[1]), GatewayProfile(name=f"replay-{role}"), writer
        )
    payload = json.loads(Path(spec).read_text(encoding="utf-8"))
    profile = GatewayProfile(
        name=payload.get("name", role),
        endpoint=payload.get("endpoint", ""),
        model=payload.get("model", ""),
        auth_env=payload.get("auth_env", ""),
        max_concurrent=int(payload.get("max_concurrent", 1)),
        requests_per_minute=int(payload.get("requests_per_minute", 0)),
        max_attempts=int(payload.get("max_attempts", 3)),
        backoff_base=float(payload.get("backoff_base", 0.5)),
        token_bias=payload.get("token_bias", {}),
    )
    return ResilientGateway(HttpGateway(profile), profile, writer)


@click.group()
def main():
    """Build conversational KGQA datasets from a knowledge-graph dump and
    evaluate language models on them."""


@main.command()
@click.option("--dump", required=True, type=click.Path(exists=True), help="Line-oriented entity dump.")
@click.option("--lang", default="en", show_default=True, help="Required label language.")
@click.option("--types", "types_file", default="none", help="Type allowlist file, or 'none'.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Store directory to write.")
@click.option("--dump-id", default="", help="Provenance identifier for the dump.")
@click.option("--cutoff", default="", help="Knowledge cut-off date string.")
@click.option("--ranks", type=click.Choice(["all", "preferred"]), default="all", show_default=True)
def ingest(dump, lang, types_file, out_dir, dump_id, cutoff, ranks):
    """Ingest and filter a dump into an entity store."""
    allowlist = None
    if types_file and types_file != "none":
        allowlist = frozenset(Path(types_file).read_text(encoding="utf-8").split())
    filt = IngestFilter(label_language=lang, type_allowlist=allowlist, keep_ranks=ranks)
    result = ingest_dump(dump, filt, dump_id=dump_id or Path(dump).name, cutoff=cutoff)
    result.store.save(out_dir)
    write_reject_log(result.rejects, Path(out_dir) / "reject_log.tsv")
    s = result.store.stats()
    click.echo(
        f"ingested {s.entity_count} entities / {s.fact_count} facts "
        f"({len(result.rejects)} rejected lines of {result.lines_read})"
    )


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--gateway", "gateway_spec", default="offline", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--transcript", default=None, type=click.Path())
def predicates(store_dir, gateway_spec, out_path, transcript):
    """Extract per-type predicates and select the interesting subset."""
    store = KgStore.load(store_dir)
    gateway = _gateway(gateway_spec, "selector", transcript)
    selections = []
    for type_id in store.type_ids():
        table = extract_predicates(store, type_id)
        if table.rows:
            selections.append(select_predicates(gateway, table))
    save_selected(selections, out_path)
    click.echo(f"selected predicates for {len(selections)} types -> {out_path}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--embeddings", default=None, type=click.Path(exists=True), help="Vector file; omit for the ontology fallback.")
@click.option("--min-statements", default=10, show_default=True)
@click.option("--person-type", default="Q5", show_default=True)
@click.option("--any-type", is_flag=True, help="Do not restrict candidates to shared types.")
@click.option("--out", "out_path", required=True, type=click.Path())
def related(store_dir, embeddings, min_statements, person_type, any_type, out_path):
    """Most-similar related entity for popular Person entities."""
    store = KgStore.load(store_dir)
    index = load_embeddings(embeddings) if embeddings else build_ontology_index(store)
    pairs = related_pairs(
        store,
        index,
        min_statements=min_statements,
        person_type=person_type,
        same_type_only=not any_type,
    )
    save_related(pairs, out_path)
    click.echo(f"{len(pairs)} related pairs -> {out_path}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--selected", "selected_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def facts(store_dir, selected_path, out_path):
    """Materialize simple/complex/qualified facts under the selected predicates."""
    store = KgStore.load(store_dir)
    selections = load_selected(selected_path, store)
    pools = fact_pools(store, selections)
    all_facts = [fact for _, pool in pools.values() for fact in pool]
    save_facts(store, all_facts, out_path)
    click.echo(f"{len(all_facts)} facts across {len(pools)} entities -> {out_path}")


def _plan_units_from_files(store, selected_path, facts_path, related_path, options):
    selections = load_selected(selected_path, store)
    pools = None
    if facts_path:
        by_subject: dict[str, list] = {}
        for fact in load_facts(facts_path, store):
            by_subject.setdefault(fact.subject, []).append(fact)
        pools = {}
        for selection in selections:
            try:
                members = store.entities_of_type(selection.type_id)
            except KeyError:
                continue
            for entity_id in members:
                if entity_id not in pools and entity_id in by_subject:
                    pools[entity_id] = (selection, by_subject[entity_id])
    related_map = load_related(related_path) if related_path else {}
    return build_plan_units(store, selections, related_map, options, pools)


def _grouping(grouping_path) -> PredicateGroupingRules:
    if not grouping_path:
        return PredicateGroupingRules()
    payload = json.loads(Path(grouping_path).read_text(encoding="utf-8"))
    groups = payload["groups"] if isinstance(payload, dict) else payload
    return PredicateGroupingRules(groups=tuple(frozenset(g) for g in groups))


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--facts", "facts_path", default=None, type=click.Path(exists=True))
@click.option("--selected", "selected_path", required=True, type=click.Path(exists=True))
@click.option("--related", "related_path", default=None, type=click.Path(exists=True))
@click.option("--gateway", "gateway_spec", default="offline", show_default=True)
@click.option("--cache", "cache_dir", required=True, type=click.Path())
@click.option("--interaction", type=click.Choice(["both", "voice", "text"]), default="both", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--turns", default=5, show_default=True)
@click.option("--limit", default=None, type=int)
@click.option("--retries", default=3, show_default=True)
@click.option("--grouping", "grouping_path", default=None, type=click.Path(exists=True))
@click.option("--transcript", default=None, type=click.Path())
def templates(store_dir, facts_path, selected_path, related_path, gateway_spec, cache_dir, interaction, seed, turns, limit, retries, grouping_path, transcript):
    """Generate and cache question-template sets for the planned conversations."""
    store = KgStore.load(store_dir)
    options = GenerationOptions(turns=turns, limit=limit, seed=seed, rules=_grouping(grouping_path))
    units = _plan_units_from_files(store, selected_path, facts_path, related_path, options)
    interactions = ("voice", "text") if interaction == "both" else (interaction,)
    signatures, seen = [], set()
    for unit in units:
        for sig in unit.signatures(interactions):
            key = signature_key(sig)
            if key not in seen:
                seen.add(key)
                signatures.append(sig)
    gateway = _gateway(gateway_spec, "templates", transcript)
    cache = TemplateCache(cache_dir)
    resolved, quarantined = ensure_templates(gateway, signatures, cache, retries=retries)
    click.echo(f"{len(resolved)} template sets cached, {len(quarantined)} quarantined -> {cache_dir}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--facts", "facts_path", default=None, type=click.Path(exists=True))
@click.option("--selected", "selected_path", required=True, type=click.Path(exists=True))
@click.option("--related", "related_path", default=None, type=click.Path(exists=True))
@click.option("--templates", "cache_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True), help="Conversation config file (keys mirror the config grid); default: the full 16-setting matrix.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--turns", default=5, show_default=True)
@click.option("--limit", default=None, type=int)
@click.option("--mode", type=click.Choice(["sample", "universe"]), default="sample", show_default=True)
@click.option("--universe-out", default=None, type=click.Path(), help="Also enumerate the fan-out universe to this file.")
@click.option("--grouping", "grouping_path", default=None, type=click.Path(exists=True))
def generate(store_dir, facts_path, selected_path, related_path, cache_dir, config_path, out_path, seed, turns, limit, mode, universe_out, grouping_path):
    """Assemble slot-filled conversations from facts and cached templates."""
    store = KgStore.load(store_dir)
    options = GenerationOptions(turns=turns, limit=limit, mode=mode, seed=seed, rules=_grouping(grouping_path))
    units = _plan_units_from_files(store, selected_path, facts_path, related_path, options)
    cache = TemplateCache(cache_dir)
    template_sets = {}
    for unit in units:
        for sig in unit.signatures():
            cached = cache.get(sig)
            if cached is not None:
                template_sets[signature_key(sig)] = cached
    if config_path:
        payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
        entries = payload["configs"] if isinstance(payload, dict) else payload
        configs = [ConversationConfig.from_json({"turns": turns, "seed": seed, **c}) for c in entries]
    else:
        configs = config_matrix(turns=turns, seed=seed)
    rows = list(generate_dataset(store, units, template_sets, configs, options))
    write_jsonl(out_path, rows)
    click.echo(f"{len(rows)} conversations -> {out_path}")
    if universe_out:
        universe_rows = list(enumerate_universe(store, units, template_sets, seed=seed))
        write_jsonl(universe_out, universe_rows)
        click.echo(f"{len(universe_rows)} universe questions -> {universe_out}")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--answerer", "answerer_spec", default="offline", show_default=True)
@click.option("--judge", "judge_spec", default="offline", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--replay", "replay_path", default=None, type=click.Path(exists=True), help="Re-score offline from a recorded transcript.")
@click.option("--transcript", default=None, type=click.Path(), help="Record all traffic to this JSONL file.")
def evaluate(dataset_path, answerer_spec, judge_spec, out_path, replay_path, transcript):
    """Answer each turn with gold history, judge the candidates, aggregate metrics."""
    if replay_path:
        answerer_spec = judge_spec = f"replay:{replay_path}"
    answerer = _gateway(answerer_spec, "answerer", transcript)
    judge = _gateway(judge_spec, "judge", transcript)
    report = evaluate_conversations(read_jsonl(dataset_path), answerer, judge)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(
        json.dumps(report.to_json(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    click.echo(
        f"mean_turn={report.mean_turn:.3f} mean_conv={report.mean_conv:.3f} "
        f"na_ratio={report.na_ratio:.3f} ({report.total_conversations} conversations)"
    )


@main.command()
@click.option("--dataset", "dataset_path", default=None, type=click.Path(exists=True))
@click.option("--store", "store_dir", default=None, type=click.Path(exists=True))
@click.option("--universe", "universe_path", default=None, type=click.Path(exists=True))
def stats(dataset_path, store_dir, universe_path):
    """Print dataset and/or store statistics."""
    if not dataset_path and not store_dir:
        raise click.UsageError("provide --dataset and/or --store")
    if store_dir:
        s = KgStore.load(store_dir).stats()
        click.echo(
            f"store: {s.entity_count} entities / {s.fact_count} facts / "
            f"{s.unique_type_count} types / {s.unique_predicate_count} predicates"
        )
    if dataset_path:
        rows = list(read_jsonl(dataset_path))
        universe_rows = list(read_jsonl(universe_path)) if universe_path else None
        click.echo(format_stats_table(dataset_statistics(rows, universe_rows)))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@click.option("--dry-run", is_flag=True)
def pipeline(config_path, seed, dry_run):
    """Run every stage in dependency order with content-hash skipping."""
    config = PipelineConfig.load(config_path, seed_override=seed)
    results = run_pipeline(config, dry_run=dry_run, echo=click.echo)
    ran = sum(1 for r in results if r.ran)
    click.echo(f"{ran} stage(s) ran, {len(results) - ran} skipped; artifacts in {config.out_dir}")


def entrypoint():
    try:
        main(standalone_mode=True)
    except ConvsmithError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()
