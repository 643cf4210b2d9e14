"""Pipeline CLI: ingest -> profile -> dedup -> graph -> sample -> pairs -> plan -> serve.

Each stage writes its summary to <data_dir>/logs/<stage>.json and is a no-op
when that summary already exists (pass --force to redo). Exit codes are a
stable contract: 0 success, 2 missing prerequisite, 3 config error,
1 internal failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import knowledge, pairs as pairs_mod, planner as planner_mod, profiler, vectors
from .config import PipelineConfig, load_config
from .curation import CurationService
from .errors import ConfigError, ZCurateError
from .service import make_server
from .store import RecordStore

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_PREREQ = 2
EXIT_CONFIG = 3


class StageAbort(Exception):
    def __init__(self, exit_code: int, message: str):
        self.exit_code = exit_code
        super().__init__(message)


def _log_dir(store: RecordStore) -> Path:
    d = store.root / "logs"
    d.mkdir(exist_ok=True)
    return d


def _stage_done(store: RecordStore, stage: str) -> bool:
    return (_log_dir(store) / f"{stage}.json").exists()


def _require(store: RecordStore, *stages: str) -> None:
    for stage in stages:
        if not _stage_done(store, stage):
            raise StageAbort(EXIT_PREREQ, f"stage '{stage}' has not run yet")


def _write_summary(store: RecordStore, stage: str, summary: dict) -> None:
    payload = dict(summary)
    payload["stage"] = stage
    payload["completed_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    (_log_dir(store) / f"{stage}.json").write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)
    )


def _open_store(ctx) -> RecordStore:
    cfg: PipelineConfig = ctx.obj["config"]
    data_dir = ctx.obj.get("data_dir") or cfg.data_dir
    try:
        return RecordStore(data_dir)
    except ZCurateError as e:
        raise StageAbort(EXIT_CONFIG, str(e))


def _echo_summary(stage: str, summary: dict) -> None:
    click.echo(json.dumps({"stage": stage, **summary}, ensure_ascii=False, sort_keys=True))


def _run_stage(ctx, stage: str, fn) -> None:
    """Shared skeleton: skip when done, run, persist summary, map errors."""
    try:
        store = _open_store(ctx)
        if _stage_done(store, stage) and not ctx.obj["force"]:
            click.echo(f"{stage}: already complete (use --force to redo)")
            ctx.exit(EXIT_OK)
        summary = fn(store)
        _write_summary(store, stage, summary)
        _echo_summary(stage, summary)
    except StageAbort as e:
        click.echo(f"{stage}: {e}", err=True)
        ctx.exit(e.exit_code)
    except ConfigError as e:
        click.echo(f"{stage}: {e}", err=True)
        ctx.exit(EXIT_CONFIG)
    except ZCurateError as e:
        click.echo(f"{stage}: [{e.code}] {e}", err=True)
        ctx.exit(EXIT_INTERNAL)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="pipeline config JSON")
@click.option("--data-dir", type=click.Path(), default=None, help="data root (overrides config/env)")
@click.option("--force", is_flag=True, help="re-run a completed stage")
@click.pass_context
def main(ctx, config_path, data_dir, force):
    """Desk-scale data curation pipeline."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except ConfigError as e:
        click.echo(str(e), err=True)
        ctx.exit(EXIT_CONFIG)
    ctx.obj["data_dir"] = data_dir
    ctx.obj["force"] = force


@main.command()
@click.argument("jsonl", type=click.Path(exists=True))
@click.pass_context
def ingest(ctx, jsonl):
    """Ingest a JSONL manifest into the media pool."""

    def run(store: RecordStore) -> dict:
        summary = store.ingest_jsonl(jsonl)
        return {
            "added": summary.added,
            "rejected": summary.rejected,
            "reject_reasons": summary.reject_reasons,
        }

    _run_stage(ctx, "ingest", run)


@main.command()
@click.option("--jobs", type=int, default=1, help="worker threads for profiling")
@click.pass_context
def profile(ctx, jobs):
    """Profile every raw record and apply the filter rules."""

    def run(store: RecordStore) -> dict:
        _require(store, "ingest")
        cfg: PipelineConfig = ctx.obj["config"]
        rules = profiler.FilterRuleSet.from_config(cfg.profiler.filter_rules)
        scorers = profiler.default_scorers()

        def one(rec) -> str:
            report = profiler.profile(
                store, rec.id, scorers, cfg.profiler.border_width, cfg.profiler.bpp_quality
            )
            if report is None:
                return "dropped"
            decision = profiler.apply_filters(report, rules)
            if decision.flags:
                report.flags = decision.flags
                store.update_record(rec.id, {"profile": report.to_dict()})
            if not decision.keep:
                store.update_record(rec.id, {"status": "dropped", "drop_reason": decision.reason})
                return "dropped"
            return "profiled"

        raw = list(store.records(status="raw"))
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(one, raw))
        else:
            outcomes = [one(rec) for rec in raw]
        return {
            "profiled": outcomes.count("profiled"),
            "dropped": outcomes.count("dropped"),
        }

    _run_stage(ctx, "profile", run)


@main.command()
@click.option("--k", type=int, default=None, help="neighbors per node")
@click.pass_context
def dedup(ctx, k):
    """Embedding dedup: k-NN graph + community detection + representative pick."""

    def run(store: RecordStore) -> dict:
        _require(store, "profile")
        cfg: PipelineConfig = ctx.obj["config"]
        kk = k if k is not None else cfg.vector.k
        pool = list(store.records(status="profiled"))
        # pair-role groups (frames, edit sets) are intentionally similar; they
        # are pairing material, not duplicates
        candidates = [
            r for r in pool if cfg.vector.modality in r.embeddings and r.pair_role is None
        ]
        passthrough = [
            r for r in pool if cfg.vector.modality not in r.embeddings or r.pair_role is not None
        ]
        kept = dropped = 0
        communities = 0
        if candidates:
            index = vectors.build_index(candidates, cfg.vector.modality)
            graph = vectors.build_knn_graph(index, kk, cfg.vector.tau_edge)
            partition = vectors.detect_communities(
                graph, cfg.vector.gamma, cfg.vector.seed, cfg.vector.restarts
            )
            communities = partition.count
            records_by_id = {r.id: r for r in candidates}
            reps, drops = vectors.deduplicate(
                partition, records_by_id, cfg.vector.dedup_strategy, cfg.vector.score_key
            )
            vectors.export_edge_list(graph, store.root / "knn_graph.txt")
            vectors.export_partition(partition, store.root / "partition.json")
            for rid in sorted(reps):
                store.update_record(rid, {"status": "kept"})
                kept += 1
            for rid in sorted(drops):
                store.update_record(
                    rid, {"status": "dropped", "drop_reason": f"duplicate:{drops[rid]}"}
                )
                dropped += 1
        for rec in passthrough:
            store.update_record(rec.id, {"status": "kept"})
            kept += 1
        hist = vectors.community_size_histogram(partition) if candidates else {}
        click.echo("community sizes: " + json.dumps(hist))
        return {"k": kk, "communities": communities, "kept": kept, "dropped_duplicates": dropped}

    _run_stage(ctx, "dedup", run)


@main.command()
@click.option("--concepts", "concepts_path", type=click.Path(exists=True), default=None,
              help="concept graph JSON (otherwise concepts come from record tags)")
@click.pass_context
def graph(ctx, concepts_path):
    """Build the concept graph: counts, PageRank, optional pruning."""

    def run(store: RecordStore) -> dict:
        _require(store, "profile")
        cfg: PipelineConfig = ctx.obj["config"]
        records = list(store.records(status="kept")) or list(store.records(status="profiled"))
        if concepts_path:
            g = knowledge.ConceptGraph.load(concepts_path)
        else:
            g = knowledge.ConceptGraph()
            for rec in records:
                for tag in rec.tags:
                    cid = tag.lower()
                    if cid not in g.concepts:
                        g.add_concept(cid, tag.lower())
        for name, weight in cfg.knowledge.manual_weights.items():
            cid = name.lower()
            if cid in g.concepts:
                g.concepts[cid].manual_weight = float(weight)
        knowledge.count_concepts(g, records)
        pruned = 0
        if g.hyperlinks:
            knowledge.pagerank(g, cfg.knowledge.damping, cfg.knowledge.tol, cfg.knowledge.max_iter)
            if cfg.knowledge.prune_quantile is not None:
                before = len(g.concepts)
                g = knowledge.prune_by_centrality(g, cfg.knowledge.prune_quantile)
                knowledge.count_concepts(g, records)
                pruned = before - len(g.concepts)
        g.save(store.root / "concept_graph.json")
        return {"concepts": len(g.concepts), "pruned": pruned}

    _run_stage(ctx, "graph", run)


@main.command()
@click.option("--n", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--mix", type=str, default=None, help="source fractions, e.g. t2i=0.8,i2i=0.2")
@click.pass_context
def sample(ctx, n, seed, mix):
    """Rarity-weighted stratified sampling of the kept pool."""

    def run(store: RecordStore) -> dict:
        _require(store, "dedup", "graph")
        cfg: PipelineConfig = ctx.obj["config"]
        g = knowledge.ConceptGraph.load(store.root / "concept_graph.json")
        pool = list(store.records(status="kept"))
        if not pool:
            raise StageAbort(EXIT_PREREQ, "no kept records to sample")
        target = n if n is not None else cfg.sampling.n
        target = min(target, len(pool))
        the_seed = seed if seed is not None else cfg.sampling.seed
        mix_map = cfg.sampling.mix
        if mix is not None:
            mix_map = {}
            for part in mix.split(","):
                key, _, frac = part.partition("=")
                mix_map[key.strip()] = float(frac)
        stats = knowledge.build_stats(pool)
        effective = knowledge.propagate_counts(g, cfg.knowledge.decay)
        weights = {
            r.id: knowledge.sampling_weight(
                r, g, stats, effective, cfg.knowledge.epsilon, cfg.knowledge.default_weight
            )
            for r in pool
        }
        result = knowledge.weighted_sample(pool, weights, target, the_seed, mix_map)
        for rid in result.ids:
            store.update_record(rid, {"status": "sampled"})
        (store.root / "sample.json").write_text(
            json.dumps(
                {"ids": result.ids, "stratum_counts": result.stratum_counts,
                 "backfilled": result.backfilled, "seed": the_seed},
                sort_keys=True, separators=(",", ":"),
            )
        )
        return {"sampled": len(result.ids), "stratum_counts": result.stratum_counts,
                "backfilled": result.backfilled}

    _run_stage(ctx, "sample", run)


@main.command()
@click.option("--render-spec", "render_spec", type=click.Path(exists=True), default=None,
              help="TextRenderSpec JSON plus base record id: {\"record_id\":..., \"spec\":{...}}")
@click.pass_context
def pairs(ctx, render_spec):
    """Build editing pairs from pair-role groups (and optional text renders)."""

    def run(store: RecordStore) -> dict:
        _require(store, "dedup")
        cfg: PipelineConfig = ctx.obj["config"]
        groups: dict[str, list] = {}
        for rec in store.records():
            if rec.pair_role and rec.status not in ("dropped",):
                groups.setdefault(rec.pair_role[0], []).append(rec)
        all_pairs: list[pairs_mod.EditPair] = []
        for gid in sorted(groups):
            members = groups[gid]
            roles = {r.id: r.pair_role[1] for r in members}
            if "frame" in roles.values():
                frames = [
                    (r.id, r.embeddings.get("image"))
                    for r in members
                    if r.embeddings.get("image") is not None
                ]
                all_pairs.extend(
                    pairs_mod.frame_pairs(frames, cfg.pairs.tau, cfg.pairs.max_pairs, gid)
                )
            else:
                inputs = sorted(r.id for r in members if roles[r.id] == "input")
                edits = sorted(r.id for r in members if roles[r.id] == "edit")
                if len(inputs) == 1 and edits:
                    all_pairs.extend(pairs_mod.combinatorial_pairs(inputs[0], edits, gid))
        rendered = 0
        if render_spec:
            req = json.loads(Path(render_spec).read_text())
            spec = pairs_mod.TextRenderSpec.from_dict(req["spec"])
            base = store.media_for(req["record_id"])
            before_id, after_id, instruction = pairs_mod.render_text_pair(store, base, spec)
            all_pairs.append(
                pairs_mod.EditPair(before_id, after_id, "text_render", instruction,
                                   req.get("group", "text_render"))
            )
            rendered += 1
        with (store.root / "pairs.jsonl").open("w", encoding="utf-8") as f:
            for pair in all_pairs:
                f.write(json.dumps(pair.to_dict(), ensure_ascii=False, sort_keys=True))
                f.write("\n")
        return {"pairs": len(all_pairs), "groups": len(groups), "rendered": rendered}

    _run_stage(ctx, "pairs", run)


@main.command()
@click.option("--budget", type=int, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def plan(ctx, budget, rho, seed, out):
    """Pack sampled records into padding-minimizing batches."""

    def run(store: RecordStore) -> dict:
        _require(store, "sample")
        cfg: PipelineConfig = ctx.obj["config"]
        pool = list(store.records(status="sampled"))
        if not pool:
            raise StageAbort(EXIT_PREREQ, "no sampled records to plan")
        shapes = []
        for rec in pool:
            if not rec.profile:
                continue
            w, h = planner_mod.map_resolution(
                rec.profile["width"], rec.profile["height"],
                cfg.planner.target_area, cfg.planner.granularity,
            )
            shapes.append(
                planner_mod.make_shape(
                    rec.id, w, h, cfg.planner.spatial_factor, cfg.planner.text_token_estimate
                )
            )
        the_budget = budget if budget is not None else cfg.planner.token_budget
        the_rho = rho if rho is not None else cfg.planner.rho
        the_seed = seed if seed is not None else cfg.planner.seed
        batch_plan = planner_mod.plan_batches(shapes, the_budget, the_rho, the_seed)
        out_path = Path(out) if out else store.root / "plan.json"
        batch_plan.save(out_path)
        waste = planner_mod.padding_waste(batch_plan) if batch_plan.batches else 0.0
        return {"batches": len(batch_plan.batches), "budget": the_budget,
                "padding_waste": round(waste, 6)}

    _run_stage(ctx, "plan", run)


@main.command()
@click.option("--addr", type=str, default="127.0.0.1:8080")
@click.option("--propose", "propose_n", type=int, default=None,
              help="propose this many candidates on startup")
@click.option("--seed", type=int, default=None)
@click.option("--static-dir", type=click.Path(), default=None)
@click.pass_context
def serve(ctx, addr, propose_n, seed, static_dir):
    """Host the review API (and UI assets when built)."""
    try:
        store = _open_store(ctx)
        cfg: PipelineConfig = ctx.obj["config"]
        graph_path = store.root / "concept_graph.json"
        if graph_path.exists():
            g = knowledge.ConceptGraph.load(graph_path)
        else:
            g = knowledge.ConceptGraph()
        service = CurationService(
            store, g,
            thresholds=cfg.curation.thresholds,
            auto_approve=cfg.curation.auto_approve,
            lease_duration=cfg.curation.lease_duration,
            alpha=cfg.curation.alpha,
            journal_path=store.root / "tasks.jsonl",
        )
        n = propose_n if propose_n is not None else 0
        if n:
            result = service.propose_candidates(n, seed if seed is not None else cfg.curation.propose_seed)
            for task in result.tasks:
                service.ai_verify(task.task_id)
        host, _, port = addr.partition(":")
        if static_dir is None:
            default_static = Path(__file__).resolve().parents[2] / "frontend" / "dist"
            static_dir = default_static if default_static.is_dir() else None
        server = make_server(service, host, int(port or 0), static_dir)
        actual = f"{server.server_address[0]}:{server.server_address[1]}"
        click.echo(f"serving on http://{actual}", nl=True)
        sys.stdout.flush()
        server.serve_forever()
    except ZCurateError as e:
        click.echo(f"serve: [{e.code}] {e}", err=True)
        ctx.exit(EXIT_INTERNAL)


@main.command()
@click.pass_context
def stats(ctx):
    """Print per-stage summaries collected so far."""
    try:
        store = _open_store(ctx)
    except StageAbort as e:
        click.echo(str(e), err=True)
        ctx.exit(e.exit_code)
        return
    out = {}
    log_dir = store.root / "logs"
    if log_dir.is_dir():
        for f in sorted(log_dir.glob("*.json")):
            data = json.loads(f.read_text())
            data.pop("completed_at", None)
            out[f.stem] = data
    status_counts: dict[str, int] = {}
    for rec in store.records():
        status_counts[rec.status] = status_counts.get(rec.status, 0) + 1
    out["records"] = status_counts
    click.echo(json.dumps(out, ensure_ascii=False, sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
