"""CLI stages: ordering, idempotence, exit codes, full-pipeline run."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from zcurate.cli import main
from zcurate.store import RecordStore


@pytest.fixture
def runner():
    return CliRunner()


def run_cli(runner, fixture_dir, data_dir, *args, config=True):
    argv = ["--data-dir", str(data_dir)]
    if config:
        argv = ["--config", str(fixture_dir / "config.json")] + argv
    argv += list(args)
    return runner.invoke(main, argv, catch_exceptions=False)


class TestStageOrdering:
    def test_profile_before_ingest_exits_2(self, runner, fixture_dir, tmp_path):
        result = run_cli(runner, fixture_dir, tmp_path / "d", "profile")
        assert result.exit_code == 2

    def test_plan_before_sample_exits_2(self, runner, fixture_dir, tmp_path):
        result = run_cli(runner, fixture_dir, tmp_path / "d", "plan")
        assert result.exit_code == 2

    def test_bad_config_exits_3(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"planner": {"rho": "fast"}}))
        result = runner.invoke(
            main, ["--config", str(bad), "--data-dir", str(tmp_path / "d"), "ingest", str(bad)]
        )
        assert result.exit_code == 3
        assert "planner.rho" in result.output

    def test_unknown_config_key_exits_3(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"planner": {"rofl": 3}}))
        result = runner.invoke(
            main, ["--config", str(bad), "--data-dir", str(tmp_path / "d"), "stats"]
        )
        assert result.exit_code == 3
        assert "planner.rofl" in result.output


@pytest.fixture(scope="module")
def pipeline(fixture_dir, tmp_path_factory):
    """Run the whole pipeline once; reuse across assertions."""
    data_dir = tmp_path_factory.mktemp("pipeline")
    runner = CliRunner()
    results = {}
    for stage_args in (
        ["ingest", str(fixture_dir / "ingest.jsonl")],
        ["profile"],
        ["dedup"],
        ["graph"],
        ["sample"],
        ["pairs"],
        ["plan"],
    ):
        result = run_cli(runner, fixture_dir, data_dir, *stage_args)
        assert result.exit_code == 0, f"{stage_args}: {result.output}"
        results[stage_args[0]] = result.output
    return data_dir, results


class TestFullPipeline:
    def test_ingest_counts(self, pipeline):
        data_dir, results = pipeline
        summary = json.loads((data_dir / "logs" / "ingest.json").read_text())
        assert summary["added"] == 51  # 50 images + 1 corrupt-media line
        assert summary["rejected"] == 1
        assert summary["reject_reasons"] == {"parse": 1}

    def test_profile_drops_corrupt(self, pipeline):
        data_dir, _ = pipeline
        summary = json.loads((data_dir / "logs" / "profile.json").read_text())
        assert summary["profiled"] == 50
        assert summary["dropped"] == 1

    def test_dedup_collapses_planted_clusters(self, pipeline):
        data_dir, _ = pipeline
        summary = json.loads((data_dir / "logs" / "dedup.json").read_text())
        # 5 triplets -> 5 reps + 35 singles kept, 10 dropped as duplicates
        assert summary["kept"] == 40
        assert summary["dropped_duplicates"] == 10

    def test_sample_respects_mix(self, pipeline):
        data_dir, _ = pipeline
        sample = json.loads((data_dir / "sample.json").read_text())
        assert len(sample["ids"]) == 20
        assert sample["stratum_counts"]["t2i"] + sample["stratum_counts"]["i2i"] + sample[
            "backfilled"
        ] == 20

    def test_pairs_written(self, pipeline):
        data_dir, _ = pipeline
        lines = (data_dir / "pairs.jsonl").read_text().splitlines()
        pairs = [json.loads(line) for line in lines]
        combinatorial = [p for p in pairs if p["group"] == "g-edit"]
        frames = [p for p in pairs if p["group"] == "g-frames"]
        assert len(combinatorial) == 12  # input + 3 edits
        assert len(frames) == 12  # 4 frames all similar
        assert {p["relation"] for p in combinatorial} == {"expert", "inverse", "composed"}

    def test_plan_budget_and_coverage(self, pipeline):
        data_dir, _ = pipeline
        plan = json.loads((data_dir / "plan.json").read_text())
        sample = json.loads((data_dir / "sample.json").read_text())
        planned = [rid for b in plan["batches"] for rid in b["ids"]]
        assert sorted(planned) == sorted(sample["ids"])
        for batch in plan["batches"]:
            assert len(batch["ids"]) * batch["max_tokens"] <= plan["budget"]

    def test_statuses_consistent(self, pipeline):
        data_dir, _ = pipeline
        store = RecordStore(data_dir)
        counts: dict[str, int] = {}
        for rec in store.records():
            counts[rec.status] = counts.get(rec.status, 0) + 1
        assert counts["sampled"] == 20
        assert counts["kept"] == 20  # 40 kept - 20 sampled
        assert counts["dropped"] == 11  # 10 duplicates + 1 decode

    def test_rerun_is_noop(self, pipeline, fixture_dir):
        data_dir, _ = pipeline
        runner = CliRunner()
        before = (data_dir / "sample.json").read_bytes()
        result = run_cli(runner, fixture_dir, data_dir, "sample")
        assert result.exit_code == 0
        assert "already complete" in result.output
        assert (data_dir / "sample.json").read_bytes() == before

    def test_stats_reports_stages(self, pipeline, fixture_dir):
        data_dir, _ = pipeline
        runner = CliRunner()
        result = run_cli(runner, fixture_dir, data_dir, "stats")
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert {"ingest", "profile", "dedup", "graph", "sample", "pairs", "plan"} <= set(payload)
        assert payload["records"]["sampled"] == 20


class TestFlags:
    def test_dedup_k_flag_recorded_in_summary(self, fixture_dir, tmp_path):
        data_dir = tmp_path / "kflag"
        runner = CliRunner()
        run_cli(runner, fixture_dir, data_dir, "ingest", str(fixture_dir / "ingest.jsonl"))
        run_cli(runner, fixture_dir, data_dir, "profile")
        result = run_cli(runner, fixture_dir, data_dir, "dedup", "--k", "100")
        assert result.exit_code == 0
        summary = json.loads((data_dir / "logs" / "dedup.json").read_text())
        assert summary["k"] == 100

    def test_profile_jobs_flag_matches_serial(self, fixture_dir, tmp_path):
        runner = CliRunner()
        digests = []
        for label, jobs in (("serial", "1"), ("parallel", "4")):
            data_dir = tmp_path / label
            run_cli(runner, fixture_dir, data_dir, "ingest", str(fixture_dir / "ingest.jsonl"))
            result = run_cli(runner, fixture_dir, data_dir, "profile", "--jobs", jobs)
            assert result.exit_code == 0
            store = RecordStore(data_dir)
            digest = sorted(
                (r.id, r.status, json.dumps(r.profile, sort_keys=True)) for r in store.records()
            )
            digests.append(digest)
        assert digests[0] == digests[1]


class TestDeterminism:
    def test_two_runs_byte_identical(self, fixture_dir, tmp_path_factory):
        """Full pipeline twice from scratch: identical artifact bytes."""
        runner = CliRunner()
        digests = []
        for run_no in range(2):
            data_dir = tmp_path_factory.mktemp(f"det{run_no}")
            for stage_args in (
                ["ingest", str(fixture_dir / "ingest.jsonl")],
                ["profile"], ["dedup"], ["graph"], ["sample"], ["pairs"], ["plan"],
            ):
                result = run_cli(runner, fixture_dir, data_dir, *stage_args)
                assert result.exit_code == 0
            import hashlib

            bundle = hashlib.sha256()
            for name in ("records.jsonl", "sample.json", "pairs.jsonl", "plan.json",
                         "concept_graph.json", "knn_graph.txt", "partition.json"):
                bundle.update(name.encode())
                bundle.update((data_dir / name).read_bytes())
            digests.append(bundle.hexdigest())
        assert digests[0] == digests[1]
