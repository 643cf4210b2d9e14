"""Human-in-the-loop curation: proposals, dual verification, feedback.

Candidates are drawn from the kept pool with rarity-balanced weights and get
pseudo-labels from a pluggable labeler (a deterministic stub by default). An
AI rule check either auto-approves (when configured) or queues the task for a
human, who approves, rejects, or rejects with a correction. Feedback turns
per-concept rejection rates into multiplicative bumps of the concept's manual
weight, so failure-prone concepts get re-sampled for another round.

Task mutations serialize through one lock and append snapshots to a journal,
so a service restart replays to the exact same state. Time is always passed
in, never read from the wall clock, which keeps lease expiry testable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

from . import knowledge
from .errors import CurationError
from .knowledge import ConceptGraph, TagCorpusStats
from .profiler import StubScorer
from .store import DataRecord, RecordStore

DEFAULT_LEASE_DURATION = 600.0  # seconds
DEFAULT_ALPHA = 0.5

TASK_STATES = ("proposed", "ai_checked", "pending_human", "approved", "rejected", "corrected")

TASK_TRANSITIONS: dict[str, set[str]] = {
    "proposed": {"ai_checked"},
    "ai_checked": {"approved", "pending_human"},
    "pending_human": {"approved", "rejected"},
    "rejected": {"corrected"},
    "approved": set(),
    "corrected": set(),
}

TERMINAL_STATES = ("approved", "rejected", "corrected")


@dataclass
class PseudoLabel:
    caption: str
    scores: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"caption": self.caption, "scores": self.scores}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PseudoLabel":
        return cls(caption=d.get("caption", ""), scores=dict(d.get("scores") or {}))


@dataclass
class ReviewTask:
    task_id: str
    record_id: str
    pseudo_label: PseudoLabel
    state: str = "proposed"
    ai_verdict: dict[str, Any] | None = None  # {"passed": bool, "reasons": [...]}
    human_verdict: str | None = None  # "approve" | "reject"
    correction: PseudoLabel | None = None
    lease: tuple[str, float] | None = None  # (holder, expiry)
    history: list[str] = field(default_factory=list)
    seq: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "record_id": self.record_id,
            "pseudo_label": self.pseudo_label.to_dict(),
            "state": self.state,
            "ai_verdict": self.ai_verdict,
            "human_verdict": self.human_verdict,
            "correction": self.correction.to_dict() if self.correction else None,
            "lease": list(self.lease) if self.lease else None,
            "history": self.history,
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReviewTask":
        lease = d.get("lease")
        correction = d.get("correction")
        return cls(
            task_id=d["task_id"],
            record_id=d["record_id"],
            pseudo_label=PseudoLabel.from_dict(d["pseudo_label"]),
            state=d["state"],
            ai_verdict=d.get("ai_verdict"),
            human_verdict=d.get("human_verdict"),
            correction=PseudoLabel.from_dict(correction) if correction else None,
            lease=(lease[0], float(lease[1])) if lease else None,
            history=list(d.get("history") or []),
            seq=int(d.get("seq", 0)),
        )


@dataclass
class FeedbackDelta:
    concept_factors: dict[str, float]
    additions: list[str]
    removals: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "concept_factors": self.concept_factors,
            "additions": self.additions,
            "removals": self.removals,
        }


class Labeler(Protocol):
    def label(self, record: DataRecord) -> PseudoLabel: ...


class StubLabeler:
    """Deterministic pseudo-labeler: caption from the record, hashed scores."""

    score_names = ("aesthetic", "text_image_alignment")

    def label(self, record: DataRecord) -> PseudoLabel:
        caption = (
            record.captions.get("short")
            or record.captions.get("long")
            or record.alt_text
            or f"image {record.id[:12]}"
        )
        scores = {
            name: StubScorer(f"label_{name}").score(record.id, b"") for name in self.score_names
        }
        return PseudoLabel(caption=caption, scores=scores)


@dataclass
class ProposeResult:
    tasks: list[ReviewTask]
    underfull: bool = False


class CurationService:
    def __init__(
        self,
        store: RecordStore,
        graph: ConceptGraph,
        labeler: Labeler | None = None,
        thresholds: Mapping[str, float] | None = None,
        auto_approve: bool = False,
        lease_duration: float = DEFAULT_LEASE_DURATION,
        alpha: float = DEFAULT_ALPHA,
        journal_path: str | Path | None = None,
    ):
        self.store = store
        self.graph = graph
        self.labeler = labeler or StubLabeler()
        self.thresholds = dict(thresholds or {})
        self.auto_approve = auto_approve
        self.lease_duration = lease_duration
        self.alpha = alpha
        self.tasks: dict[str, ReviewTask] = {}
        self.curated: set[str] = set()
        self.excluded: set[str] = set()
        self._fed_back: set[str] = set()
        self._seq = 0
        self._lock = threading.RLock()
        self.journal_path = Path(journal_path) if journal_path else None
        if self.journal_path and self.journal_path.exists():
            self._replay()

    # -- persistence -------------------------------------------------------

    def _replay(self) -> None:
        with self.journal_path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("event") == "feedback":
                    # weight factors were applied to the live graph at the
                    # time; replay only restores the bookkeeping sets
                    self._fed_back.update(obj["task_ids"])
                    self.curated.update(obj["additions"])
                    self.excluded.update(obj["removals"])
                    continue
                task = ReviewTask.from_dict(obj)
                self.tasks[task.task_id] = task
                self._seq = max(self._seq, task.seq)

    def _persist(self, task: ReviewTask) -> None:
        if self.journal_path is None:
            return
        with self.journal_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(task.to_dict(), ensure_ascii=False, sort_keys=True))
            f.write("\n")

    def _persist_feedback(self, task_ids: list[str], additions: list[str], removals: list[str]) -> None:
        if self.journal_path is None:
            return
        event = {
            "event": "feedback",
            "task_ids": task_ids,
            "additions": additions,
            "removals": removals,
        }
        with self.journal_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(event, ensure_ascii=False, sort_keys=True))
            f.write("\n")

    def _transition(self, task: ReviewTask, new_state: str) -> None:
        if new_state not in TASK_TRANSITIONS.get(task.state, set()):
            raise CurationError("bad_transition", f"{task.state} -> {new_state}")
        task.history.append(task.state)
        task.state = new_state

    # -- proposal ----------------------------------------------------------

    def propose_candidates(
        self, n: int, seed: int = 0, mix: Mapping[str, float] | None = None
    ) -> ProposeResult:
        """Draw a rarity-balanced batch of kept records and pseudo-label them."""
        if n < 1:
            raise CurationError("bad_n", "need n >= 1")
        with self._lock:
            pool = [r for r in self.store.records(status="kept")]
            underfull = len(pool) < n
            draw = min(n, len(pool))
            tasks: list[ReviewTask] = []
            if draw:
                stats = knowledge.build_stats(pool)
                effective = knowledge.propagate_counts(self.graph)
                weights = {
                    r.id: knowledge.sampling_weight(r, self.graph, stats, effective)
                    for r in pool
                }
                result = knowledge.weighted_sample(pool, weights, draw, seed=seed, mix=mix)
                by_id = {r.id: r for r in pool}
                for rid in result.ids:
                    self._seq += 1
                    task = ReviewTask(
                        task_id=f"task-{self._seq:06d}",
                        record_id=rid,
                        pseudo_label=self.labeler.label(by_id[rid]),
                        seq=self._seq,
                    )
                    self.tasks[task.task_id] = task
                    self._persist(task)
                    tasks.append(task)
            return ProposeResult(tasks=tasks, underfull=underfull)

    # -- verification ------------------------------------------------------

    def ai_verify(self, task_id: str, thresholds: Mapping[str, float] | None = None) -> ReviewTask:
        """Deterministic rule check; pass+auto-approve skips the human queue."""
        with self._lock:
            task = self._get(task_id)
            if task.state != "proposed":
                raise CurationError("bad_transition", f"ai_verify on {task.state} task")
            rules = dict(self.thresholds if thresholds is None else thresholds)
            reasons: list[str] = []
            if not task.pseudo_label.caption.strip():
                reasons.append("caption_empty")
            for name in sorted(rules):
                score = task.pseudo_label.scores.get(name)
                if score is None or score < rules[name]:
                    reasons.append(name)
            passed = not reasons
            task.ai_verdict = {"passed": passed, "reasons": reasons}
            self._transition(task, "ai_checked")
            if passed and self.auto_approve:
                self._transition(task, "approved")
            else:
                self._transition(task, "pending_human")
            self._persist(task)
            return task

    # -- human queue -------------------------------------------------------

    def lease_next(self, holder: str, now: float) -> ReviewTask | None:
        """Lease the oldest unleased pending task to holder; None when empty."""
        with self._lock:
            for task in sorted(self.tasks.values(), key=lambda t: t.seq):
                if task.state != "pending_human":
                    continue
                if task.lease is not None and task.lease[1] > now:
                    continue
                task.lease = (holder, now + self.lease_duration)
                self._persist(task)
                return task
            return None

    def submit_human_verdict(
        self,
        task_id: str,
        holder: str,
        verdict: str,
        correction: PseudoLabel | None = None,
        now: float = 0.0,
    ) -> ReviewTask:
        if verdict not in ("approve", "reject"):
            raise CurationError("bad_verdict", verdict)
        with self._lock:
            task = self._get(task_id)
            if task.state != "pending_human":
                raise CurationError("bad_transition", f"verdict on {task.state} task")
            if task.lease is None or task.lease[0] != holder or task.lease[1] <= now:
                raise CurationError("lease_violation", f"task {task_id} not leased to {holder}")
            task.human_verdict = verdict
            if verdict == "approve":
                self._transition(task, "approved")
            else:
                self._transition(task, "rejected")
                if correction is not None:
                    task.correction = correction
                    self._transition(task, "corrected")
            task.lease = None
            self._persist(task)
            return task

    def _get(self, task_id: str) -> ReviewTask:
        task = self.tasks.get(task_id)
        if task is None:
            raise CurationError("not_found", f"task {task_id}")
        return task

    def get_task(self, task_id: str) -> ReviewTask:
        with self._lock:
            return self._get(task_id)

    # -- feedback ----------------------------------------------------------

    def _concepts_of(self, record: DataRecord) -> list[str]:
        names = self.graph.name_index()
        seen: list[str] = []
        for tag in record.tags:
            cid = names.get(tag.lower())
            if cid is not None and cid not in seen:
                seen.append(cid)
        return seen

    def apply_feedback(self, task_ids: Iterable[str] | None = None) -> FeedbackDelta:
        """Fold a window of resolved tasks back into weights and the curated set.

        Rejection rate per concept counts human rejections (with or without a
        later correction); each concept's manual weight scales by
        1 + alpha * rate.
        """
        with self._lock:
            if task_ids is None:
                window = [
                    t
                    for t in sorted(self.tasks.values(), key=lambda t: t.seq)
                    if t.state in TERMINAL_STATES and t.task_id not in self._fed_back
                ]
            else:
                window = [self._get(tid) for tid in task_ids]
                for t in window:
                    if t.state not in TERMINAL_STATES:
                        raise CurationError("bad_transition", f"{t.task_id} is {t.state}")
            additions: list[str] = []
            removals: list[str] = []
            concept_total: dict[str, int] = {}
            concept_rejected: dict[str, int] = {}
            for task in window:
                record = self.store.get_record(task.record_id)
                rejected = task.human_verdict == "reject"
                if task.state in ("approved", "corrected"):
                    additions.append(task.record_id)
                    self.curated.add(task.record_id)
                else:
                    removals.append(task.record_id)
                    self.excluded.add(task.record_id)
                for cid in self._concepts_of(record):
                    concept_total[cid] = concept_total.get(cid, 0) + 1
                    if rejected:
                        concept_rejected[cid] = concept_rejected.get(cid, 0) + 1
                self._fed_back.add(task.task_id)
            factors: dict[str, float] = {}
            for cid in sorted(concept_total):
                rate = concept_rejected.get(cid, 0) / concept_total[cid]
                factor = 1.0 + self.alpha * rate
                factors[cid] = factor
                self.graph.concepts[cid].manual_weight *= factor
            self._persist_feedback([t.task_id for t in window], additions, removals)
            return FeedbackDelta(
                concept_factors=factors, additions=additions, removals=removals
            )

    # -- stats ---------------------------------------------------------------

    def stats(self) -> dict[str, Any]:
        with self._lock:
            pending = sum(1 for t in self.tasks.values() if t.state == "pending_human")
            resolved = [t for t in self.tasks.values() if t.state in TERMINAL_STATES]
            approved = sum(1 for t in resolved if t.state == "approved")
            concept_total: dict[str, int] = {}
            concept_rejected: dict[str, int] = {}
            for task in resolved:
                record = self.store.get_record(task.record_id)
                for cid in self._concepts_of(record):
                    concept_total[cid] = concept_total.get(cid, 0) + 1
                    if task.human_verdict == "reject":
                        concept_rejected[cid] = concept_rejected.get(cid, 0) + 1
            per_concept = {
                cid: concept_rejected.get(cid, 0) / concept_total[cid]
                for cid in sorted(concept_total)
            }
            return {
                "queue_depth": pending,
                "approval_rate": (approved / len(resolved)) if resolved else None,
                "resolved": len(resolved),
                "per_concept_rejection": per_concept,
            }
