"""Sequence-length estimation, resolution mapping, padding-aware batching.

Token counts derive from resolution: an image contributes one token per
spatial_factor x spatial_factor patch, plus a flat text estimate. Batches are
built over shapes sorted by token count, closing a batch whenever adding the
next sample would blow the padded-token budget (batch size x max tokens) or
stretch the within-batch length ratio past rho. Each closed batch also caps
the size of every later batch, which makes batch size non-increasing in
max_tokens by construction: long-sequence batches are never larger than
short-sequence ones.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import PlanError

DEFAULT_SPATIAL_FACTOR = 16
DEFAULT_TEXT_TOKENS = 128
DEFAULT_RHO = 1.25
DEFAULT_GRANULARITY = 32


@dataclass(frozen=True)
class SampleShape:
    record_id: str
    width: int
    height: int
    text_tokens: int
    image_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.text_tokens + self.image_tokens


def estimate_tokens(
    width: int,
    height: int,
    spatial_factor: int = DEFAULT_SPATIAL_FACTOR,
    text_tokens: int = DEFAULT_TEXT_TOKENS,
) -> tuple[int, int, int]:
    """Return (image_tokens, text_tokens, total) for the given resolution."""
    if width <= 0 or height <= 0:
        raise PlanError("bad_dimensions", f"{width}x{height}")
    image_tokens = math.ceil(width / spatial_factor) * math.ceil(height / spatial_factor)
    return image_tokens, text_tokens, image_tokens + text_tokens


def make_shape(
    record_id: str,
    width: int,
    height: int,
    spatial_factor: int = DEFAULT_SPATIAL_FACTOR,
    text_tokens: int = DEFAULT_TEXT_TOKENS,
) -> SampleShape:
    image_tokens, text_tokens, _ = estimate_tokens(width, height, spatial_factor, text_tokens)
    return SampleShape(record_id, width, height, text_tokens, image_tokens)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def map_resolution(
    width: int, height: int, target_area: int, granularity: int = DEFAULT_GRANULARITY
) -> tuple[int, int]:
    """Scale to the target area, snapping each side to the granularity grid.

    Aspect ratio survives within one rounding step; sides never shrink below
    one grid cell.
    """
    if width <= 0 or height <= 0:
        raise PlanError("bad_dimensions", f"{width}x{height}")
    if target_area < granularity * granularity:
        raise PlanError("bad_target", f"target_area {target_area} below {granularity}^2")
    s = math.sqrt(target_area / (width * height))
    new_w = max(granularity, _round_half_up(width * s / granularity) * granularity)
    new_h = max(granularity, _round_half_up(height * s / granularity) * granularity)
    return new_w, new_h


@dataclass
class Batch:
    ids: list[str]
    max_tokens: int
    token_sum: int

    @property
    def padded_token_sum(self) -> int:
        return len(self.ids) * self.max_tokens


@dataclass
class BatchPlan:
    batches: list[Batch]
    token_budget: int
    seed: int = 0

    def sample_ids(self) -> list[str]:
        return [rid for b in self.batches for rid in b.ids]

    def to_dict(self) -> dict[str, Any]:
        return {
            "batches": [{"ids": b.ids, "max_tokens": b.max_tokens} for b in self.batches],
            "budget": self.token_budget,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")))


def plan_batches(
    shapes: Iterable[SampleShape],
    token_budget: int,
    rho: float = DEFAULT_RHO,
    seed: int = 0,
) -> BatchPlan:
    """Greedy length-sorted batching under a padded-token budget.

    Guarantees: every shape appears exactly once; no batch's padded size
    (len * max_tokens) exceeds the budget; within a batch max/min token ratio
    stays <= rho; batches holding longer sequences are never larger than
    batches holding shorter ones. Batch order is then shuffled by seed.
    """
    if rho < 1.0:
        raise PlanError("bad_rho", f"rho must be >= 1, got {rho}")
    items = sorted(shapes, key=lambda s: (s.total_tokens, s.record_id))
    for s in items:
        if s.total_tokens > token_budget:
            raise PlanError(
                "over_budget", f"sample {s.record_id} needs {s.total_tokens} > budget {token_budget}"
            )
    batches: list[Batch] = []
    size_cap = len(items) if items else 0
    current: list[SampleShape] = []

    def close() -> None:
        nonlocal size_cap
        if not current:
            return
        batches.append(
            Batch(
                ids=[s.record_id for s in current],
                max_tokens=current[-1].total_tokens,
                token_sum=sum(s.total_tokens for s in current),
            )
        )
        size_cap = min(size_cap, len(current))
        current.clear()

    for s in items:
        if current:
            fits_budget = (len(current) + 1) * s.total_tokens <= token_budget
            fits_ratio = s.total_tokens <= rho * current[0].total_tokens
            fits_cap = len(current) + 1 <= size_cap
            if not (fits_budget and fits_ratio and fits_cap):
                close()
        current.append(s)
    close()

    rng = random.Random(seed)
    rng.shuffle(batches)
    return BatchPlan(batches=batches, token_budget=token_budget, seed=seed)


def padding_waste(plan: BatchPlan) -> float:
    """Fraction of padded tokens that are padding: 1 - real / padded."""
    if not plan.batches:
        raise PlanError("empty_plan")
    real = sum(b.token_sum for b in plan.batches)
    padded = sum(b.padded_token_sum for b in plan.batches)
    return 1.0 - real / padded


def fixed_size_baseline(
    shapes: Sequence[SampleShape], batch_size: int, seed: int = 0
) -> BatchPlan:
    """Random-order fixed-size batching; the waste yardstick."""
    if batch_size < 1:
        raise PlanError("bad_batch_size")
    items = sorted(shapes, key=lambda s: (s.total_tokens, s.record_id))
    rng = random.Random(seed)
    rng.shuffle(items)
    batches = []
    for i in range(0, len(items), batch_size):
        chunk = items[i : i + batch_size]
        batches.append(
            Batch(
                ids=[s.record_id for s in chunk],
                max_tokens=max(s.total_tokens for s in chunk),
                token_sum=sum(s.total_tokens for s in chunk),
            )
        )
    return BatchPlan(batches=batches, token_budget=0, seed=seed)
