"""Image profiling signals and rule-based filtering.

Intrinsic signals are computed from the media bytes alone: metadata, a 64-bit
DCT perceptual hash, a compression ratio against the ideal uncompressed size,
border-pixel variance (low values flag flat backgrounds and frames), and the
bits-per-pixel of a transient JPEG re-encode as a complexity proxy. Learned
scorers (aesthetics, NSFW, ...) are pluggable; a deterministic hash-derived
stub stands in so pipelines and tests run without any model.

The pHash recipe is pinned for cross-run stability: grayscale via the 601
luma transform, bilinear resize to 32x32, orthonormal 2D DCT-II, then the 64
coefficients (u, v) in [0,8)^2 excluding (0,0) plus (8,0), each thresholded
against their median. Bits are packed row-major, (8,0) last, MSB first.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.fft import dctn

from .errors import ProfileError

DEFAULT_BORDER_WIDTH = 4
DEFAULT_BPP_QUALITY = 75

SCORE_NAMES = ("aesthetic", "nsfw", "aigc", "text_image_alignment")


@dataclass
class ProfileReport:
    width: int
    height: int
    file_size: int
    aspect_ratio: float
    phash: int
    compression_ratio: float
    border_variance: float
    bpp: float
    external_scores: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "file_size": self.file_size,
            "aspect_ratio": self.aspect_ratio,
            "phash": format(self.phash, "016x"),
            "compression_ratio": self.compression_ratio,
            "border_variance": self.border_variance,
            "bpp": self.bpp,
            "external_scores": self.external_scores,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProfileReport":
        return cls(
            width=d["width"],
            height=d["height"],
            file_size=d["file_size"],
            aspect_ratio=d["aspect_ratio"],
            phash=int(d["phash"], 16),
            compression_ratio=d["compression_ratio"],
            border_variance=d["border_variance"],
            bpp=d["bpp"],
            external_scores=dict(d.get("external_scores") or {}),
            flags=list(d.get("flags") or []),
        )


def _decode(media: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(media))
        img.load()
        return img
    except (UnidentifiedImageError, OSError, ValueError):
        raise ProfileError("decode_error") from None


def extract_metadata(media: bytes) -> tuple[int, int, int, float]:
    """Return (width, height, file_size, aspect_ratio) from the decoded header."""
    img = _decode(media)
    w, h = img.size
    return w, h, len(media), w / h


def phash(media: bytes) -> int:
    """64-bit perceptual hash; equal bytes always produce equal hashes."""
    img = _decode(media)
    gray = img.convert("L")
    small = gray.resize((32, 32), Image.Resampling.BILINEAR)
    arr = np.asarray(small, dtype=np.float64)
    coeff = dctn(arr, type=2, norm="ortho")
    vals = [coeff[u, v] for u in range(8) for v in range(8) if (u, v) != (0, 0)]
    vals.append(coeff[8, 0])
    vals = np.asarray(vals)
    median = float(np.median(vals))
    h = 0
    for v in vals:
        h = (h << 1) | int(v > median)
    return h


def hamming(a: int, b: int) -> int:
    return ((a ^ b) & 0xFFFF_FFFF_FFFF_FFFF).bit_count()


def compression_ratio(
    width: int, height: int, bit_depth: int, channels: int, file_size: int
) -> float:
    """Ideal uncompressed byte count divided by the actual file size."""
    if min(width, height, bit_depth, channels) <= 0:
        raise ProfileError("bad_dimensions")
    if file_size <= 0:
        raise ProfileError("bad_file_size")
    return (width * height * channels * bit_depth / 8) / file_size


def border_variance(media: bytes, border_width: int = DEFAULT_BORDER_WIDTH) -> float:
    """Population variance of normalized gray intensities over the border ring."""
    img = _decode(media)
    arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    h, w = arr.shape
    if h < 2 * border_width or w < 2 * border_width:
        raise ProfileError("too_small", f"{w}x{h} with border {border_width}")
    mask = np.zeros((h, w), dtype=bool)
    mask[:border_width, :] = True
    mask[-border_width:, :] = True
    mask[:, :border_width] = True
    mask[:, -border_width:] = True
    return float(np.var(arr[mask]))


def bpp_proxy(media: bytes, quality: int = DEFAULT_BPP_QUALITY) -> float:
    """Bits per pixel after a transient JPEG re-encode at the given quality."""
    if not 1 <= quality <= 100:
        raise ProfileError("bad_quality", f"quality {quality} not in 1..100")
    img = _decode(media)
    if img.mode not in ("RGB", "L"):
        img = img.convert("RGB")
    buf = io.BytesIO()
    try:
        img.save(buf, format="JPEG", quality=quality)
    except OSError:
        raise ProfileError("encode_error") from None
    w, h = img.size
    return 8 * len(buf.getvalue()) / (w * h)


class Scorer(Protocol):
    name: str

    def score(self, record_id: str, media: bytes) -> float: ...


class StubScorer:
    """Deterministic pseudo-scorer: uniform in [0,1) derived from a hash."""

    def __init__(self, name: str):
        self.name = name

    def score(self, record_id: str, media: bytes) -> float:
        digest = hashlib.sha256(f"{self.name}:{record_id}".encode()).digest()
        return int.from_bytes(digest[:8], "big") / 2**64


def default_scorers() -> list[StubScorer]:
    return [StubScorer(name) for name in SCORE_NAMES]


_CHANNELS = {"1": 1, "L": 1, "LA": 2, "P": 1, "RGB": 3, "RGBA": 4, "CMYK": 4, "I": 1, "F": 1}


def build_report(
    media: bytes,
    record_id: str,
    scorers: list[Scorer] | None = None,
    border_width: int = DEFAULT_BORDER_WIDTH,
    bpp_quality: int = DEFAULT_BPP_QUALITY,
) -> ProfileReport:
    """Compute every intrinsic signal plus one entry per registered scorer."""
    img = _decode(media)
    w, h = img.size
    channels = _CHANNELS.get(img.mode, 3)
    report = ProfileReport(
        width=w,
        height=h,
        file_size=len(media),
        aspect_ratio=w / h,
        phash=phash(media),
        compression_ratio=compression_ratio(w, h, 8, channels, len(media)),
        border_variance=border_variance(media, border_width),
        bpp=bpp_proxy(media, bpp_quality),
    )
    for scorer in scorers or []:
        report.external_scores[scorer.name] = scorer.score(record_id, media)
    return report


def profile(store, record_id: str, scorers=None, border_width: int = DEFAULT_BORDER_WIDTH,
            bpp_quality: int = DEFAULT_BPP_QUALITY) -> ProfileReport | None:
    """Profile one raw record in the store; decode failures drop the record."""
    rec = store.get_record(record_id)
    if rec.status != "raw":
        raise ProfileError("bad_status", f"record {record_id} is {rec.status}, not raw")
    media = store.media_for(record_id)
    try:
        report = build_report(media, record_id, scorers, border_width, bpp_quality)
    except ProfileError as e:
        if e.code == "decode_error":
            store.update_record(record_id, {"status": "dropped", "drop_reason": "decode"})
            return None
        raise
    store.update_record(record_id, {"status": "profiled", "profile": report.to_dict()})
    return report


# -- rule-based filtering ---------------------------------------------------

_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}
_OP_ALIASES = {"≤": "<=", "≥": ">="}


@dataclass
class FilterRule:
    name: str
    field: str
    op: str
    threshold: float
    action: str  # "drop" | "flag"

    def __post_init__(self):
        self.op = _OP_ALIASES.get(self.op, self.op)
        if self.op not in _OPS:
            raise ProfileError("bad_rule", f"unknown op {self.op!r} in rule {self.name}")
        if self.action not in ("drop", "flag"):
            raise ProfileError("bad_rule", f"unknown action {self.action!r} in rule {self.name}")
        if not math.isfinite(self.threshold):
            raise ProfileError("bad_rule", f"non-finite threshold in rule {self.name}")

    def fires(self, report: ProfileReport) -> bool:
        if hasattr(report, self.field):
            value = getattr(report, self.field)
        elif self.field in report.external_scores:
            value = report.external_scores[self.field]
        else:
            return False
        return _OPS[self.op](value, self.threshold)


@dataclass
class FilterRuleSet:
    rules: list[FilterRule] = field(default_factory=list)

    def __post_init__(self):
        names = [r.name for r in self.rules]
        if len(names) != len(set(names)):
            raise ProfileError("bad_rule", "duplicate rule names")

    @classmethod
    def from_config(cls, entries: list[dict[str, Any]]) -> "FilterRuleSet":
        return cls([FilterRule(**e) for e in entries])

    @classmethod
    def load(cls, path: str | Path) -> "FilterRuleSet":
        import json

        return cls.from_config(json.loads(Path(path).read_text()))


@dataclass
class FilterDecision:
    keep: bool
    reason: str | None
    flags: list[str]


def apply_filters(report: ProfileReport, rules: FilterRuleSet) -> FilterDecision:
    """Evaluate rules in order; first firing drop rule wins, flags accumulate."""
    reason = None
    flags: list[str] = []
    for rule in rules.rules:
        if not rule.fires(report):
            continue
        if rule.action == "flag":
            flags.append(rule.name)
        elif reason is None:
            reason = rule.name
    return FilterDecision(keep=reason is None, reason=reason, flags=flags)
