"""Editing-pair construction: combinatorics, frame grouping, text rendering.

One input image with N edited versions yields all N(N+1) ordered pairs:
input->edit keeps the expert instruction, edit->input inverts it (the target
is then a real, undistorted image), and edit->edit composes two edits. Video
frame groups pair up by embedding cosine similarity. Text-editing pairs are
synthesized by rendering text onto a base image, so the ground-truth
instruction is known exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from . import font5x7
from .errors import PairError
from .profiler import _decode

DEFAULT_FRAME_TAU = 0.85
DEFAULT_MAX_PAIRS = 20

RELATIONS = ("expert", "composed", "inverse", "frame", "text_render")
FONTS = ("mono5x7",)


@dataclass(frozen=True)
class EditPair:
    source: str
    target: str
    relation: str
    instruction: str | None
    group: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "target": self.target,
            "relation": self.relation,
            "instruction": self.instruction,
            "group": self.group,
        }


def combinatorial_pairs(
    input_id: str,
    edits: Sequence[str],
    group: str,
    instructions: Mapping[str, str] | None = None,
) -> list[EditPair]:
    """All ordered pairs over {input} + edits: exactly N(N+1) for N edits."""
    ids = [input_id, *edits]
    if len(set(ids)) != len(ids):
        raise PairError("duplicate_ids")
    instructions = instructions or {}
    pairs: list[EditPair] = []
    for a in ids:
        for b in ids:
            if a == b:
                continue
            if a == input_id:
                relation = "expert"
                instruction = instructions.get(b)
            elif b == input_id:
                relation = "inverse"
                instruction = None
            else:
                relation = "composed"
                ia, ib = instructions.get(a), instructions.get(b)
                instruction = f"{ia}; then {ib}" if ia and ib else None
            pairs.append(EditPair(a, b, relation, instruction, group))
    return pairs


def frame_pairs(
    group: Iterable[tuple[str, Sequence[float]]],
    tau: float = DEFAULT_FRAME_TAU,
    max_pairs: int = DEFAULT_MAX_PAIRS,
    group_id: str = "",
) -> list[EditPair]:
    """Orient every frame pair with cosine >= tau, most similar first."""
    if not -1.0 <= tau <= 1.0:
        raise PairError("bad_tau", f"tau {tau} outside [-1, 1]")
    items = sorted(group, key=lambda kv: kv[0])
    if not items:
        return []
    dim = len(items[0][1])
    vecs: dict[str, np.ndarray] = {}
    for fid, emb in items:
        v = np.asarray(emb, dtype=np.float64)
        if v.shape != (dim,):
            raise PairError("dim_mismatch", f"frame {fid}")
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise PairError("zero_vector", f"frame {fid}")
        vecs[fid] = v / norm
    scored: list[tuple[float, str, str]] = []
    ids = [fid for fid, _ in items]
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            sim = float(vecs[a] @ vecs[b])
            if sim >= tau:
                scored.append((sim, a, b))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    pairs: list[EditPair] = []
    for sim, a, b in scored:
        pairs.append(EditPair(a, b, "frame", None, group_id))
        pairs.append(EditPair(b, a, "frame", None, group_id))
    return pairs[:max_pairs]


# -- text rendering ------------------------------------------------------------


@dataclass
class TextRenderSpec:
    text: str
    box: tuple[int, int, int, int]  # x, y, w, h in pixels
    font: str = "mono5x7"
    size: int = 16
    color: tuple[int, int, int] = (0, 0, 0)
    op: str = "add"  # add | remove | replace
    new_text: str | None = None  # replacement text for op=replace

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TextRenderSpec":
        return cls(
            text=d["text"],
            box=tuple(d["box"]),
            font=d.get("font", "mono5x7"),
            size=int(d.get("size", 16)),
            color=tuple(d.get("color", (0, 0, 0))),
            op=d.get("op", "add"),
            new_text=d.get("new_text"),
        )

    def validate(self, image_size: tuple[int, int]) -> None:
        if self.op not in ("add", "remove", "replace"):
            raise PairError("bad_op", self.op)
        if self.font not in FONTS:
            raise PairError("bad_font", self.font)
        x, y, w, h = self.box
        iw, ih = image_size
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > iw or y + h > ih:
            raise PairError("bad_box", f"box {self.box} outside {iw}x{ih}")
        if self.op in ("add", "replace") and not self.text:
            raise PairError("empty_text")
        if self.op == "replace" and not self.new_text:
            raise PairError("empty_text", "replace needs new_text")
        if self.op == "remove" and not self.text:
            raise PairError("empty_text")


def _render_text(base: Image.Image, spec: TextRenderSpec, text: str) -> Image.Image:
    """Stamp text into the box; pixels outside the box are never touched."""
    img = base.convert("RGB")
    px = img.load()
    x0, y0, bw, bh = spec.box
    scale = max(1, spec.size // font5x7.CELL_HEIGHT)
    cell_w = font5x7.CELL_WIDTH * scale
    cell_h = font5x7.CELL_HEIGHT * scale
    cx, cy = 0, 0
    for ch in text:
        if ch == "\n" or (cx + cell_w > bw and cx > 0):
            cx, cy = 0, cy + cell_h
            if ch == "\n":
                continue
        if cy + cell_h > bh:
            break  # clip: text never escapes the box
        for gx, gy in font5x7.glyph_pixels(ch):
            for sx in range(scale):
                for sy in range(scale):
                    xx = x0 + cx + gx * scale + sx
                    yy = y0 + cy + gy * scale + sy
                    if xx < x0 + bw and yy < y0 + bh:
                        px[xx, yy] = spec.color
        cx += cell_w
    return img


def _encode_png(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _color_hex(color: tuple[int, int, int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*color)


def _instruction(spec: TextRenderSpec) -> str:
    x, y, w, h = spec.box
    region = f"({x},{y},{w},{h})"
    if spec.op == "add":
        return f'Add the text "{spec.text}" at region {region} in {_color_hex(spec.color)}'
    if spec.op == "remove":
        return f'Remove the text "{spec.text}" at region {region}'
    return (
        f'Replace the text "{spec.text}" with "{spec.new_text}" '
        f"at region {region} in {_color_hex(spec.color)}"
    )


def render_text_pair(store, base_media: bytes, spec: TextRenderSpec) -> tuple[str, str, str]:
    """Build a (before, after) text-editing pair and store both images.

    add: after = base + text; remove: before = base + text, after = base;
    replace: before = base + old text, after = base + new text. Rendering is
    deterministic, so identical inputs produce identical ids.
    """
    base = _decode(base_media).convert("RGB")
    spec.validate(base.size)
    # untouched sides keep the original bytes so their id matches the base id
    if spec.op == "add":
        before_id = store.put_media(base_media)
        after_id = store.put_media(_encode_png(_render_text(base, spec, spec.text)))
    elif spec.op == "remove":
        before_id = store.put_media(_encode_png(_render_text(base, spec, spec.text)))
        after_id = store.put_media(base_media)
    else:
        before_id = store.put_media(_encode_png(_render_text(base, spec, spec.text)))
        after_id = store.put_media(_encode_png(_render_text(base, spec, spec.new_text or "")))
    return before_id, after_id, _instruction(spec)
