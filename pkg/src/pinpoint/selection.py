"""Region ranking, coverage-driven selection, cropping and isolated re-encoding."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .alignment import AlignmentModel, InstructionEmbedding, similarity
from .autodiff import gelu, tensor
from .errors import BoundsError, ConfigError
from .grid import BoxPx, RegionWindow, TokenGrid, extract_regions, union_box, window_to_px

log = logging.getLogger(__name__)

SELECT_MODES = ("hull", "union")


@dataclass
class SelectionResult:
    ranked: list[tuple[int, float]]
    selected: list[int]
    hull: BoxPx
    coverage: float

    def to_dict(self) -> dict:
        return {
            "ranked": [[int(i), float(s)] for i, s in self.ranked],
            "selected": [int(i) for i in self.selected],
            "hull": self.hull.as_list(),
            "coverage": float(self.coverage),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls([(int(i), float(s)) for i, s in d["ranked"]], [int(i) for i in d["selected"]],
                   BoxPx.from_list(d["hull"]), float(d["coverage"]))


def score_regions(model: AlignmentModel, grid: TokenGrid, wins: Sequence[RegionWindow],
                  instr: InstructionEmbedding) -> np.ndarray:
    """Similarity of every window to the instruction, in ``wins`` order."""
    et = model.encode_text(instr)
    sims = np.empty(len(wins))
    # windows of equal size are encoded as one stack
    by_size: dict[tuple[int, int], list[int]] = {}
    for pos, w in enumerate(wins):
        by_size.setdefault((w.h, w.w), []).append(pos)
    for positions in by_size.values():
        ev = model.encode_region(extract_regions(grid, [wins[p] for p in positions]))
        s = similarity(ev, et, model.sim_mode).data
        sims[positions] = s
    return sims


def rank_regions(model: AlignmentModel, grid: TokenGrid, wins: Sequence[RegionWindow],
                 instr: InstructionEmbedding) -> list[tuple[int, float]]:
    """(window index, similarity) pairs, best first; ties go to the lower index."""
    sims = score_regions(model, grid, wins, instr)
    pairs = [(w.index, float(s)) for w, s in zip(wins, sims)]
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def _union_area(boxes: Sequence[BoxPx]) -> float:
    """Exact area of a union of axis-aligned boxes (coordinate compression)."""
    xs = sorted({b.x0 for b in boxes} | {b.x1 for b in boxes})
    ys = sorted({b.y0 for b in boxes} | {b.y1 for b in boxes})
    covered = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    xi = {x: i for i, x in enumerate(xs)}
    yi = {y: i for i, y in enumerate(ys)}
    for b in boxes:
        covered[yi[b.y0]:yi[b.y1], xi[b.x0]:xi[b.x1]] = True
    widths = np.diff(xs)
    heights = np.diff(ys)
    return float((covered * np.outer(heights, widths)).sum())


def adaptive_select(ranked: Sequence[tuple[int, float]], wins: Sequence[RegionWindow],
                    image_area_px: float, r: float, px_per_token: float = 1.0,
                    mode: str = "hull", origin=(0.0, 0.0)) -> SelectionResult:
    """Take ranked windows until the enclosing region reaches ``r`` of the image.

    ``mode="hull"`` measures the bounding box of the selected windows;
    ``mode="union"`` measures the area actually covered by them.
    """
    if not 0 < r <= 1:
        raise ConfigError(f"coverage ratio must be in (0, 1], got {r}")
    if not ranked:
        raise ValueError("nothing to select from")
    if mode not in SELECT_MODES:
        raise ConfigError(f"unknown selection mode {mode!r}")
    by_index = {w.index: w for w in wins}
    target = r * image_area_px
    selected: list[int] = []
    boxes: list[BoxPx] = []
    area = 0.0
    for idx, _ in ranked:
        selected.append(idx)
        boxes.append(window_to_px(by_index[idx], px_per_token, origin))
        area = union_box(boxes).area() if mode == "hull" else _union_area(boxes)
        if area >= target:
            break
    if area < target:
        log.warning("coverage %.3f never reaches r=%.3f; every window selected", area / image_area_px, r)
    return SelectionResult(list(ranked), selected, union_box(boxes), area / image_area_px)


def crop_grid(grid: TokenGrid, hull: BoxPx, px_per_token: float | None = None) -> TokenGrid:
    """Sub-grid of cells whose pixel footprint overlaps ``hull`` with positive area."""
    p = grid.px_per_token if px_per_token is None else px_per_token
    x0, y0 = grid.origin
    img = BoxPx(x0, y0, x0 + grid.width * p, y0 + grid.height * p)
    tol = 1e-9 * max(1.0, p)
    if (hull.x0 < img.x0 - tol or hull.y0 < img.y0 - tol
            or hull.x1 > img.x1 + tol or hull.y1 > img.y1 + tol):
        raise BoundsError(f"hull {hull.as_list()} outside image {img.as_list()}")
    c0 = max(0, int(math.floor((hull.x0 - x0) / p + 1e-9)))
    r0 = max(0, int(math.floor((hull.y0 - y0) / p + 1e-9)))
    c1 = min(grid.width, int(math.ceil((hull.x1 - x0) / p - 1e-9)))
    r1 = min(grid.height, int(math.ceil((hull.y1 - y0) / p - 1e-9)))
    c1, r1 = max(c1, c0 + 1), max(r1, r0 + 1)
    return TokenGrid(grid.tokens[r0:r1, c0:c1].copy(), p, (x0 + c0 * p, y0 + r0 * p))


class ToyEncoder:
    """Frozen single-block encoder with global self-attention over the grid.

    ``out = h + gelu(h W1) W2`` with ``h = x + mix * softmax(x Wq (x Wk)^T / sqrt(d)) x Wv``.
    Every output token depends on every input token, which is what lets
    out-of-crop content leak into in-crop tokens on a full-image pass.
    """

    def __init__(self, d: int, seed: int = 0, mix: float = 1.0, qk_scale: float = 1.0):
        rng = np.random.default_rng(seed)
        b = 1.0 / np.sqrt(d)
        self.d = d
        self.seed = seed
        self.mix = mix
        self.wq = rng.uniform(-b, b, (d, d)) * qk_scale
        self.wk = rng.uniform(-b, b, (d, d)) * qk_scale
        self.wv = np.linalg.qr(rng.standard_normal((d, d)))[0]
        self.w1 = rng.uniform(-b, b, (d, d))
        self.w2 = rng.uniform(-b, b, (d, d))
        for w in (self.wq, self.wk, self.wv, self.w1, self.w2):
            w.setflags(write=False)

    def encode_flat(self, x: np.ndarray) -> np.ndarray:
        logits = (x @ self.wq) @ (x @ self.wk).T / np.sqrt(self.d)
        logits -= logits.max(axis=1, keepdims=True)
        att = np.exp(logits)
        att /= att.sum(axis=1, keepdims=True)
        h = x + self.mix * (att @ (x @ self.wv))
        return h + gelu(tensor(h @ self.w1)).data @ self.w2

    def __call__(self, grid: TokenGrid) -> TokenGrid:
        out = self.encode_flat(grid.flatten())
        return TokenGrid(out.reshape(grid.tokens.shape), grid.px_per_token, grid.origin)


def pool_grid(grid: TokenGrid, factor: int) -> TokenGrid:
    """Average-pool ``factor`` x ``factor`` cell blocks (ragged edge blocks allowed)."""
    if factor == 1:
        return grid
    gh, gw = grid.height, grid.width
    oh, ow = math.ceil(gh / factor), math.ceil(gw / factor)
    out = np.empty((oh, ow, grid.embed_dim))
    for i in range(oh):
        for j in range(ow):
            out[i, j] = grid.tokens[i * factor:(i + 1) * factor, j * factor:(j + 1) * factor].mean(axis=(0, 1))
    return TokenGrid(out, grid.px_per_token * factor, grid.origin)


def budget_factor(height: int, width: int, max_tokens: float) -> int:
    """Smallest pooling factor that brings a height x width crop under ``max_tokens``."""
    if max_tokens < 1:
        raise ConfigError("refinement budget allows fewer than one token")
    f = 1
    while math.ceil(height / f) * math.ceil(width / f) > max_tokens:
        f += 1
    return f


def refine(encoder: ToyEncoder, raw_crop: TokenGrid, vanilla_count: int | None = None,
           budget: float = 0.6) -> TokenGrid:
    """Re-encode a raw crop on its own.

    With ``vanilla_count`` given, the crop is first pooled so the refined
    token count stays within ``budget * vanilla_count``.
    """
    if raw_crop.n_tokens == 0:
        raise ValueError("empty crop")
    if vanilla_count is not None:
        raw_crop = pool_grid(raw_crop, budget_factor(raw_crop.height, raw_crop.width, budget * vanilla_count))
    return encoder(raw_crop)
