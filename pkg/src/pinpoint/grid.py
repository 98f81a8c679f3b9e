"""Token grids, sliding-window regions and pixel-space boxes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, DimensionError


@dataclass(frozen=True)
class BoxPx:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> "BoxPx":
        if len(coords) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def intersection_area(self, other: "BoxPx") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0.0) * max(h, 0.0)

    def iou(self, other: "BoxPx") -> float:
        inter = self.intersection_area(other)
        return inter / (self.area() + other.area() - inter)

    def contains(self, other: "BoxPx") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


def union_box(boxes: Iterable[BoxPx]) -> BoxPx:
    boxes = list(boxes)
    if not boxes:
        raise ValueError("union_box of an empty list")
    return BoxPx(min(b.x0 for b in boxes), min(b.y0 for b in boxes),
                 max(b.x1 for b in boxes), max(b.y1 for b in boxes))


@dataclass
class TokenGrid:
    """``tokens`` has shape (Gh, Gw, d); ``origin`` is the pixel (x, y) of cell (0, 0)."""

    tokens: np.ndarray
    px_per_token: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 3:
            raise DimensionError(f"token grid must be (Gh, Gw, d), got {self.tokens.shape}")
        if self.px_per_token <= 0:
            raise ConfigError("px_per_token must be positive")

    @property
    def height(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[2]

    @property
    def n_tokens(self) -> int:
        return self.height * self.width

    def flatten(self) -> np.ndarray:
        return self.tokens.reshape(-1, self.embed_dim).copy()

    @classmethod
    def from_flat(cls, flat, height: int, width: int, **kw) -> "TokenGrid":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 2 or flat.shape[0] != height * width:
            raise DimensionError(f"cannot reshape {flat.shape} into a {height}x{width} grid")
        return cls(flat.reshape(height, width, flat.shape[1]).copy(), **kw)

    def image_box(self) -> BoxPx:
        x0, y0 = self.origin
        return BoxPx(x0, y0, x0 + self.width * self.px_per_token, y0 + self.height * self.px_per_token)

    def cell_box(self, row: int, col: int) -> BoxPx:
        p = self.px_per_token
        x0, y0 = self.origin
        return BoxPx(x0 + col * p, y0 + row * p, x0 + (col + 1) * p, y0 + (row + 1) * p)


@dataclass(frozen=True)
class RegionWindow:
    index: int
    top: int
    left: int
    w: int
    h: int
    clamped: bool = False

    def cells(self, grid_width: int) -> np.ndarray:
        """Flat token indices covered by the window, row-major."""
        rows = np.arange(self.top, self.top + self.h)
        cols = np.arange(self.left, self.left + self.w)
        return (rows[:, None] * grid_width + cols[None, :]).reshape(-1)


def axis_offsets(extent: int, size: int, stride: int) -> tuple[list[int], bool]:
    """Window offsets along one axis and whether an edge-clamped one was added."""
    offsets = list(range(0, extent - size + 1, stride))
    if offsets[-1] + size < extent:
        offsets.append(extent - size)
        return offsets, True
    return offsets, False


def n_regions(grid_h: int, grid_w: int, win_w: int, win_h: int, stride: int) -> int:
    def per_axis(g, w):
        return (g - w) // stride + 1 + (1 if (g - w) % stride else 0)

    return per_axis(grid_h, win_h) * per_axis(grid_w, win_w)


def slide_windows(grid: TokenGrid | tuple[int, int], W: int, H: int, S: int) -> list[RegionWindow]:
    """Enumerate W x H windows with stride S over a grid, row-major.

    When the stride does not land the last window on the grid edge, one extra
    window flush with the edge is appended on that axis so that every token
    is reachable.
    """
    gh, gw = (grid.height, grid.width) if isinstance(grid, TokenGrid) else grid
    if S < 1:
        raise ConfigError(f"stride must be >= 1, got {S}")
    if not (1 <= W <= gw and 1 <= H <= gh):
        raise ConfigError(f"window {W}x{H} does not fit a {gh}x{gw} grid")
    tops, clamp_r = axis_offsets(gh, H, S)
    lefts, clamp_c = axis_offsets(gw, W, S)
    windows = []
    for i, top in enumerate(tops):
        for j, left in enumerate(lefts):
            clamped = (clamp_r and i == len(tops) - 1) or (clamp_c and j == len(lefts) - 1)
            windows.append(RegionWindow(len(windows), top, left, W, H, clamped))
    return windows


def _check_window(grid: TokenGrid, win: RegionWindow) -> None:
    if win.top < 0 or win.left < 0 or win.top + win.h > grid.height or win.left + win.w > grid.width:
        raise BoundsError(f"window {win} outside a {grid.height}x{grid.width} grid")


def extract_region(grid: TokenGrid, win: RegionWindow) -> np.ndarray:
    """(w*h, d) copy of the window's tokens in row-major window order."""
    _check_window(grid, win)
    block = grid.tokens[win.top:win.top + win.h, win.left:win.left + win.w]
    return block.reshape(-1, grid.embed_dim).copy()


def extract_regions(grid: TokenGrid, wins: Sequence[RegionWindow]) -> np.ndarray:
    """Stack equally-sized windows into (N, w*h, d)."""
    return np.stack([extract_region(grid, w) for w in wins])


def window_to_px(win: RegionWindow, px_per_token: float, origin=(0.0, 0.0)) -> BoxPx:
    p = px_per_token
    x0, y0 = origin
    return BoxPx(x0 + win.left * p, y0 + win.top * p, x0 + (win.left + win.w) * p, y0 + (win.top + win.h) * p)


def px_to_window(box: BoxPx, px_per_token: float, index: int = 0) -> RegionWindow:
    """Smallest token-aligned window whose footprint covers ``box``."""
    p = px_per_token
    left = int(math.floor(box.x0 / p + 1e-9))
    top = int(math.floor(box.y0 / p + 1e-9))
    right = int(math.ceil(box.x1 / p - 1e-9))
    bottom = int(math.ceil(box.y1 / p - 1e-9))
    return RegionWindow(index, top, left, right - left, bottom - top)


@dataclass
class GtAnnotation:
    question_id: str
    encompass: BoxPx
    answer_boxes: list[BoxPx] = field(default_factory=list)
    evidence_boxes: list[BoxPx] = field(default_factory=list)
    image_id: str = ""
    page: int | None = None

    @classmethod
    def from_boxes(cls, question_id: str, answer_boxes, evidence_boxes=(), **kw) -> "GtAnnotation":
        answer_boxes, evidence_boxes = list(answer_boxes), list(evidence_boxes)
        return cls(question_id, union_box(answer_boxes + evidence_boxes), answer_boxes, evidence_boxes, **kw)

    def is_consistent(self) -> bool:
        return all(self.encompass.contains(b) for b in self.answer_boxes + self.evidence_boxes)

    def to_dict(self) -> dict:
        d = {
            "question_id": self.question_id,
            "image_id": self.image_id,
            "answer_boxes": [b.as_list() for b in self.answer_boxes],
            "evidence_boxes": [b.as_list() for b in self.evidence_boxes],
            "encompass": self.encompass.as_list(),
        }
        if self.page is not None:
            d["page"] = self.page
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GtAnnotation":
        return cls(
            question_id=str(d["question_id"]),
            image_id=str(d.get("image_id", "")),
            answer_boxes=[BoxPx.from_list(b) for b in d.get("answer_boxes", [])],
            evidence_boxes=[BoxPx.from_list(b) for b in d.get("evidence_boxes", [])],
            encompass=BoxPx.from_list(d["encompass"]),
            page=d.get("page"),
        )


def read_annotations(path: str | Path) -> list[GtAnnotation]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(GtAnnotation.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad annotation record: {exc}") from exc
    return out


def write_annotations(annotations: Iterable[GtAnnotation], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ann in annotations:
            fh.write(json.dumps(ann.to_dict(), sort_keys=True) + "\n")


def assign_pos_neg(wins: Sequence[RegionWindow], gt: GtAnnotation, px_per_token: float,
                   origin=(0.0, 0.0)) -> tuple[int, list[int]]:
    """Positive = window whose centre is nearest the encompass centre (lowest
    index on ties); negatives = windows with no overlap with the encompass box."""
    if not wins:
        raise ValueError("no windows to assign")
    cx, cy = gt.encompass.center()
    best, best_d = 0, math.inf
    negs = []
    for i, win in enumerate(wins):
        box = window_to_px(win, px_per_token, origin)
        wx, wy = box.center()
        dist = math.hypot(wx - cx, wy - cy)
        if dist < best_d:
            best, best_d = i, dist
        if box.intersection_area(gt.encompass) == 0.0:
            negs.append(i)
    return best, [i for i in negs if i != best]
