"""Synthetic grounding task with a planted instruction-relevant region.

Each sample is a raw cell grid: background clutter, one planted box whose
cells carry a pattern derived from the instruction's keyword plus a code for
the answer, and a few distractor boxes planted with other keywords/answers.
The "vanilla" token grid is the frozen toy encoder applied to the whole raw
grid, so in-box tokens pick up out-of-box content.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .alignment import InstructionEmbedding, embed_text
from .grid import BoxPx, GtAnnotation, TokenGrid, assign_pos_neg, slide_windows, window_to_px
from .selection import ToyEncoder

ANSWERS = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett")
TEMPLATES = (
    "what is the value shown for {kw} ?",
    "find the number next to {kw}",
    "how much is reported for {kw} in the figure ?",
    "which label belongs to {kw}",
)

# oracle thresholds (synthetic-task constants)
MIN_GT_COVERAGE = 0.8
MAX_IRRELEVANT_FRACTION = 0.5


@dataclass
class World:
    """Fixed mapping from keywords/answers to raw-cell content, shared by all splits."""

    d: int = 32
    n_keywords: int = 40
    seed: int = 0
    text_seed: int = 0
    pattern_amp: float = 3.0
    code_amp: float = 2.0
    noise: float = 0.5
    encoder_mix: float = 2.0
    encoder_qk: float = 3.0

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 7919])
        self.keywords = [f"item{k:02d}" for k in range(self.n_keywords)]
        # keyword pattern = fixed rotation of the keyword's text embedding
        self.rotation = np.linalg.qr(rng.standard_normal((self.d, self.d)))[0]
        self.codes = rng.standard_normal((len(ANSWERS), self.d))
        self.codes /= np.linalg.norm(self.codes, axis=1, keepdims=True)
        self.encoder = ToyEncoder(self.d, seed=self.seed + 1, mix=self.encoder_mix, qk_scale=self.encoder_qk)

    def pattern(self, keyword: str) -> np.ndarray:
        v = embed_text(keyword, self.d, self.text_seed).tokens[0] @ self.rotation
        return v / np.linalg.norm(v)

    def cell_content(self, keyword: str, answer_idx: int) -> np.ndarray:
        return self.pattern_amp * self.pattern(keyword) + self.code_amp * self.codes[answer_idx]


@dataclass
class SyntheticSample:
    sample_id: str
    raw: TokenGrid
    grid: TokenGrid
    instruction: str
    keyword: str
    answer: str
    gt: GtAnnotation
    distractors: list[dict] = field(default_factory=list)
    text_seed: int = 0

    @property
    def embedding(self) -> InstructionEmbedding:
        return embed_text(self.instruction, self.grid.embed_dim, self.text_seed)

    def planted_cells(self) -> set[int]:
        """Flat indices of cells inside the planted box."""
        return cells_in_box(self.gt.encompass, self.raw.height, self.raw.width, self.raw.px_per_token)

    def to_meta(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "instruction": self.instruction,
            "keyword": self.keyword,
            "answer": self.answer,
            "gt": self.gt.to_dict(),
            "distractors": self.distractors,
            "text_seed": self.text_seed,
            "px_per_token": self.raw.px_per_token,
        }


def cells_in_box(box: BoxPx, height: int, width: int, px_per_token: float = 1.0) -> set[int]:
    p = px_per_token
    out = set()
    for r in range(height):
        for c in range(width):
            if BoxPx(c * p, r * p, (c + 1) * p, (r + 1) * p).intersection_area(box) > 0:
                out.add(r * width + c)
    return out


def _plant_position(rng, win_box: BoxPx, sh: int, sw: int, jitter: float) -> tuple[int, int]:
    """Uniform top-left such that the box stays in the window and its centre
    is within ``jitter`` cells of the window centre on each axis."""
    cx, cy = win_box.center()
    tops = [t for t in range(int(win_box.y0), int(win_box.y1) - sh + 1) if abs(t + sh / 2 - cy) <= jitter]
    lefts = [x for x in range(int(win_box.x0), int(win_box.x1) - sw + 1) if abs(x + sw / 2 - cx) <= jitter]
    return int(rng.choice(tops)), int(rng.choice(lefts))


def gen_synthetic(n: int, grid_size: tuple[int, int] = (24, 24), seed: int = 0, world: World | None = None,
                  window: tuple[int, int] = (10, 10), stride: int = 7, box_range: tuple[int, int] = (4, 6),
                  n_distractors: int = 2, jitter: float = 1.5) -> list[SyntheticSample]:
    """Generate ``n`` reproducible samples.

    The planted box is placed inside a uniformly chosen sliding window with
    its centre within ``jitter`` cells of the window centre, so that window
    is the positive region. Distractor boxes avoid the planted box.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    world = World() if world is None else world
    gh, gw = grid_size
    W, H = window
    wins = slide_windows((gh, gw), W, H, stride)
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        kw_idx = int(rng.integers(world.n_keywords))
        keyword = world.keywords[kw_idx]
        ans_idx = int(rng.integers(len(ANSWERS)))
        instruction = TEMPLATES[int(rng.integers(len(TEMPLATES)))].format(kw=keyword)

        raw = rng.standard_normal((gh, gw, world.d))
        target = int(rng.integers(len(wins)))
        win_box = window_to_px(wins[target], 1.0)
        while True:
            sh, sw = (int(x) for x in rng.integers(box_range[0], box_range[1] + 1, size=2))
            top, left = _plant_position(rng, win_box, sh, sw, jitter)
            box = BoxPx(left, top, left + sw, top + sh)
            gt = GtAnnotation(f"synth-{seed}-{i}", box, [box], [], image_id=f"synth-{seed}-{i}")
            if assign_pos_neg(wins, gt, 1.0)[0] == target:
                break
        content = world.cell_content(keyword, ans_idx)
        raw[top:top + sh, left:left + sw] = content + world.noise * rng.standard_normal((sh, sw, world.d))

        distractors = []
        occupied = [box]
        for _ in range(n_distractors):
            for _attempt in range(100):
                dh, dw = (int(x) for x in rng.integers(box_range[0], box_range[1] + 1, size=2))
                dt = int(rng.integers(0, gh - dh + 1))
                dl = int(rng.integers(0, gw - dw + 1))
                dbox = BoxPx(dl, dt, dl + dw, dt + dh)
                if all(dbox.intersection_area(o) == 0 for o in occupied):
                    break
            else:
                continue
            other = int(rng.integers(world.n_keywords - 1))
            other += other >= kw_idx
            d_ans = int(rng.integers(len(ANSWERS)))
            raw[dt:dt + dh, dl:dl + dw] = (world.cell_content(world.keywords[other], d_ans)
                                          + world.noise * rng.standard_normal((dh, dw, world.d)))
            occupied.append(dbox)
            distractors.append({"keyword": world.keywords[other], "answer": ANSWERS[d_ans],
                                "box": dbox.as_list()})

        raw_grid = TokenGrid(raw)
        out.append(SyntheticSample(gt.question_id, raw_grid, world.encoder(raw_grid), instruction, keyword,
                                   ANSWERS[ans_idx], gt, distractors, world.text_seed))
    return out


def oracle_answer(sample: SyntheticSample, provided_token_indices: Iterable[int]) -> str:
    """Answer correctly iff enough planted tokens are provided and not too many others.

    Returns ``""`` (a wrong answer) otherwise.
    """
    provided = set(int(i) for i in provided_token_indices)
    n_cells = sample.raw.n_tokens
    if any(i < 0 or i >= n_cells for i in provided):
        raise IndexError("token index outside the grid")
    planted = sample.planted_cells()
    if not provided:
        return ""
    coverage = len(planted & provided) / len(planted)
    irrelevant = len(provided - planted) / len(provided)
    if coverage >= MIN_GT_COVERAGE and irrelevant < MAX_IRRELEVANT_FRACTION:
        return sample.answer
    return ""


def readout_answer(sample: SyntheticSample, tokens: TokenGrid, world: World) -> str:
    """Decode the answer from token contents over the planted box.

    Averages the tokens whose footprint overlaps the planted box and returns
    the answer whose code has the highest cosine with that mean. Returns
    ``""`` when fewer than :data:`MIN_GT_COVERAGE` of the planted box lies
    inside the token grid's footprint.
    """
    box = sample.gt.encompass
    footprint = tokens.image_box()
    if box.intersection_area(footprint) < MIN_GT_COVERAGE * box.area():
        return ""
    rows = []
    for r in range(tokens.height):
        for c in range(tokens.width):
            if tokens.cell_box(r, c).intersection_area(box) > 0:
                rows.append(tokens.tokens[r, c])
    m = np.mean(rows, axis=0)
    scores = world.codes @ m
    return ANSWERS[int(np.argmax(scores))]


RELEVANCE_CONDITIONS = ("gt_only", "gt_plus_33", "gt_plus_66", "all_tokens")


def relevance_condition_tokens(sample: SyntheticSample, condition: str, rng: np.random.Generator) -> set[int]:
    """Token set for a token-relevance condition; ``gt_plus_X`` means X% of
    the provided tokens are irrelevant."""
    planted = sample.planted_cells()
    if condition == "gt_only":
        return set(planted)
    if condition == "all_tokens":
        return set(range(sample.raw.n_tokens))
    share = {"gt_plus_33": 1 / 3, "gt_plus_66": 2 / 3}[condition]
    others = np.array(sorted(set(range(sample.raw.n_tokens)) - planted))
    n_extra = min(len(others), int(round(len(planted) * share / (1 - share))))
    return set(planted) | set(rng.choice(others, size=n_extra, replace=False).tolist())


def relevance_experiment(samples: Sequence[SyntheticSample], seed: int = 0) -> list[tuple[str, float]]:
    """Oracle accuracy per relevance condition, GT-only first."""
    rng = np.random.default_rng(seed)
    rows = []
    for cond in RELEVANCE_CONDITIONS:
        hits = [oracle_answer(s, relevance_condition_tokens(s, cond, rng)) == s.answer for s in samples]
        rows.append((cond, float(np.mean(hits))))
    return rows


def save_dataset(samples: Sequence[SyntheticSample], path: str | Path, world: World | None = None) -> None:
    world = World() if world is None else world
    meta = {
        "world": {k: getattr(world, k) for k in ("d", "n_keywords", "seed", "text_seed", "pattern_amp",
                                                  "code_amp", "noise", "encoder_mix", "encoder_qk")},
        "samples": [s.to_meta() for s in samples],
    }
    with open(path, "wb") as fh:
        np.savez_compressed(fh, raw=np.stack([s.raw.tokens for s in samples]),
                            tokens=np.stack([s.grid.tokens for s in samples]),
                            meta=np.array(json.dumps(meta)))


def load_dataset(path: str | Path) -> tuple[list[SyntheticSample], World]:
    with np.load(path, allow_pickle=False) as z:
        raw, tokens, meta = z["raw"], z["tokens"], json.loads(str(z["meta"]))
    world = World(**meta["world"])
    samples = []
    for i, m in enumerate(meta["samples"]):
        p = float(m.get("px_per_token", 1.0))
        samples.append(SyntheticSample(
            m["sample_id"], TokenGrid(raw[i], p), TokenGrid(tokens[i], p), m["instruction"], m["keyword"],
            m["answer"], GtAnnotation.from_dict(m["gt"]), m.get("distractors", []), m.get("text_seed", 0)))
    return samples, world
