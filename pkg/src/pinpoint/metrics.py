"""ANLS, region accuracy and evaluation reports."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import GtAnnotation
from .selection import SelectionResult

ANLS_THRESHOLD = 0.5


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit insert/delete/substitute costs (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(pred: str, gold: str) -> float:
    pred, gold = pred.strip().lower(), gold.strip().lower()
    longest = max(len(pred), len(gold))
    if longest == 0:
        return 0.0
    return levenshtein(pred, gold) / longest


def anls(pred: str, golds: Sequence[str] | str, threshold: float = ANLS_THRESHOLD) -> float:
    """Best thresholded similarity of ``pred`` against any gold answer."""
    if isinstance(golds, str):
        golds = [golds]
    if not golds:
        raise ValueError("need at least one gold answer")
    best = 0.0
    for gold in golds:
        nl = normalized_levenshtein(pred, gold)
        best = max(best, 1.0 - nl if nl < threshold else 0.0)
    return best


def dataset_anls(preds: Sequence[str], golds: Sequence[Sequence[str]], threshold: float = ANLS_THRESHOLD) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} questions")
    if not preds:
        return 0.0
    return float(np.mean([anls(p, g, threshold) for p, g in zip(preds, golds)]))


def region_accuracy(selections: Sequence[SelectionResult], gts: Sequence[GtAnnotation],
                    mode: str = "center", iou_threshold: float = 0.5) -> float:
    """Share of samples whose selection hull holds the GT.

    ``mode="center"``: hull contains the encompass-box centre.
    ``mode="iou"``: hull/encompass IoU >= ``iou_threshold``.
    """
    if len(selections) != len(gts):
        raise ValueError(f"{len(selections)} selections for {len(gts)} annotations")
    if not gts:
        return 0.0
    hits = 0
    for sel, gt in zip(selections, gts):
        if mode == "center":
            hits += sel.hull.contains_point(*gt.encompass.center())
        elif mode == "iou":
            hits += sel.hull.iou(gt.encompass) >= iou_threshold
        else:
            raise ValueError(f"unknown region-accuracy mode {mode!r}")
    return hits / len(gts)


@dataclass
class EvalReport:
    anls: float
    region_accuracy: float
    mean_coverage: float
    n_samples: int

    def summary_line(self) -> str:
        return (f"ANLS={self.anls:.4f} Region Acc.={self.region_accuracy:.4f} "
                f"Cov.={self.mean_coverage:.4f} n={self.n_samples}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["anls", "region_accuracy", "mean_coverage", "n_samples"])
            w.writerow([self.anls, self.region_accuracy, self.mean_coverage, self.n_samples])
