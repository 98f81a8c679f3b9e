"""scikit-learn style front end for region selection.

``X`` is a sequence of samples, each exposing ``grid`` (:class:`TokenGrid`),
``instruction`` (text or :class:`InstructionEmbedding`) and ``gt``
(:class:`GtAnnotation`, only needed for ``fit``/``score``). Plain
``(grid, instruction, gt)`` tuples are accepted too.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .alignment import AlignmentModel, InstructionEmbedding, embed_text
from .errors import DimensionError
from .grid import GtAnnotation, TokenGrid, slide_windows
from .metrics import EvalReport, dataset_anls, region_accuracy
from .selection import SelectionResult, adaptive_select, crop_grid, rank_regions, refine
from .training import BatchSample, TrainConfig, train


@dataclass
class Sample:
    grid: TokenGrid
    instruction: str | InstructionEmbedding
    gt: GtAnnotation | None = None


def check_samples(X, require_gt: bool = False) -> list:
    """Validate a sample sequence; tuples are wrapped into :class:`Sample`."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError("expected a sequence of samples")
    if len(X) == 0:
        raise ValueError("found an empty sample sequence")
    out = []
    dim = None
    for i, s in enumerate(X):
        if isinstance(s, tuple):
            s = Sample(*s)
        for attr in ("grid", "instruction"):
            if not hasattr(s, attr):
                raise TypeError(f"sample {i} has no {attr!r}")
        if not isinstance(s.grid, TokenGrid):
            raise TypeError(f"sample {i}: grid must be a TokenGrid")
        if not np.all(np.isfinite(s.grid.tokens)):
            raise ValueError(f"sample {i}: grid contains NaN or Inf")
        if dim is None:
            dim = s.grid.embed_dim
        elif s.grid.embed_dim != dim:
            raise DimensionError(f"sample {i}: embed dim {s.grid.embed_dim} != {dim}")
        if require_gt and getattr(s, "gt", None) is None:
            raise ValueError(f"sample {i} has no ground-truth annotation")
        out.append(s)
    return out


class PinPointSelector(TransformerMixin, BaseEstimator):
    """Learns instruction-region alignment and selects regions for new samples.

    ``fit`` trains the guidance queries and both MLPs with the contrastive
    objective; ``predict`` returns one :class:`SelectionResult` per sample;
    ``transform`` returns the selected crop of each sample's token grid.
    """

    def __init__(self, n_queries: int = 8, window: int = 10, stride: int = 7, r: float = 0.6,
                 lr: float = 1e-2, epochs: int = 5, batch_size: int = 32, lam: float = 0.5, tau: float = 0.07,
                 max_steps: int = 0, include_positive: bool = True, sim_mode: str = "mean_row",
                 activation: str = "gelu", selection_mode: str = "hull", text_seed: int = 0,
                 random_state: int = 0):
        self.n_queries = n_queries
        self.window = window
        self.stride = stride
        self.r = r
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.lam = lam
        self.tau = tau
        self.max_steps = max_steps
        self.include_positive = include_positive
        self.sim_mode = sim_mode
        self.activation = activation
        self.selection_mode = selection_mode
        self.text_seed = text_seed
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(window_w=self.window, window_h=self.window, stride=self.stride, r=self.r,
                           K=self.n_queries, lr=self.lr, epochs=self.epochs, batch=self.batch_size, lam=self.lam,
                           tau=self.tau, seed=self.random_state,
                           include_positive_in_denominator=self.include_positive, max_steps=self.max_steps,
                           text_seed=self.text_seed, activation=self.activation, sim_mode=self.sim_mode)

    def _embed(self, instruction, d: int) -> InstructionEmbedding:
        if isinstance(instruction, InstructionEmbedding):
            return instruction
        return embed_text(instruction, d, self.text_seed)

    def fit(self, X, y=None, model: AlignmentModel | None = None):
        samples = check_samples(X, require_gt=True)
        cfg = self.train_config()
        batch = [BatchSample.build(s.grid, self._embed(s.instruction, s.grid.embed_dim), s.gt, cfg)
                 for s in samples]
        self.model_, self.history_ = train(batch, cfg, model=model)
        self.n_features_in_ = samples[0].grid.embed_dim
        return self

    def _check_fitted(self) -> AlignmentModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("PinPointSelector is not fitted yet; call fit or set_model first")
        return self.model_

    def set_model(self, model: AlignmentModel) -> "PinPointSelector":
        """Use an already-trained alignment model (e.g. loaded from a checkpoint)."""
        self.model_ = model
        self.history_ = []
        self.n_features_in_ = model.d
        return self

    def rank(self, X) -> list[list[tuple[int, float]]]:
        model = self._check_fitted()
        out = []
        for s in check_samples(X):
            if s.grid.embed_dim != self.n_features_in_:
                raise DimensionError(f"grid embed dim {s.grid.embed_dim} != fitted {self.n_features_in_}")
            wins = slide_windows(s.grid, self.window, self.window, self.stride)
            out.append(rank_regions(model, s.grid, wins, self._embed(s.instruction, s.grid.embed_dim)))
        return out

    def predict(self, X, r: float | None = None) -> list[SelectionResult]:
        r = self.r if r is None else r
        samples = check_samples(X)
        results = []
        for s, ranked in zip(samples, self.rank(samples)):
            wins = slide_windows(s.grid, self.window, self.window, self.stride)
            area = s.grid.image_box().area()
            results.append(adaptive_select(ranked, wins, area, r, s.grid.px_per_token, self.selection_mode,
                                           s.grid.origin))
        return results

    def transform(self, X) -> list[TokenGrid]:
        samples = check_samples(X)
        return [crop_grid(s.grid, sel.hull) for s, sel in zip(samples, self.predict(samples))]

    def score(self, X, y=None) -> float:
        """Region accuracy (hull contains the GT centre) at ratio ``r``."""
        samples = check_samples(X, require_gt=True)
        return region_accuracy(self.predict(samples), [s.gt for s in samples])

    def top1_accuracy(self, X) -> float:
        """Share of samples whose best-ranked window is the positive window."""
        samples = check_samples(X, require_gt=True)
        cfg = self.train_config()
        hits = []
        for s, ranked in zip(samples, self.rank(samples)):
            pos = BatchSample.build(s.grid, self._embed(s.instruction, s.grid.embed_dim), s.gt, cfg).pos_index
            hits.append(ranked[0][0] == pos)
        return float(np.mean(hits))


def evaluate(selector: PinPointSelector, samples: Sequence[Any], world, budget: float = 0.6,
             refine_crops: bool = True) -> tuple[EvalReport, list[SelectionResult], list[str]]:
    """Select, (optionally) refine, read out answers and score them.

    ``samples`` are synthetic samples (with ``raw`` grids and ``answer``);
    ``world`` supplies the frozen encoder and the answer codebook.
    """
    from .synthetic import readout_answer

    selections = selector.predict(samples)
    preds = []
    for s, sel in zip(samples, selections):
        if refine_crops:
            tokens = refine(world.encoder, crop_grid(s.raw, sel.hull), vanilla_count=s.raw.n_tokens, budget=budget)
        else:
            tokens = crop_grid(s.grid, sel.hull)
        preds.append(readout_answer(s, tokens, world))
    report = EvalReport(
        anls=dataset_anls(preds, [[s.answer] for s in samples]),
        region_accuracy=region_accuracy(selections, [s.gt for s in samples]),
        mean_coverage=float(np.mean([sel.coverage for sel in selections])),
        n_samples=len(samples),
    )
    return report, selections, preds
