"""Inter-modal and intra-image contrastive objectives and the training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .alignment import AlignmentModel, InstructionEmbedding, embed_text, similarity, similarity_matrix
from .autodiff import Tensor
from .errors import ConfigError, NumericalError
from .grid import GtAnnotation, RegionWindow, TokenGrid, assign_pos_neg, extract_regions, slide_windows

log = logging.getLogger(__name__)

# config-file spelling -> dataclass field
_ALIASES = {"lambda": "lam", "λ": "lam", "τ": "tau", "W": "window_w", "H": "window_h", "S": "stride"}


@dataclass
class TrainConfig:
    window_w: int = 10
    window_h: int = 10
    stride: int = 7
    r: float = 0.6
    K: int = 100
    lr: float = 2e-5
    epochs: int = 5
    batch: int = 32
    lam: float = 0.5
    tau: float = 0.07
    seed: int = 0
    include_positive_in_denominator: bool = True
    max_steps: int = 0
    text_seed: int = 0
    activation: str = "gelu"
    sim_mode: str = "mean_row"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.batch < 1 or self.epochs < 0 or self.K < 1:
            raise ConfigError("batch, K must be >= 1 and epochs >= 0")
        if not 0 < self.r <= 1:
            raise ConfigError(f"r must be in (0, 1], got {self.r}")
        if self.stride < 1 or self.window_w < 1 or self.window_h < 1:
            raise ConfigError("window and stride must be positive")

    def replace(self, **overrides) -> "TrainConfig":
        d = asdict(self)
        for key, value in overrides.items():
            key = _ALIASES.get(key, key)
            if key not in d:
                raise ConfigError(f"unknown config key {key!r}")
            d[key] = _coerce(type(getattr(self, key)), value)
        return TrainConfig(**d)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        overrides = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cls().replace(**{key: value})
                overrides[key] = value
            except (ConfigError, ValueError) as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        return cls().replace(**overrides)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), str(path))

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce(kind, value):
    if not isinstance(value, str):
        return kind(value)
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int:
        return int(float(value)) if "e" in value.lower() else int(value)
    return kind(value)


@dataclass
class BatchSample:
    grid: TokenGrid
    instruction: InstructionEmbedding
    gt: GtAnnotation
    windows: list[RegionWindow]
    pos_index: int
    neg_indices: list[int]

    @classmethod
    def build(cls, grid: TokenGrid, instruction: str | InstructionEmbedding, gt: GtAnnotation,
              config: TrainConfig) -> "BatchSample":
        if isinstance(instruction, str):
            instruction = embed_text(instruction, grid.embed_dim, config.text_seed)
        wins = slide_windows(grid, config.window_w, config.window_h, config.stride)
        pos, negs = assign_pos_neg(wins, gt, grid.px_per_token, grid.origin)
        return cls(grid, instruction, gt, wins, pos, negs)


def inter_loss(ev_pos: Tensor, et: Tensor, tau: float, include_positive: bool = True,
               sim_mode: str = "mean_row") -> Tensor:
    """Symmetric in-batch contrastive loss, averaged over the batch.

    ``ev_pos`` and ``et`` are (B, K, d); pair i is (ev_pos[i], et[i]).
    """
    B = ev_pos.shape[0]
    if B == 1 and not include_positive:
        raise ConfigError("batch of one has no in-batch negatives when the positive is excluded")
    logits = ad.scale(similarity_matrix(ev_pos, et, sim_mode), 1.0 / tau)
    mask = None if include_positive else ~np.eye(B, dtype=bool)
    diag = ad.take(logits, (np.arange(B), np.arange(B)))
    v2t = ad.sub(ad.logsumexp(logits, axis=1, mask=mask), diag)
    t2v = ad.sub(ad.logsumexp(logits, axis=0, mask=mask), diag)
    return ad.mean(ad.add(v2t, t2v))


def intra_loss(et: Tensor, ev_pos: Tensor, ev_negs: Tensor | Sequence[Tensor] | None, tau: float,
               include_positive: bool = True, sim_mode: str = "mean_row") -> Tensor:
    """Pull the instruction toward the positive region and away from the negatives.

    Returns a zero scalar when there are no negatives.
    """
    if ev_negs is None or len(ev_negs) == 0:
        return Tensor(0.0)
    if not isinstance(ev_negs, Tensor):
        ev_negs = ad.stack(list(ev_negs))
    cands = ad.concat([ad.reshape(ev_pos, (1,) + ev_pos.shape), ev_negs], axis=0)
    logits = ad.scale(similarity(cands, et, sim_mode), 1.0 / tau)
    mask = np.ones(logits.shape, dtype=bool)
    mask[0] = include_positive
    return ad.sub(ad.logsumexp(logits, axis=0, mask=mask), ad.take(logits, 0))


@dataclass
class LossParts:
    total: Tensor
    inter: Tensor
    intra: Tensor

    def values(self) -> tuple[float, float, float]:
        return self.inter.item(), self.intra.item(), self.total.item()


def total_loss(batch: Sequence[BatchSample], model: AlignmentModel, tau: float, lam: float,
               include_positive: bool = True) -> LossParts:
    """Inter-modal loss plus ``lam`` times the batch-mean intra-image loss."""
    # all windows in a batch share one size, so every region goes through one stacked encode
    regions, owners = [], []
    for b, s in enumerate(batch):
        picks = [s.pos_index] + list(s.neg_indices)
        regions.append(extract_regions(s.grid, [s.windows[i] for i in picks]))
        owners.append(len(picks))
    ev_all = model.encode_region(np.concatenate(regions, axis=0))
    et_all = ad.stack([model.encode_text(s.instruction) for s in batch])

    starts = np.concatenate([[0], np.cumsum(owners)[:-1]])
    ev_pos = ad.take(ev_all, starts)
    inter = inter_loss(ev_pos, et_all, tau, include_positive, model.sim_mode)
    intras = []
    for b, (start, count) in enumerate(zip(starts, owners)):
        et = ad.take(et_all, b)
        negs = ad.take(ev_all, slice(start + 1, start + count)) if count > 1 else None
        intras.append(intra_loss(et, ad.take(ev_all, start), negs, tau, include_positive, model.sim_mode))
    intra = ad.mean(ad.stack(intras))
    if lam == 0:
        # intra is still reported, but the objective is exactly the inter-modal term
        return LossParts(inter, inter, intra)
    return LossParts(ad.add(inter, ad.scale(intra, lam)), inter, intra)


@dataclass
class HistoryRow:
    step: int
    L_inter: float
    L_intra: float
    L_total: float


def write_history(history: Iterable[HistoryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_inter", "L_intra", "L_total"])
        for row in history:
            w.writerow([row.step, repr(row.L_inter), repr(row.L_intra), repr(row.L_total)])


def read_history(path: str | Path) -> list[HistoryRow]:
    with open(path, newline="") as fh:
        return [HistoryRow(int(r["step"]), float(r["L_inter"]), float(r["L_intra"]), float(r["L_total"]))
                for r in csv.DictReader(fh)]


def train(dataset: Sequence[BatchSample], config: TrainConfig, model: AlignmentModel | None = None,
          callback=None) -> tuple[AlignmentModel, list[HistoryRow]]:
    """Adam on the guidance queries and both MLPs; everything else stays frozen.

    Batches come from a per-epoch permutation drawn from ``config.seed``.
    ``config.max_steps`` (when > 0) caps the total number of updates.
    """
    if not dataset:
        raise ValueError("empty training set")
    if model is None:
        model = AlignmentModel.init(dataset[0].grid.embed_dim, config.K, config.seed,
                                    config.activation, config.sim_mode)
    params = model.parameters()
    state = ad.OptimState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history: list[HistoryRow] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch):
            if config.max_steps and step >= config.max_steps:
                return model, history
            idx = order[start:start + config.batch]
            batch = [dataset[i] for i in idx]
            for p in params.values():
                p.zero_grad()
            parts = total_loss(batch, model, config.tau, config.lam, config.include_positive_in_denominator)
            l_inter, l_intra, l_total = parts.values()
            if not np.isfinite(l_total):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, step {step}, batch samples {idx.tolist()}")
            parts.total.backward()
            grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}
            try:
                ad.adam_step(params, grads, state)
            except NumericalError as exc:
                raise NumericalError(f"{exc} at epoch {epoch}, step {step}, batch samples {idx.tolist()}") from exc
            step += 1
            history.append(HistoryRow(step, l_inter, l_intra, l_total))
            if callback is not None:
                callback(step, history[-1])
        log.debug("epoch %d done, last loss %.5f", epoch, history[-1].L_total if history else float("nan"))
    return model, history
