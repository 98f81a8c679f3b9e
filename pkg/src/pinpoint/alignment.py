"""Instruction-region alignment with learnable guidance queries.

Region tokens and instruction tokens each go through their own two-layer MLP
and are then attended by a shared set of K guidance queries, producing K x d
summaries of the region (visual-aware) and of the instruction (text-aware)
that live in the same space and can be compared with cosine similarity.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MLPParams, Tensor
from .errors import ConfigError, DimensionError

SIM_MODES = ("mean_row", "flat")


def _token_vector(token: str, d: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x00{token}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(d)


@dataclass
class InstructionEmbedding:
    tokens: np.ndarray
    source_text: str

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


def embed_text(text: str, d: int, seed: int = 0) -> InstructionEmbedding:
    """Hash each whitespace token to a seeded standard-normal vector.

    Stands in for a BPE tokenizer plus embedding table: identical tokens map
    to identical rows and the result depends only on ``(text, d, seed)``.
    """
    words = text.split()
    if not words:
        raise ValueError("cannot embed empty text")
    return InstructionEmbedding(np.stack([_token_vector(w, d, seed) for w in words]), text)


@dataclass
class AlignmentModel:
    E: Tensor
    mlp_v: MLPParams
    mlp_t: MLPParams
    d_k: float
    activation: str = "gelu"
    sim_mode: str = "mean_row"

    @classmethod
    def init(cls, d: int, K: int, seed: int = 0, activation: str = "gelu",
             sim_mode: str = "mean_row") -> "AlignmentModel":
        if K < 1:
            raise ConfigError(f"need at least one guidance query, got K={K}")
        if sim_mode not in SIM_MODES:
            raise ConfigError(f"unknown similarity mode {sim_mode!r}")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d)
        E = Tensor(rng.uniform(-bound, bound, (K, d)), requires_grad=True)
        return cls(E, MLPParams.init(d, rng), MLPParams.init(d, rng), float(d), activation, sim_mode)

    @property
    def K(self) -> int:
        return self.E.shape[0]

    @property
    def d(self) -> int:
        return self.E.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        params = {"E": self.E}
        params.update({f"mlp_v.{k}": v for k, v in self.mlp_v.tensors().items()})
        params.update({f"mlp_t.{k}": v for k, v in self.mlp_t.tensors().items()})
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise KeyError(f"parameter names differ: {sorted(set(state) ^ set(params))}")
        for name, arr in state.items():
            if params[name].shape != arr.shape:
                raise DimensionError(f"{name}: shape {arr.shape} != {params[name].shape}")
            params[name].data = np.array(arr, dtype=np.float64)

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray], **kw) -> "AlignmentModel":
        K, d = state["E"].shape
        model = cls.init(d, K, **kw)
        model.load_state_dict(state)
        return model

    def save(self, path) -> None:
        ad.save_params(self.parameters(), path,
                       meta={"activation": self.activation, "sim_mode": self.sim_mode, "d_k": self.d_k})

    @classmethod
    def load(cls, path) -> "AlignmentModel":
        state, meta = ad.load_params(path)
        model = cls.from_state_dict(state, activation=meta.get("activation", "gelu"),
                                    sim_mode=meta.get("sim_mode", "mean_row"))
        model.d_k = float(meta.get("d_k", model.d))
        return model

    def _attend(self, projected: Tensor) -> Tensor:
        return ad.sdp_attention(self.E, projected, 1.0 / np.sqrt(self.d_k))

    def encode_region(self, region_tokens) -> Tensor:
        """(n, d) -> (K, d); also accepts a stack (N, n, d) -> (N, K, d)."""
        x = ad.as_tensor(region_tokens)
        if x.shape[-1] != self.d:
            raise DimensionError(f"region tokens have dim {x.shape[-1]}, model expects {self.d}")
        if x.shape[-2] < 1:
            raise DimensionError("empty region")
        return self._attend(ad.mlp_forward(x, self.mlp_v, self.activation))

    def encode_text(self, instr: InstructionEmbedding | np.ndarray) -> Tensor:
        tokens = instr.tokens if isinstance(instr, InstructionEmbedding) else instr
        x = ad.as_tensor(tokens)
        if x.shape[-1] != self.d:
            raise DimensionError(f"text tokens have dim {x.shape[-1]}, model expects {self.d}")
        return self._attend(ad.mlp_forward(x, self.mlp_t, self.activation))


def _unit(x: Tensor, mode: str) -> Tensor:
    """Rows normalised per query (mean_row) or whole K x d flattened (flat)."""
    if mode == "mean_row":
        return ad.normalize_rows(x)
    if mode == "flat":
        lead = x.shape[:-2]
        flat = ad.normalize_rows(ad.reshape(x, lead + (x.shape[-2] * x.shape[-1],)))
        return ad.reshape(flat, x.shape)
    raise ConfigError(f"unknown similarity mode {mode!r}")


def similarity(ev: Tensor, et: Tensor, mode: str = "mean_row") -> Tensor:
    """Differentiable region-instruction similarity over matching leading axes."""
    if ev.shape[-2:] != et.shape[-2:]:
        raise DimensionError(f"similarity needs matching K x d, got {ev.shape} and {et.shape}")
    prod = ad.sum(ad.mul(_unit(ev, mode), _unit(et, mode)), axis=-1)
    if mode == "mean_row":
        return ad.mean(prod, axis=-1)
    return ad.sum(prod, axis=-1)


def similarity_matrix(ev: Tensor, et: Tensor, mode: str = "mean_row") -> Tensor:
    """(B, K, d) x (B, K, d) -> (B, B) with entry [i, j] = sim(ev_i, et_j)."""
    B, K, d = ev.shape
    if et.shape != (B, K, d):
        raise DimensionError(f"similarity_matrix shapes differ: {ev.shape} vs {et.shape}")
    u = ad.reshape(_unit(ev, mode), (B, K * d))
    w = ad.reshape(_unit(et, mode), (B, K * d))
    s = ad.matmul(u, ad.transpose(w))
    return ad.scale(s, 1.0 / K) if mode == "mean_row" else s


def region_similarity(ev, et, mode: str = "mean_row") -> float:
    """Mean over the K query rows of the row-wise cosine (or flattened cosine)."""
    ev, et = np.asarray(getattr(ev, "data", ev)), np.asarray(getattr(et, "data", et))
    if ev.shape != et.shape:
        raise DimensionError(f"region_similarity needs equal shapes, got {ev.shape} and {et.shape}")
    if mode == "flat":
        return ad.cosine(ev, et)
    return float(np.mean([ad.cosine(a, b) for a, b in zip(ev, et)]))
