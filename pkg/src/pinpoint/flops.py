"""Parametric FLOPs model for vanilla vs. select-and-refine inference.

Every dense parameter costs ``flops_per_param_token`` FLOPs per token it
touches (2 = one multiply-add). The LLM term covers the prefill over visual
plus text tokens, the encoder term covers each vision-encoder pass, and the
alignment term counts the matmuls of the guidance-query module explicitly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .grid import n_regions


@dataclass(frozen=True)
class CostModel:
    p_llm: float = 7e9
    p_vit: float = 3e8
    flops_per_param_token: float = 2.0
    embed_dim: int = 4096
    n_queries: int = 100


def alignment_flops(n_regions: int, region_tokens: int, n_text_tokens: int, d: int, K: int) -> float:
    """FLOPs of the two MLPs, both query attentions and the per-region similarity."""
    mlp_per_token = 2 * 2 * d * d
    attn_per_token = 2 * 2 * K * d  # scores E R'^T and weighted sum A R'
    sim_per_region = 6 * K * d
    regions = n_regions * (region_tokens * (mlp_per_token + attn_per_token) + sim_per_region)
    text = n_text_tokens * (mlp_per_token + attn_per_token)
    return float(regions + text)


@dataclass
class FlopsReport:
    llm_flops: float
    encoder_flops: float
    refine_flops: float
    alignment_flops: float
    total_flops: float
    vanilla_total_flops: float | None = None
    cost_model: dict = field(default_factory=dict)

    @property
    def total_tflops(self) -> float:
        return self.total_flops / 1e12

    @property
    def module_flops(self) -> float:
        """Overhead added by selection + refinement (alignment and re-encoding)."""
        return self.alignment_flops + self.refine_flops

    @property
    def module_share(self) -> float:
        return self.module_flops / self.total_flops if self.total_flops else 0.0

    @property
    def alignment_share(self) -> float:
        return self.alignment_flops / self.total_flops if self.total_flops else 0.0

    @property
    def ratio(self) -> float | None:
        if not self.vanilla_total_flops:
            return None
        return self.total_flops / self.vanilla_total_flops

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(total_tflops=self.total_tflops, module_flops=self.module_flops,
                 module_share=self.module_share, alignment_share=self.alignment_share, ratio=self.ratio)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path: str | Path) -> None:
        d = self.to_dict()
        d.pop("cost_model")
        with open(path, "w", newline="") as fh:
            fh.write("# cost model: " + json.dumps(self.cost_model, sort_keys=True) + "\n")
            w = csv.DictWriter(fh, fieldnames=list(d))
            w.writeheader()
            w.writerow(d)


def flops_estimate(n_visual_tokens: float, n_text_tokens: float, cost_model: CostModel = CostModel(), *,
                   encoder_patches: float = 0, refine_patches: float = 0, n_regions: int = 0,
                   region_tokens: int = 0, vanilla_total_flops: float | None = None) -> FlopsReport:
    if min(n_visual_tokens, n_text_tokens, encoder_patches, refine_patches, n_regions, region_tokens) < 0:
        raise ValueError("token and patch counts must be nonnegative")
    c = cost_model.flops_per_param_token
    llm = c * cost_model.p_llm * (n_visual_tokens + n_text_tokens)
    enc = c * cost_model.p_vit * encoder_patches
    ref = c * cost_model.p_vit * refine_patches
    align = alignment_flops(n_regions, region_tokens, int(n_text_tokens) if n_regions else 0,
                            cost_model.embed_dim, cost_model.n_queries) if n_regions else 0.0
    return FlopsReport(llm, enc, ref, align, llm + enc + ref + align, vanilla_total_flops, asdict(cost_model))


def vanilla_flops(grid_h: int, grid_w: int, n_text_tokens: int, cost_model: CostModel = CostModel()) -> FlopsReport:
    """One encoder pass over every patch, then prefill over every token."""
    T = grid_h * grid_w
    return flops_estimate(T, n_text_tokens, cost_model, encoder_patches=T)


def pinpoint_flops(grid_h: int, grid_w: int, n_text_tokens: int, budget: float = 0.6,
                   window: tuple[int, int] = (10, 10), stride: int = 7,
                   cost_model: CostModel = CostModel()) -> FlopsReport:
    """Full-image pass for selection, alignment over every window, refinement
    pass over ``budget`` of the patches, and prefill over the refined tokens."""
    if not 0 < budget <= 1:
        raise ValueError(f"budget must be in (0, 1], got {budget}")
    T = grid_h * grid_w
    refined = math.floor(budget * T)
    W, H = window
    vanilla = vanilla_flops(grid_h, grid_w, n_text_tokens, cost_model)
    return flops_estimate(refined, n_text_tokens, cost_model, encoder_patches=T, refine_patches=refined,
                          n_regions=n_regions(grid_h, grid_w, W, H, stride), region_tokens=W * H,
                          vanilla_total_flops=vanilla.total_flops)
