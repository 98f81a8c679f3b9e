import json

import pytest

from pinpoint.flops import CostModel, flops_estimate, pinpoint_flops, vanilla_flops


def test_prefill_only_magnitude():
    rep = flops_estimate(2000, 0)
    assert rep.total_flops == pytest.approx(2.8e13)
    assert rep.total_tflops == pytest.approx(28.0)


def test_zero_tokens():
    assert flops_estimate(0, 0).llm_flops == 0.0


def test_halving_visual_tokens_decreases():
    assert flops_estimate(500, 64, encoder_patches=500).total_flops < flops_estimate(1000, 64, encoder_patches=1000).total_flops


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        flops_estimate(-1, 0)


def test_pinpoint_cheaper_than_vanilla():
    rep = pinpoint_flops(48, 60, 64, budget=0.6)
    assert rep.ratio < 1.0
    assert 0 < rep.alignment_share < rep.module_share < 1


def test_budget_sweep_monotone():
    totals = [pinpoint_flops(48, 60, 64, budget=b).total_flops for b in (0.2, 0.4, 0.6, 0.8, 1.0)]
    assert totals == sorted(totals) and len(set(totals)) == len(totals)


def test_full_budget_costs_more_than_vanilla():
    # a second encoder pass and the alignment module are pure overhead at budget 1
    assert pinpoint_flops(24, 24, 32, budget=1.0).ratio > 1.0


def test_cost_model_recorded(tmp_path):
    cm = CostModel(p_llm=1e9)
    rep = vanilla_flops(10, 10, 5, cm)
    assert rep.cost_model["p_llm"] == 1e9
    assert json.loads(rep.to_json())["total_flops"] == rep.total_flops
    rep.write_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().startswith("# cost model:")
