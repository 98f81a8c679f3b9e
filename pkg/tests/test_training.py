import math

import numpy as np
import pytest

from pinpoint.alignment import AlignmentModel, region_similarity
from pinpoint.autodiff import Tensor, gradcheck
from pinpoint.errors import ConfigError, NumericalError
from pinpoint.synthetic import World, gen_synthetic
from pinpoint.training import (BatchSample, HistoryRow, TrainConfig, inter_loss, intra_loss, read_history,
                               total_loss, train, write_history)


def test_inter_single_pair_is_zero():
    rng = np.random.default_rng(0)
    ev, et = Tensor(rng.standard_normal((1, 2, 3))), Tensor(rng.standard_normal((1, 2, 3)))
    assert inter_loss(ev, et, 0.07).item() == 0.0


def test_inter_single_pair_strict_rejected():
    with pytest.raises(ConfigError):
        inter_loss(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 3))), 0.07, include_positive=False)


def test_inter_uniform_two_pairs():
    ev = Tensor(np.ones((2, 2, 3)))
    et = Tensor(np.ones((2, 2, 3)))
    assert abs(inter_loss(ev, et, 0.07).item() - 2 * math.log(2)) < 1e-9


def brute_inter(ev, et, tau):
    B = ev.shape[0]
    S = np.array([[region_similarity(ev[i], et[j]) for j in range(B)] for i in range(B)]) / tau
    v2t = -np.diag(S - np.log(np.exp(S).sum(axis=1, keepdims=True)))
    t2v = -np.diag(S - np.log(np.exp(S).sum(axis=0, keepdims=True)))
    return float(np.mean(v2t + t2v))


def test_inter_matches_brute_force_and_gradcheck():
    rng = np.random.default_rng(1)
    ev = Tensor(rng.standard_normal((4, 3, 5)), requires_grad=True)
    et = Tensor(rng.standard_normal((4, 3, 5)), requires_grad=True)
    assert abs(inter_loss(ev, et, 0.2).item() - brute_inter(ev.data, et.data, 0.2)) < 1e-9
    assert gradcheck(lambda: inter_loss(ev, et, 0.2), [ev, et]) < 1e-5


def test_inter_strict_masks_positive():
    rng = np.random.default_rng(2)
    ev, et = Tensor(rng.standard_normal((3, 2, 4))), Tensor(rng.standard_normal((3, 2, 4)))
    assert inter_loss(ev, et, 0.5, include_positive=False).item() != inter_loss(ev, et, 0.5).item()


def test_intra_no_negatives():
    et = Tensor(np.ones((2, 3)))
    assert intra_loss(et, et, None, 0.07).item() == 0.0
    assert intra_loss(et, et, [], 0.07).item() == 0.0


def test_intra_equal_negative():
    rng = np.random.default_rng(3)
    et, ev = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)))
    assert abs(intra_loss(et, ev, [ev], 0.07).item() - math.log(2)) < 1e-9


def test_intra_closed_form():
    et = Tensor(np.array([[1.0, 0.0]]))
    neg = Tensor(np.array([[0.0, 1.0]]))
    expected = -math.log(math.e / (math.e + 1))
    assert abs(intra_loss(et, et, [neg], 1.0).item() - expected) < 1e-9
    assert expected == pytest.approx(0.3133, abs=1e-4)


def test_high_temperature_limits():
    rng = np.random.default_rng(4)
    ev, et = Tensor(rng.standard_normal((3, 2, 4))), Tensor(rng.standard_normal((3, 2, 4)))
    assert inter_loss(ev, et, 1e6).item() == pytest.approx(2 * math.log(3), abs=1e-5)
    negs = [Tensor(rng.standard_normal((2, 4))) for _ in range(4)]
    assert intra_loss(et[0], ev[0], negs, 1e6).item() == pytest.approx(math.log(5), abs=1e-5)


@pytest.fixture(scope="module")
def small_batch():
    world = World(d=8, n_keywords=6)
    samples = gen_synthetic(4, seed=5, world=world)
    cfg = TrainConfig(K=3)
    return [BatchSample.build(s.grid, s.instruction, s.gt, cfg) for s in samples]


def test_total_lambda_zero_is_inter_bitwise(small_batch):
    model = AlignmentModel.init(8, 3, seed=0)
    parts = total_loss(small_batch, model, 0.1, 0.0)
    assert parts.total is parts.inter
    assert parts.intra.item() > 0


def test_total_arithmetic(small_batch):
    model = AlignmentModel.init(8, 3, seed=0)
    parts = total_loss(small_batch, model, 0.1, 0.5)
    inter, intra, total = parts.values()
    assert total == pytest.approx(inter + 0.5 * intra, abs=1e-12)
    # the stated arithmetic case: 1.0 + 0.5 * 0.4
    assert 1.0 + 0.5 * 0.4 == pytest.approx(1.2)


def test_total_gradcheck_E(small_batch):
    model = AlignmentModel.init(8, 3, seed=1)
    assert gradcheck(lambda: total_loss(small_batch[:3], model, 0.5, 0.5).total, [model.E]) < 1e-5


def test_config_parse_and_overrides(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nK = 8\nlambda = 0.25  # inline\ninclude_positive_in_denominator = false\n")
    cfg = TrainConfig.from_file(path)
    assert (cfg.K, cfg.lam, cfg.include_positive_in_denominator) == (8, 0.25, False)
    assert cfg.replace(τ="0.2", S=5).tau == 0.2
    assert TrainConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,line", [("K = 8\nbogus = 1\n", 2), ("no equals here\n", 1), ("tau = -1\n", 1)])
def test_config_errors_name_line(text, line):
    with pytest.raises(ConfigError, match=f":{line}:"):
        TrainConfig.from_text(text)


def test_zero_lr_leaves_params(small_batch):
    model = AlignmentModel.init(8, 3, seed=2)
    before = model.state_dict()
    train(small_batch, TrainConfig(K=3, lr=0.0, epochs=2, batch=2), model=model)
    for k, v in model.state_dict().items():
        assert v.tobytes() == before[k].tobytes()


def test_training_deterministic(small_batch):
    cfg = TrainConfig(K=3, lr=1e-2, epochs=2, batch=2)
    _, h1 = train(small_batch, cfg)
    _, h2 = train(small_batch, cfg)
    assert h1 == h2


def test_nan_loss_raises(small_batch):
    model = AlignmentModel.init(8, 3)
    model.E.data[0, 0] = np.nan
    with pytest.raises(NumericalError, match="batch samples"):
        train(small_batch, TrainConfig(K=3, epochs=1, batch=2), model=model)


def test_history_roundtrip(tmp_path):
    rows = [HistoryRow(1, 0.1, 0.2, 0.2), HistoryRow(2, 1 / 3, 2 / 7, 0.5)]
    write_history(rows, tmp_path / "h.csv")
    assert read_history(tmp_path / "h.csv") == rows


@pytest.mark.parametrize("seed", range(5))
def test_loss_decreases_on_synthetic(seed):
    world = World(seed=seed)
    samples = gen_synthetic(64, seed=seed, world=world)
    cfg = TrainConfig(K=8, lr=5e-3, tau=0.1, batch=8, epochs=100, max_steps=200, seed=seed)
    data = [BatchSample.build(s.grid, s.instruction, s.gt, cfg) for s in samples]
    _, hist = train(data, cfg)
    losses = [h.L_total for h in hist]
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
