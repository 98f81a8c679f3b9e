import numpy as np
import pytest

from pinpoint import autodiff as ad
from pinpoint.alignment import AlignmentModel, embed_text, region_similarity, similarity, similarity_matrix
from pinpoint.autodiff import Tensor, gradcheck
from pinpoint.errors import ConfigError, DimensionError


def test_embed_repeated_token():
    emb = embed_text("hello hello", 8)
    np.testing.assert_array_equal(emb.tokens[0], emb.tokens[1])


def test_embed_permutation():
    a, b = embed_text("a b", 8).tokens, embed_text("b a", 8).tokens
    np.testing.assert_array_equal(a[::-1], b)
    assert not np.array_equal(a, b)


def test_embed_seed_changes_vectors():
    assert not np.allclose(embed_text("text", 8, seed=0).tokens, embed_text("text", 8, seed=1).tokens)


def test_embed_empty():
    with pytest.raises(ValueError):
        embed_text("   ", 8)


@pytest.fixture
def model():
    return AlignmentModel.init(6, 3, seed=0)


def test_encode_region_single_token(model):
    tok = np.random.default_rng(0).standard_normal((1, 6))
    out = model.encode_region(tok).data
    projected = ad.mlp_forward(Tensor(tok), model.mlp_v).data
    np.testing.assert_allclose(out, np.repeat(projected, 3, axis=0))


def test_encode_region_duplicate_invariant(model):
    tok = np.random.default_rng(1).standard_normal((5, 6))
    a = model.encode_region(tok).data
    b = model.encode_region(np.concatenate([tok, tok])).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_encode_region_permutation_invariant(model):
    tok = np.random.default_rng(2).standard_normal((7, 6))
    a = model.encode_region(tok).data
    b = model.encode_region(tok[::-1]).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_encode_region_stacked_matches_single(model):
    toks = np.random.default_rng(3).standard_normal((4, 5, 6))
    stacked = model.encode_region(toks).data
    for i in range(4):
        np.testing.assert_allclose(stacked[i], model.encode_region(toks[i]).data, atol=1e-12)


def test_encode_region_gradcheck_E(model):
    tok = Tensor(np.random.default_rng(4).standard_normal((5, 6)))
    assert gradcheck(lambda: ad.sum(ad.exp(model.encode_region(tok))), [model.E]) < 1e-5


def test_encode_text_single_token_and_determinism(model):
    emb = embed_text("word", 6)
    out = model.encode_text(emb).data
    projected = ad.mlp_forward(Tensor(emb.tokens), model.mlp_t).data
    np.testing.assert_allclose(out, np.repeat(projected, 3, axis=0))
    emb2 = embed_text("the same question", 6)
    assert model.encode_text(emb2).data.tobytes() == model.encode_text(emb2).data.tobytes()


def test_encode_text_gradcheck_mlp_t(model):
    emb = embed_text("what is the total", 6)
    params = list(model.mlp_t.tensors().values())
    assert gradcheck(lambda: ad.sum(ad.exp(model.encode_text(emb))), params) < 1e-5


def test_dimension_mismatch(model):
    with pytest.raises(DimensionError):
        model.encode_region(np.zeros((3, 5)))
    with pytest.raises(DimensionError):
        model.encode_text(np.zeros((3, 5)))


def test_region_similarity_cases():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4))
    assert region_similarity(x, x) == pytest.approx(1.0)
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert region_similarity(a, b) == pytest.approx(0.0)
    c = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert region_similarity(a, c) == pytest.approx(0.5)


def test_similarity_matrix_matches_pairwise():
    rng = np.random.default_rng(6)
    ev, et = Tensor(rng.standard_normal((3, 2, 4))), Tensor(rng.standard_normal((3, 2, 4)))
    for mode in ("mean_row", "flat"):
        m = similarity_matrix(ev, et, mode).data
        for i in range(3):
            for j in range(3):
                assert m[i, j] == pytest.approx(region_similarity(ev.data[i], et.data[j], mode), abs=1e-12)
        np.testing.assert_allclose(np.diag(m), similarity(ev, et, mode).data, atol=1e-12)


def test_checkpoint_roundtrip_bitwise(tmp_path, model):
    model.save(tmp_path / "m.json")
    back = AlignmentModel.load(tmp_path / "m.json")
    for k, v in model.state_dict().items():
        assert back.state_dict()[k].tobytes() == v.tobytes()


def test_bad_config():
    with pytest.raises(ConfigError):
        AlignmentModel.init(4, 0)
    with pytest.raises(ConfigError):
        AlignmentModel.init(4, 2, sim_mode="dot")
