import json

import numpy as np
import pytest

from finealign import tensor as T
from finealign.attention import IfrConfig, IfrParams, MultiHeadAttentionParams, SaliencyMap, ifr_forward, \
    load_saliency, mha, saliency_mha, save_saliency, symptom_update, visual_classifier
from finealign.tensor import Parameter, ShapeError, Tensor


def _random_case(rng):
    h = int(rng.integers(1, 4))
    d = h * int(rng.integers(1, 5))
    n_obs, n_patch = int(rng.integers(1, 8)), int(rng.integers(1, 10))
    params = MultiHeadAttentionParams.init(d, h, rng)
    C, V = Tensor(rng.normal(size=(n_obs, d))), Tensor(rng.normal(size=(n_patch, d)))
    m = rng.uniform(0.01, 1.0, (n_obs, n_patch))
    return params, C, V, SaliencyMap(m, normalize=True)


def test_alpha_zero_equals_plain_mha():
    rng = np.random.default_rng(0)
    for _ in range(50):
        params, C, V, S = _random_case(rng)
        diff = np.abs(saliency_mha(C, V, S, 0.0, params).data - mha(C, V, params).data).max()
        assert diff < 1e-12


def test_uniform_saliency_is_a_softmax_shift():
    rng = np.random.default_rng(1)
    params, C, V, _ = _random_case(rng)
    S = SaliencyMap.uniform(C.shape[0], V.shape[0])
    np.testing.assert_allclose(saliency_mha(C, V, S, 3.0, params).data, mha(C, V, params).data, atol=1e-12)


def test_large_alpha_concentrates_on_salient_patch():
    d = 4
    params = MultiHeadAttentionParams.identity(d, 1)
    C = Tensor(np.zeros((1, d)))
    V = Tensor(np.eye(3, d))
    S = SaliencyMap(np.array([[0.0, 1.0, 0.0]]))
    out = saliency_mha(C, V, S, 50.0, params).data
    np.testing.assert_allclose(out[0], V.data[1], atol=1e-12)


def test_single_context_row_collapse():
    rng = np.random.default_rng(2)
    params = MultiHeadAttentionParams.init(4, 2, rng)
    q = Tensor(rng.normal(size=(3, 4)))
    row = rng.normal(size=(1, 4))
    out = mha(q, Tensor(row), params).data
    expected = row @ params.W_V.data @ params.W_O.data
    np.testing.assert_allclose(out, np.repeat(expected, 3, axis=0), atol=1e-12)


def test_mha_shape_errors():
    params = MultiHeadAttentionParams.identity(4, 2)
    with pytest.raises(ShapeError):
        mha(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), params)
    with pytest.raises(ShapeError):
        mha(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), params, bias=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        MultiHeadAttentionParams.init(5, 2, np.random.default_rng(0))


def test_saliency_validation():
    with pytest.raises(ValueError, match="negative"):
        SaliencyMap([[1.0, -0.1]])
    with pytest.raises(ValueError, match="all zeros"):
        SaliencyMap([[1.0, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError, match="maximum"):
        SaliencyMap([[0.5, 0.25]])
    with pytest.raises(ValueError, match="non-finite"):
        SaliencyMap([[1.0, np.nan]])
    s = SaliencyMap([[0.5, 0.25]], normalize=True)
    np.testing.assert_array_equal(s.matrix, [[1.0, 0.5]])


def test_saliency_shape_mismatch():
    params = MultiHeadAttentionParams.identity(2, 1)
    with pytest.raises(ShapeError):
        saliency_mha(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))), SaliencyMap.uniform(2, 4), 1.0, params)


def test_saliency_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    s = SaliencyMap(rng.uniform(0.1, 1, (14, 5)), normalize=True)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_saliency(p1, s)
    save_saliency(p2, load_saliency(p1))
    assert p1.read_bytes() == p2.read_bytes()
    obj = json.loads(p1.read_text())
    assert obj["n_obs"] == 14 and obj["n_patches"] == 5
    with pytest.raises(ShapeError):
        SaliencyMap.from_dict({"n_obs": 2, "n_patches": 2, "data": [1.0, 1.0, 1.0]})


def test_symptom_update_is_residual():
    rng = np.random.default_rng(4)
    params = MultiHeadAttentionParams.init(4, 2, rng)
    zero = MultiHeadAttentionParams(*(Parameter(np.zeros_like(p.data)) for p in params.parameters()), n_heads=2)
    C = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(symptom_update(C, C, zero).data, C.data)
    with pytest.raises(ShapeError):
        symptom_update(C, Tensor(np.zeros((2, 4))), params)


def test_ifr_variants():
    rng = np.random.default_rng(5)
    d, n_obs = 4, 3
    params = IfrParams(MultiHeadAttentionParams.init(d, 2, rng), MultiHeadAttentionParams.init(d, 2, rng))
    C = Tensor(rng.normal(size=(n_obs, d)))
    V = Tensor(rng.normal(size=(5, d)))
    S = SaliencyMap.uniform(n_obs, 5)
    refined = ifr_forward(C, V, S, IfrConfig(), params)
    raw = ifr_forward(C, V, S, IfrConfig(use_refined_visual_in_update=False), params)
    literal = ifr_forward(C, V, S, IfrConfig(attention_form="literal"), params)
    assert refined.shape == raw.shape == literal.shape == (n_obs, d)
    assert not np.allclose(refined.data, raw.data)
    expected_raw = symptom_update(C, T.slice_rows(V, 0, n_obs), params.update)
    np.testing.assert_allclose(raw.data, expected_raw.data, atol=1e-12)
    with pytest.raises(ShapeError):
        ifr_forward(C, T.slice_rows(V, 0, 2), SaliencyMap.uniform(n_obs, 2),
                    IfrConfig(use_refined_visual_in_update=False), params)
    with pytest.raises(ValueError):
        IfrConfig(attention_form="other")


def test_literal_form_uses_unnormalized_weights():
    rng = np.random.default_rng(6)
    params = MultiHeadAttentionParams.identity(2, 1)
    C, V = Tensor(rng.normal(size=(1, 2))), Tensor(rng.normal(size=(3, 2)))
    S = SaliencyMap(np.array([[1.0, 0.2, 0.5]]))
    logits = C.data @ V.data.T / np.sqrt(2) + 0.7 * S.matrix
    out = saliency_mha(C, V, S, 0.7, params, normalize=False).data
    np.testing.assert_allclose(out, logits @ V.data, atol=1e-12)


def test_visual_classifier_pools_patches():
    V = Tensor(np.array([[1.0, 0.0], [3.0, 2.0]]))
    W = Parameter(np.ones((2, 14)))
    b = Parameter(np.arange(14.0))
    out = visual_classifier(V, W, b).data
    assert out.shape == (14,)
    np.testing.assert_allclose(out, 3.0 + np.arange(14.0))
