import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from finealign import losses
from finealign.losses import LossWeights
from finealign.tensor import DegenerateVectorError, ShapeError, Tensor

N = 14


def _v(*xs):
    return Tensor(np.array(xs, dtype=float))


# -- cross-entropy ------------------------------------------------------------


def test_lm_ce_uniform():
    loss = losses.lm_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3]).item()
    assert abs(loss - math.log(4)) < 1e-12


def test_lm_ce_loop_oracle(rng):
    logits = rng.normal(size=(5, 7))
    targets = rng.integers(0, 7, 5)
    expected = 0.0
    for row, t in zip(logits, targets):
        expected -= row[t] - math.log(sum(math.exp(v) for v in row))
    expected /= 5
    assert abs(losses.lm_cross_entropy(Tensor(logits), targets).item() - expected) < 1e-12


def test_lm_ce_monotone_in_margin():
    vals = []
    for m in (1, 5, 10):
        logits = np.zeros((2, 3))
        logits[[0, 1], [1, 2]] = m
        vals.append(losses.lm_cross_entropy(Tensor(logits), [1, 2]).item())
    assert vals[0] > vals[1] > vals[2] > 0


def test_lm_ce_errors():
    with pytest.raises(ValueError):
        losses.lm_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ShapeError):
        losses.lm_cross_entropy(Tensor(np.zeros((2, 3))), [0])


# -- BCE ----------------------------------------------------------------------


def test_bce_zero_logits_is_ln2(rng):
    y = rng.integers(0, 2, (3, N))
    assert abs(losses.bce_multilabel(Tensor(np.zeros((3, N))), y).item() - math.log(2)) < 1e-12


def test_bce_single_entry_value():
    logits = np.zeros(N)
    logits[0] = math.log(9)
    y = np.zeros(N)
    y[0] = 1
    total = losses.bce_multilabel(Tensor(logits), y).item() * N
    expected = -math.log(0.9) + (N - 1) * math.log(2)
    assert abs(total - expected) < 1e-12


def test_bce_loop_oracle(rng):
    p = rng.normal(scale=3, size=N)
    y = rng.integers(0, 2, N)
    s = 1 / (1 + np.exp(-p))
    expected = sum(-(yi * math.log(si) + (1 - yi) * math.log(1 - si)) for yi, si in zip(y, s)) / N
    assert abs(losses.bce_multilabel(Tensor(p), y).item() - expected) < 1e-12


def test_bce_extreme_logits_stay_finite():
    v = losses.bce_multilabel(Tensor(np.full(N, 800.0)), np.zeros(N)).item()
    assert math.isfinite(v) and abs(v - 800.0) < 1e-9


def test_bce_rejects_non_binary():
    with pytest.raises(ValueError):
        losses.bce_multilabel(Tensor(np.zeros(N)), np.full(N, 0.5))


def test_bce_permutation_invariant(rng):
    p = rng.normal(size=(3, N))
    y = rng.integers(0, 2, (3, N))
    perm_c, perm_r = rng.permutation(N), rng.permutation(3)
    a = losses.bce_multilabel(Tensor(p), y).item()
    b = losses.bce_multilabel(Tensor(p[perm_r][:, perm_c]), y[perm_r][:, perm_c]).item()
    assert abs(a - b) < 1e-12


# -- triplet --------------------------------------------------------------------


def test_triplet_collapse_equals_beta():
    x = _v(0.3, -1.2, 4.0)
    assert abs(losses.triplet_loss(x, x, x, 0.3).item() - 0.3) < 1e-12


def test_triplet_satisfied_margin_is_zero():
    assert losses.triplet_loss(_v(0, 0), _v(0, 0), _v(1, 0), 0.3).item() == 0.0


def test_triplet_arithmetic_fixture():
    v = losses.triplet_loss(_v(0, 0), _v(0.5, 0), _v(0.6, 0), 0.3).item()
    assert abs(v - 0.19) < 1e-12


def test_triplet_batch_is_mean():
    fa = Tensor(np.zeros((2, 2)))
    fp = Tensor(np.array([[0.5, 0], [0, 0]]))
    fn = Tensor(np.array([[0.6, 0], [2, 0]]))
    assert abs(losses.triplet_loss(fa, fp, fn, 0.3).item() - 0.19 / 2) < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.floats(0, 1))
def test_literal_triplet_never_below_beta(x, beta):
    v = losses.triplet_loss(Tensor(x[0]), Tensor(x[1]), Tensor(x[2]), beta, form="literal").item()
    assert v >= beta


def test_triplet_errors():
    with pytest.raises(ValueError):
        losses.triplet_loss(_v(0), _v(0), _v(0), 1.5)
    with pytest.raises(ShapeError):
        losses.triplet_loss(_v(0, 1), _v(0), _v(0), 0.3)
    with pytest.raises(ValueError):
        losses.triplet_loss(_v(0), _v(0), _v(0), 0.3, form="other")


# -- contrastive ----------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_itc_identical_embeddings_is_ln_n(n, rng):
    e = np.repeat(rng.normal(size=(1, 5)), n, axis=0)
    assert abs(losses.itc_loss(Tensor(e), Tensor(e), 0.07).item() - math.log(n)) < 1e-10


def test_itc_orthonormal_pairs():
    e = np.eye(2)
    v = losses.itc_loss(Tensor(e), Tensor(e), 1.0).item()
    assert abs(v - (-math.log(math.e / (math.e + 1)))) < 1e-12


def test_itc_smaller_tau_helps_dominant_diagonal():
    e = np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.2], [0.1, 0.0, 1.0]])
    vals = [losses.itc_loss(Tensor(e), Tensor(e), tau).item() for tau in (1.0, 0.5, 0.1, 0.07)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_itc_errors():
    with pytest.raises(DegenerateVectorError):
        losses.itc_loss(Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3))), 0.1)
    with pytest.raises(ShapeError):
        losses.itc_loss(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), 0.1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 4), elements=st.floats(0.1, 3)), st.floats(0.05, 2))
def test_itc_nonnegative(x, tau):
    assert losses.itc_loss(Tensor(x[0]), Tensor(x[1]), tau).item() >= -1e-12


# -- composites -----------------------------------------------------------------


def test_total_loss_weights():
    w = LossWeights()
    assert abs(losses.total_loss(1.0, 2.0, 3.0, w).item() - 3.3) < 1e-12
    zero = LossWeights(lambda_cls_i=0.0, lambda_itc=0.0)
    assert losses.total_loss(1.5, 2.0, 3.0, zero).item() == 1.5
    assert losses.total_loss(0.0, 0.0, 0.0, w).item() == 0.0


def test_tfr_loss_sum():
    assert abs(losses.tfr_loss(0.5, 0.2).item() - 0.7) < 1e-12
    assert losses.tfr_loss(0.0, 0.0).item() == 0.0
    same = losses.total_loss(0.5, 0.2, 0.0, LossWeights(lambda_cls_i=1.0, lambda_itc=0.0)).item()
    assert losses.tfr_loss(0.5, 0.2).item() == same


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(tau=0)
    with pytest.raises(ValueError):
        LossWeights(beta=2)
    with pytest.raises(ValueError):
        LossWeights(lambda_itc=-1)


def test_pooled_is_row_mean():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
    np.testing.assert_array_equal(losses.pooled(x).data, [[2.0, 4.0]])
