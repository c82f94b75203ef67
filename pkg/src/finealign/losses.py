"""Training objectives: token cross-entropy, multi-label BCE, triplet, contrastive."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class LossWeights:
    lambda_cls_i: float = 1.0
    lambda_itc: float = 0.1
    beta: float = 0.3
    tau: float = 0.07

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lambda_cls_i < 0 or self.lambda_itc < 0:
            raise ValueError("loss weights must be nonnegative")


def lm_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    n, vocab = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"need one target per logit row ({n}), got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ValueError(f"target id out of vocabulary range [0, {vocab})")
    logp = T.pick(T.row_log_softmax(logits), targets)
    return T.scale(T.reduce_mean(logp), -1.0)


def bce_multilabel(logits: Tensor, targets) -> Tensor:
    """Mean over samples and classes of binary cross-entropy on logits.

    Uses softplus(p) - y*p, which equals -[y log s(p) + (1-y) log(1-s(p))].
    """
    y = np.asarray(targets, dtype=np.float64)
    if logits.data.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
        y = y.reshape(1, -1)
    if y.shape != logits.shape:
        raise ShapeError(f"targets {y.shape} do not match logits {logits.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_multilabel targets must be 0 or 1")
    per_entry = T.sub(T.softplus(logits), T.mul(Tensor(y), logits))
    return T.reduce_mean(per_entry)


def triplet_loss(fa: Tensor, fp: Tensor, fn: Tensor, beta: float, form: str = "standard") -> Tensor:
    """Margin loss over one triplet (vectors) or a batch of triplets (rows).

    ``standard``: mean of max(|a-p|^2 - |a-n|^2 + beta, 0).
    ``literal``: mean of max(|a-p|^2 + |a-n|^2 + beta, 0); kept for comparison,
    it rewards collapsing every embedding onto one point.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if not (fa.shape == fp.shape == fn.shape):
        raise ShapeError(f"triplet embeddings differ in shape: {fa.shape}, {fp.shape}, {fn.shape}")
    if fa.data.ndim == 1:
        fa, fp, fn = (T.reshape(x, (1, x.shape[0])) for x in (fa, fp, fn))
    d_ap = T.rowwise_sq_distance(fa, fp)
    d_an = T.rowwise_sq_distance(fa, fn)
    if form == "standard":
        gap = T.sub(d_ap, d_an)
    elif form == "literal":
        gap = T.add(d_ap, d_an)
    else:
        raise ValueError(f"unknown triplet form {form!r}")
    return T.reduce_mean(T.relu(T.add_scalar(gap, beta)))


def itc_loss(image_embs: Tensor, text_embs: Tensor, tau: float) -> Tensor:
    """Symmetric InfoNCE over cosine similarities; row i of each side is a pair."""
    if image_embs.shape != text_embs.shape or image_embs.data.ndim != 2:
        raise ShapeError(f"image {image_embs.shape} and text {text_embs.shape} batches must match")
    if not tau > 0:
        raise ValueError("tau must be positive")
    n = image_embs.shape[0]
    if n < 1:
        raise ValueError("itc_loss needs at least one pair")
    sim = T.scale(T.cosine_matrix(image_embs, text_embs), 1.0 / tau)
    diag = np.arange(n)
    i2t = T.reduce_sum(T.pick(T.row_log_softmax(sim), diag))
    t2i = T.reduce_sum(T.pick(T.row_log_softmax(T.transpose(sim)), diag))
    return T.scale(T.add(i2t, t2i), -1.0 / (2 * n))


def pooled(features: Tensor) -> Tensor:
    """Average over rows (patches or tokens) as a 1 x d matrix."""
    return T.reshape(T.reduce_mean(features, "rows"), (1, features.shape[1]))


def _as_scalar(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(float(x))


def total_loss(lce, lcls_i, litc, w: LossWeights) -> Tensor:
    lce, lcls_i, litc = _as_scalar(lce), _as_scalar(lcls_i), _as_scalar(litc)
    for v in (lce, lcls_i, litc):
        if not math.isfinite(v.item()):
            raise ValueError("total_loss got a non-finite component")
    return T.add(T.add(lce, T.scale(lcls_i, w.lambda_cls_i)), T.scale(litc, w.lambda_itc))


def tfr_loss(lcls_t, ltriplet, triplet_weight: float = 1.0) -> Tensor:
    """Phase-1 objective: classification loss plus (optionally weighted) triplet loss."""
    lcls_t, ltriplet = _as_scalar(lcls_t), _as_scalar(ltriplet)
    if triplet_weight == 1.0:
        return T.add(lcls_t, ltriplet)
    return T.add(lcls_t, T.scale(ltriplet, triplet_weight))
