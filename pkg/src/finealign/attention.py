"""Multi-head attention, saliency-biased attention and the image feature refiner."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError, Tensor

N_CLASSES = 14


@dataclass
class MultiHeadAttentionParams:
    W_Q: Parameter
    W_K: Parameter
    W_V: Parameter
    W_O: Parameter
    n_heads: int = 1

    def __post_init__(self):
        d = self.W_Q.shape[0]
        for w in (self.W_Q, self.W_K, self.W_V, self.W_O):
            if w.shape != (d, d):
                raise ShapeError(f"attention weights must all be {d}x{d}, got {w.shape}")
        if self.n_heads < 1 or d % self.n_heads:
            raise ValueError(f"width {d} is not divisible by n_heads={self.n_heads}")

    @property
    def d(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d_k(self) -> int:
        return self.d // self.n_heads

    def parameters(self) -> list:
        return [self.W_Q, self.W_K, self.W_V, self.W_O]

    @classmethod
    def init(cls, d: int, n_heads: int, rng: np.random.Generator, prefix: str = "attn"):
        s = 1.0 / math.sqrt(d)
        mats = [Parameter(rng.normal(0.0, s, (d, d)), name=f"{prefix}.{n}") for n in ("W_Q", "W_K", "W_V", "W_O")]
        return cls(*mats, n_heads=n_heads)

    @classmethod
    def identity(cls, d: int, n_heads: int = 1, prefix: str = "attn"):
        mats = [Parameter(np.eye(d), name=f"{prefix}.{n}") for n in ("W_Q", "W_K", "W_V", "W_O")]
        return cls(*mats, n_heads=n_heads)


def mha(queries: Tensor, context: Tensor, params: MultiHeadAttentionParams,
        bias: np.ndarray | None = None, normalize: bool = True) -> Tensor:
    """Scaled dot-product attention of ``queries`` over ``context``.

    ``bias`` is an optional constant q x c matrix added to every head's
    logits before the row softmax (masks use large negative entries).  With
    ``normalize=False`` the biased logits are used directly as weights.
    """
    d = params.d
    if queries.shape[1] != d or context.shape[1] != d:
        raise ShapeError(
            f"mha: feature widths {queries.shape[1]} (queries) and {context.shape[1]} (context) "
            f"must both equal {d}")
    q_len, c_len = queries.shape[0], context.shape[0]
    if bias is not None and np.shape(bias) != (q_len, c_len):
        raise ShapeError(f"mha: bias shape {np.shape(bias)} does not match ({q_len}, {c_len})")
    Q = T.matmul(queries, params.W_Q)
    K = T.matmul(context, params.W_K)
    V = T.matmul(context, params.W_V)
    dk = params.d_k
    inv = 1.0 / math.sqrt(dk)
    bias_t = None if bias is None else Tensor(bias)
    heads = []
    for h in range(params.n_heads):
        if params.n_heads == 1:
            qh, kh, vh = Q, K, V
        else:
            lo, hi = h * dk, (h + 1) * dk
            qh, kh, vh = T.slice_cols(Q, lo, hi), T.slice_cols(K, lo, hi), T.slice_cols(V, lo, hi)
        logits = T.scale(T.matmul(qh, T.transpose(kh)), inv)
        if bias_t is not None:
            logits = T.add(logits, bias_t)
        weights = T.row_softmax(logits) if normalize else logits
        heads.append(T.matmul(weights, vh))
    out = heads[0] if len(heads) == 1 else T.concat_cols(heads)
    return T.matmul(out, params.W_O)


# ---------------------------------------------------------------------------
# saliency maps


class SaliencyMap:
    """Nonnegative N_O x N_I weights tying each observation to image patches.

    Every row has maximum 1.  Construction rejects negative entries and
    all-zero rows; rows with another maximum are rescaled only when
    ``normalize=True``.
    """

    def __init__(self, matrix, normalize: bool = False):
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError(f"saliency map must be 2-D, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("saliency map has non-finite entries")
        if np.any(m < 0):
            raise ValueError("saliency map has negative entries")
        row_max = m.max(axis=1)
        if np.any(row_max == 0):
            bad = int(np.flatnonzero(row_max == 0)[0])
            raise ValueError(f"saliency row {bad} is all zeros")
        if normalize:
            m = m / row_max[:, None]
        elif not np.allclose(row_max, 1.0, rtol=0, atol=1e-12):
            bad = int(np.flatnonzero(np.abs(row_max - 1.0) > 1e-12)[0])
            raise ValueError(
                f"saliency row {bad} has maximum {row_max[bad]!r}, expected 1 (use --normalize-saliency)")
        m.flags.writeable = False
        self.matrix = m
        self.normalization = "per_row_max_one"

    @property
    def shape(self):
        return self.matrix.shape

    @classmethod
    def uniform(cls, n_obs: int, n_patches: int) -> "SaliencyMap":
        return cls(np.ones((n_obs, n_patches)))

    @classmethod
    def from_dict(cls, obj: dict, normalize: bool = False) -> "SaliencyMap":
        n_obs, n_patches = int(obj["n_obs"]), int(obj["n_patches"])
        data = obj["data"]
        if len(data) != n_obs * n_patches:
            raise ShapeError(f"saliency data has {len(data)} values, expected {n_obs}x{n_patches}")
        return cls(np.asarray(data, dtype=np.float64).reshape(n_obs, n_patches), normalize=normalize)

    def to_dict(self) -> dict:
        n_obs, n_patches = self.matrix.shape
        return {"n_obs": n_obs, "n_patches": n_patches, "data": self.matrix.reshape(-1).tolist()}


def load_saliency(path, normalize: bool = False) -> SaliencyMap:
    with open(path) as fh:
        return SaliencyMap.from_dict(json.load(fh), normalize=normalize)


def save_saliency(path, smap: SaliencyMap):
    with open(path, "w") as fh:
        json.dump(smap.to_dict(), fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# image feature refiner


@dataclass
class IfrConfig:
    alpha: float = 1.0
    use_refined_visual_in_update: bool = True
    # "softmax": normalised attention weights; "literal": raw biased logits as weights
    attention_form: str = "softmax"
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.attention_form not in ("softmax", "literal"):
            raise ValueError(f"unknown attention_form {self.attention_form!r}")


@dataclass
class IfrParams:
    saliency: MultiHeadAttentionParams
    update: MultiHeadAttentionParams

    def parameters(self) -> list:
        return self.saliency.parameters() + self.update.parameters()


def saliency_mha(C: Tensor, V: Tensor, S: SaliencyMap, alpha: float,
                 params: MultiHeadAttentionParams, normalize: bool = True) -> Tensor:
    """Each observation row of ``C`` attends over patches ``V``, biased by ``alpha * S``."""
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    if S.shape != (C.shape[0], V.shape[0]):
        raise ShapeError(f"saliency map shape {S.shape} does not match ({C.shape[0]}, {V.shape[0]})")
    return mha(C, V, params, bias=alpha * S.matrix, normalize=normalize)


def symptom_update(C: Tensor, Vhat: Tensor, params: MultiHeadAttentionParams,
                   normalize: bool = True) -> Tensor:
    """Residual refresh of the symptom table: C + attention(Vhat rows over C)."""
    if Vhat.shape != C.shape:
        raise ShapeError(f"symptom_update: query rows {Vhat.shape} must match symptom table {C.shape}")
    return T.add(C, mha(Vhat, C, params, normalize=normalize))


def ifr_forward(C: Tensor, V: Tensor, S: SaliencyMap, config: IfrConfig, params: IfrParams) -> Tensor:
    normalize = config.attention_form == "softmax"
    Vhat = saliency_mha(C, V, S, config.alpha, params.saliency, normalize=normalize)
    if config.use_refined_visual_in_update:
        queries = Vhat
    else:
        # raw patch i paired with observation i
        n_obs = C.shape[0]
        if V.shape[0] < n_obs:
            raise ShapeError(f"raw-patch update needs at least {n_obs} patches, got {V.shape[0]}")
        queries = T.slice_rows(V, 0, n_obs)
    return symptom_update(C, queries, params.update, normalize=normalize)


def visual_classifier(V: Tensor, head: Parameter, bias: Parameter | None = None) -> Tensor:
    """Mean-pool patches and project to one logit per observation class."""
    pooled = T.reshape(T.reduce_mean(V, "rows"), (1, V.shape[1]))
    logits = T.matmul(pooled, head)
    if bias is not None:
        logits = T.add(logits, T.reshape(bias, (1, head.shape[1])))
    return T.reshape(logits, (head.shape[1],))
