"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``FINEALIGN_NO_NUMBA`` is unset (or ``0``).  Both implementations
live side by side in :data:`NUMPY_KERNELS` and :data:`NUMBA_KERNELS` so the
benchmark and the equivalence tests can call either one directly.
"""

import os

import numpy as np

_DISABLED = os.environ.get("FINEALIGN_NO_NUMBA", "0") not in ("", "0")

try:
    if _DISABLED:
        raise ImportError("numba disabled by FINEALIGN_NO_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference path


def _softmax_rows_np(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_grad_np(y, g):
    # dL/dx = y * (g - <g, y>) per row
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _log_softmax_rows_np(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _log_softmax_rows_grad_np(y, g):
    # y is the log-softmax output
    return g - np.exp(y) * g.sum(axis=1, keepdims=True)


def _layer_norm_np(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv[:, 0]


def _layer_norm_grad_np(xhat, inv, g):
    gm = g.mean(axis=1, keepdims=True)
    gx = (g * xhat).mean(axis=1, keepdims=True)
    return (g - gm - xhat * gx) * inv[:, None]


def _lcs_length_np(a, b):
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        return 0
    prev = np.zeros(n + 1, dtype=np.int64)
    for i in range(m):
        cur = np.zeros(n + 1, dtype=np.int64)
        ai = a[i]
        for j in range(n):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev = cur
    return int(prev[n])


def _pair_triplets_np(pos, neg):
    """All ordered (anchor, positive, negative) index triples, anchor != positive."""
    p = len(pos)
    if p < 2 or len(neg) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    a_idx, p_idx = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    keep = a_idx != p_idx
    a_sel = pos[a_idx[keep]]
    p_sel = pos[p_idx[keep]]
    n_pairs = len(a_sel)
    out = np.empty((n_pairs * len(neg), 3), dtype=np.int64)
    out[:, 0] = np.repeat(a_sel, len(neg))
    out[:, 1] = np.repeat(p_sel, len(neg))
    out[:, 2] = np.tile(neg, n_pairs)
    return out


NUMPY_KERNELS = {
    "softmax_rows": _softmax_rows_np,
    "softmax_rows_grad": _softmax_rows_grad_np,
    "log_softmax_rows": _log_softmax_rows_np,
    "log_softmax_rows_grad": _log_softmax_rows_grad_np,
    "layer_norm": _layer_norm_np,
    "layer_norm_grad": _layer_norm_grad_np,
    "lcs_length": _lcs_length_np,
    "pair_triplets": _pair_triplets_np,
}


# ---------------------------------------------------------------------------
# numba path

NUMBA_KERNELS = {}

if HAS_NUMBA:

    @njit(cache=True)
    def _softmax_rows_nb(x):
        m, n = x.shape
        out = np.empty_like(x)
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                e = np.exp(x[i, j] - mx)
                out[i, j] = e
                s += e
            for j in range(n):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _softmax_rows_grad_nb(y, g):
        m, n = y.shape
        out = np.empty_like(y)
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot += g[i, j] * y[i, j]
            for j in range(n):
                out[i, j] = y[i, j] * (g[i, j] - dot)
        return out

    @njit(cache=True)
    def _log_softmax_rows_nb(x):
        m, n = x.shape
        out = np.empty_like(x)
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                s += np.exp(x[i, j] - mx)
            ls = np.log(s)
            for j in range(n):
                out[i, j] = x[i, j] - mx - ls
        return out

    @njit(cache=True)
    def _log_softmax_rows_grad_nb(y, g):
        m, n = y.shape
        out = np.empty_like(y)
        for i in range(m):
            s = 0.0
            for j in range(n):
                s += g[i, j]
            for j in range(n):
                out[i, j] = g[i, j] - np.exp(y[i, j]) * s
        return out

    @njit(cache=True)
    def _layer_norm_nb(x, eps):
        m, n = x.shape
        out = np.empty_like(x)
        inv = np.empty(m)
        for i in range(m):
            mu = 0.0
            for j in range(n):
                mu += x[i, j]
            mu /= n
            var = 0.0
            for j in range(n):
                d = x[i, j] - mu
                var += d * d
            var /= n
            r = 1.0 / np.sqrt(var + eps)
            inv[i] = r
            for j in range(n):
                out[i, j] = (x[i, j] - mu) * r
        return out, inv

    @njit(cache=True)
    def _layer_norm_grad_nb(xhat, inv, g):
        m, n = xhat.shape
        out = np.empty_like(xhat)
        for i in range(m):
            gm = 0.0
            gx = 0.0
            for j in range(n):
                gm += g[i, j]
                gx += g[i, j] * xhat[i, j]
            gm /= n
            gx /= n
            for j in range(n):
                out[i, j] = (g[i, j] - gm - xhat[i, j] * gx) * inv[i]
        return out

    @njit(cache=True)
    def _lcs_length_nb(a, b):
        m, n = a.shape[0], b.shape[0]
        if m == 0 or n == 0:
            return 0
        prev = np.zeros(n + 1, dtype=np.int64)
        cur = np.zeros(n + 1, dtype=np.int64)
        for i in range(m):
            cur[0] = 0
            for j in range(n):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            for j in range(n + 1):
                prev[j] = cur[j]
        return prev[n]

    @njit(cache=True)
    def _pair_triplets_nb(pos, neg):
        p = pos.shape[0]
        q = neg.shape[0]
        if p < 2 or q == 0:
            return np.zeros((0, 3), dtype=np.int64)
        out = np.empty((p * (p - 1) * q, 3), dtype=np.int64)
        k = 0
        for i in range(p):
            for j in range(p):
                if i == j:
                    continue
                for r in range(q):
                    out[k, 0] = pos[i]
                    out[k, 1] = pos[j]
                    out[k, 2] = neg[r]
                    k += 1
        return out

    def _lcs_length_nb_wrap(a, b):
        return int(_lcs_length_nb(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))

    NUMBA_KERNELS = {
        "softmax_rows": _softmax_rows_nb,
        "softmax_rows_grad": _softmax_rows_grad_nb,
        "log_softmax_rows": _log_softmax_rows_nb,
        "log_softmax_rows_grad": _log_softmax_rows_grad_nb,
        "layer_norm": _layer_norm_nb,
        "layer_norm_grad": _layer_norm_grad_nb,
        "lcs_length": _lcs_length_nb_wrap,
        "pair_triplets": _pair_triplets_nb,
    }


ACTIVE = NUMBA_KERNELS if HAS_NUMBA else NUMPY_KERNELS
BACKEND = "numba" if HAS_NUMBA else "numpy"

softmax_rows = ACTIVE["softmax_rows"]
softmax_rows_grad = ACTIVE["softmax_rows_grad"]
log_softmax_rows = ACTIVE["log_softmax_rows"]
log_softmax_rows_grad = ACTIVE["log_softmax_rows_grad"]
layer_norm = ACTIVE["layer_norm"]
layer_norm_grad = ACTIVE["layer_norm_grad"]
lcs_length = ACTIVE["lcs_length"]
pair_triplets = ACTIVE["pair_triplets"]
