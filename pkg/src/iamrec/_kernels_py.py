"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``IAMREC_PURE_PYTHON=1`` is set.  Semantics must match ``_ckernels.pyx``.
"""

import numpy as np

CAUSAL = 0
INTRA = 1
INTER = 2

DESCRIPTION = -1
PAD = -2


def build_mask(segments, kind):
    """Boolean ``L x L`` mask for one segment-id vector.

    Segment ids: ``-1`` description, ``k >= 0`` item *k*, ``-2`` padding.
    Padding rows and columns are always blocked.
    """
    seg = np.asarray(segments, dtype=np.int64)
    n = seg.shape[0]
    i = np.arange(n)
    causal = i[:, None] >= i[None, :]
    real = seg != PAD
    if kind == CAUSAL:
        allowed = causal
    else:
        desc_row = (seg == DESCRIPTION)[:, None]
        item_row = (seg >= 0)[:, None]
        item_col = (seg >= 0)[None, :]
        same = seg[:, None] == seg[None, :]
        if kind == INTRA:
            item_part = item_row & item_col & same
        elif kind == INTER:
            item_part = item_row & item_col & ~same
        else:
            raise ValueError(f"unknown mask kind {kind}")
        allowed = (desc_row & causal) | item_part
    return allowed & real[:, None] & real[None, :]


def masked_softmax(scores, mask):
    """Row softmax of ``scores`` (B, H, L, L) over columns allowed by ``mask`` (B, L, L).

    Fully masked rows come out as all zeros.
    """
    m = mask[:, None, :, :]
    s = np.where(m, scores, -np.inf)
    row_max = s.max(axis=-1, keepdims=True)
    empty = ~np.isfinite(row_max)
    row_max = np.where(empty, 0.0, row_max)
    e = np.exp(s - row_max)
    total = e.sum(axis=-1, keepdims=True)
    total = np.where(empty, 1.0, total)
    return e / total


def masked_softmax_backward(probs, dprobs):
    """Gradient w.r.t. the pre-softmax scores; blocked entries get zero."""
    inner = (probs * dprobs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def silu_forward(u):
    """Returns ``(u * sigmoid(u), sigmoid(u))``."""
    sig = 0.5 * (1.0 + np.tanh(0.5 * u))
    return u * sig, sig


def silu_backward(dact, u, sig):
    return dact * (sig * (1.0 + u * (1.0 - sig)))


def rmsnorm_forward(x, gain, eps):
    """Row-wise RMS normalization of a 2-D array; returns ``(y, xhat, inv)``."""
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=1) + eps)
    xhat = x * inv[:, None]
    return xhat * gain, xhat, inv


def rmsnorm_backward(dout, gain, xhat, inv):
    """Returns ``(dx, dgain)``."""
    dgain = (dout * xhat).sum(axis=0)
    dxhat = dout * gain
    dx = inv[:, None] * (dxhat - xhat * np.mean(dxhat * xhat, axis=1)[:, None])
    return dx, dgain
