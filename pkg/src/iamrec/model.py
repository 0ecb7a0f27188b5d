"""Decoder-style sequence model with item-aware attention masks.

Everything is float64 numpy.  ``forward`` keeps a trace of every
intermediate needed by ``training.backward``; the per-sublayer backward
primitives live next to their forward counterparts and
must be changed together.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .masks import VARIANTS, layer_kinds
from .segmentation import DESCRIPTION, SegmentedSequence

RMS_EPS = 1e-6
PAD_SEGMENT = -2
LORA_TARGETS = ("wq", "wk", "wv")


class NumericalError(FloatingPointError):
    """Raised when activations or losses stop being finite."""


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.05

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_items: int
    d: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    ffn_mult: int = 4
    max_len: int = 256
    seed: int = 0
    variant: str = "iam"
    lora: LoraConfig | None = None

    def __post_init__(self):
        for name in ("vocab_size", "n_items", "d", "n_heads", "n_blocks", "ffn_mult", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lora is not None and not 1 <= self.lora.rank <= self.d:
            raise ValueError(f"LoRA rank must be in [1, d={self.d}]")

    @property
    def n_sublayers(self) -> int:
        return 2 * self.n_blocks

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if data.get("lora") is not None:
            data["lora"] = LoraConfig(**data["lora"])
        return cls(**data)


@dataclass
class ModelParameters:
    tensors: dict[str, np.ndarray]
    frozen: frozenset[str] = frozenset()
    lora: LoraConfig | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def trainable(self) -> list[str]:
        return [k for k in self.tensors if k not in self.frozen]

    def n_trainable(self) -> int:
        return sum(self.tensors[k].size for k in self.trainable())

    def copy(self) -> "ModelParameters":
        return ModelParameters({k: v.copy() for k, v in self.tensors.items()}, self.frozen, self.lora)


def init_params(config: ModelConfig) -> ModelParameters:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, unit norm gains; deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    d, bound = config.d, 1.0 / math.sqrt(config.d)
    hidden = config.ffn_mult * d

    def uni(*shape):
        return rng.uniform(-bound, bound, size=shape)

    t: dict[str, np.ndarray] = {
        "tok_emb": uni(config.vocab_size, d),
        "pos_emb": uni(config.max_len, d),
    }
    for s in range(config.n_sublayers):
        t[f"layer{s}.attn_norm"] = np.ones(d)
        for w in ("wq", "wk", "wv", "wo"):
            t[f"layer{s}.{w}"] = uni(d, d)
        t[f"layer{s}.ffn_norm"] = np.ones(d)
        t[f"layer{s}.w1"] = uni(d, hidden)
        t[f"layer{s}.w2"] = uni(hidden, d)
    t["final_norm"] = np.ones(d)
    t["adapter"] = uni(d, config.n_items)
    params = ModelParameters(t)
    if config.lora is not None:
        params = lora_apply(params, config.lora, config.seed)
    return params


def lora_apply(params: ModelParameters, lora: LoraConfig, seed: int) -> ModelParameters:
    """Attach ``W + (alpha/rank) B A`` deltas to every Q/K/V projection.

    ``A`` (rank x d) is random, ``B`` (d x rank) starts at zero, so outputs are
    unchanged until training moves ``B``.  Everything except the LoRA factors
    and the adapter is frozen.
    """
    d = params["tok_emb"].shape[1]
    if not 1 <= lora.rank <= d:
        raise ValueError(f"LoRA rank {lora.rank} must be in [1, d={d}]")
    rng = np.random.default_rng(seed + 7919)
    bound = 1.0 / math.sqrt(d)
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    lora_names = []
    for name in list(params.tensors):
        if name.rsplit(".", 1)[-1] in LORA_TARGETS:
            tensors[f"{name}.lora_a"] = rng.uniform(-bound, bound, size=(lora.rank, d))
            tensors[f"{name}.lora_b"] = np.zeros((d, lora.rank))
            lora_names += [f"{name}.lora_a", f"{name}.lora_b"]
    trainable = set(lora_names) | {"adapter"}
    frozen = frozenset(k for k in tensors if k not in trainable)
    return ModelParameters(tensors, frozen, lora)


# ---------------------------------------------------------------- batching
#
# Position-wise work (norms, projections, feed-forward) runs on a compact
# row matrix holding only real tokens.  When every sequence in a batch starts
# with the same description tokens, those positions are stored once: their
# rows attend only within the prefix under every mask kind, so their
# activations are identical across the batch.  Attention alone gathers rows
# into padded (B, L) form.


@dataclass
class RowLayout:
    B: int
    L: int
    prefix_len: int
    gather: np.ndarray  # (B*L,) padded slot -> row; padding points at row 0
    owner: np.ndarray  # (N,) row -> padded slot whose attention output it takes
    valid: np.ndarray  # (B*L,) bool, slot holds a real token

    @property
    def n_rows(self) -> int:
        return self.owner.shape[0]

    @classmethod
    def dense(cls, B: int, L: int) -> "RowLayout":
        idx = np.arange(B * L)
        return cls(B, L, 0, idx, idx, np.ones(B * L, dtype=bool))

    def to_heads(self, rows, n_heads):
        d = rows.shape[1]
        return rows[self.gather].reshape(self.B, self.L, n_heads, d // n_heads).transpose(0, 2, 1, 3)

    def from_heads(self, heads):
        """Adjoint of ``to_heads``: sum padded-slot gradients back onto rows."""
        B, H, L, dh = heads.shape
        flat = heads.transpose(0, 2, 1, 3).reshape(B * L, H * dh)
        P = self.prefix_len
        rows = np.empty((self.n_rows, H * dh))
        rows[P:] = flat[self.owner[P:]]
        if P:
            rows[:P] = flat.reshape(B, L, H * dh)[:, :P].sum(axis=0)
        return rows

    def unflatten(self, rows) -> np.ndarray:
        """Rows back to padded (B, L, ...) form, zeros at padding."""
        out = rows[self.gather]
        out[~self.valid] = 0.0
        return out.reshape((self.B, self.L) + rows.shape[1:])


@dataclass
class Batch:
    """Right-padded batch; padding carries segment id ``PAD_SEGMENT``."""

    token_ids: np.ndarray
    segments: np.ndarray
    readout: np.ndarray
    layout: RowLayout
    row_tokens: np.ndarray
    row_positions: np.ndarray
    readout_rows: np.ndarray
    _masks: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    def mask(self, kind: str) -> np.ndarray:
        if kind not in self._masks:
            code = {"causal": kernels.CAUSAL, "intra": kernels.INTRA, "inter": kernels.INTER}[kind]
            self._masks[kind] = np.stack([kernels.build_mask(seg, code) for seg in self.segments])
        return self._masks[kind]


def _shared_prefix(seqs: Sequence[SegmentedSequence]) -> int:
    first = seqs[0]
    limit = min(len(s) for s in seqs)
    P = 0
    while P < limit and first.labels[P] == DESCRIPTION:
        tok = first.token_ids[P]
        if any(s.token_ids[P] != tok or s.labels[P] != DESCRIPTION for s in seqs):
            break
        P += 1
    return P


def make_batch(seqs: Sequence[SegmentedSequence], pad_id: int = 0, share_prefix: bool = True) -> Batch:
    if not seqs:
        raise ValueError("empty batch")
    B, L = len(seqs), max(len(s) for s in seqs)
    ids = np.full((B, L), pad_id, dtype=np.int64)
    seg = np.full((B, L), PAD_SEGMENT, dtype=np.int64)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s.token_ids
        seg[b, : len(s)] = s.labels
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    P = _shared_prefix(seqs) if share_prefix else 0

    pos = np.tile(np.arange(L), B)
    example = np.repeat(np.arange(B), L)
    valid = pos < lengths[example]
    rest = np.flatnonzero(valid & (pos >= P))
    owner = np.concatenate([np.arange(P), rest])
    gather = np.zeros(B * L, dtype=np.int64)
    gather[rest] = np.arange(P, P + rest.size)
    shared = valid & (pos < P)
    gather[shared] = pos[shared]

    layout = RowLayout(B, L, P, gather, owner, valid)
    flat_ids = ids.reshape(-1)
    readout = lengths - 1
    return Batch(
        ids, seg, readout, layout,
        row_tokens=flat_ids[owner],
        row_positions=pos[owner],
        readout_rows=gather[np.arange(B) * L + readout],
    )


# ---------------------------------------------------------------- primitives


def rmsnorm(x, gain):
    y, xhat, inv = kernels.rmsnorm_forward(x, gain, RMS_EPS)
    return y, (xhat, inv)


def rmsnorm_backward(dout, gain, cache):
    xhat, inv = cache
    return kernels.rmsnorm_backward(dout, gain, xhat, inv)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _layer(params: ModelParameters, s: int) -> dict[str, np.ndarray]:
    prefix = f"layer{s}."
    return {k[len(prefix):]: v for k, v in params.tensors.items() if k.startswith(prefix)}


def _project(n2, layer, name, lora, drop):
    """``n2 @ W`` plus the LoRA path when present; returns output and dropped input."""
    out = n2 @ layer[name]
    if lora is None or f"{name}.lora_a" not in layer:
        return out, None
    nd = n2 if drop is None else n2 * drop
    out = out + lora.scale * ((nd @ layer[f"{name}.lora_b"]) @ layer[f"{name}.lora_a"])
    return out, nd


def attention_rows(x, layout: RowLayout, mask, layer, n_heads, lora=None, rng=None):
    """Masked multi-head attention branch on row-compact activations (N, d).

    Returns ``(branch, cache)``; fully masked rows get a zero branch.
    """
    n2, norm_cache = rmsnorm(x, layer["attn_norm"])
    drops, dropped, heads = {}, {}, {}
    for name in LORA_TARGETS:
        drop = None
        if lora is not None and rng is not None and lora.dropout > 0:
            keep = 1.0 - lora.dropout
            drop = (rng.random(n2.shape) < keep) / keep
        out, nd = _project(n2, layer, name, lora, drop)
        drops[name], dropped[name] = drop, nd
        heads[name] = layout.to_heads(out, n_heads)
    q, k, v = heads["wq"], heads["wk"], heads["wv"]
    B, H, L, dh = q.shape

    scale = 1.0 / math.sqrt(dh)
    probs = kernels.masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, mask)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B * L, H * dh)[layout.owner]
    branch = ctx @ layer["wo"]
    cache = {
        "norm": norm_cache, "n2": n2, "q": q, "k": k, "v": v, "probs": probs, "ctx": ctx,
        "drops": drops, "dropped": dropped, "scale": scale, "layout": layout, "out": branch,
    }
    return branch, cache


def attention_sublayer(x, mask, layer, n_heads, lora=None, rng=None):
    """Pre-normalized masked attention with residual on (l, d) or (B, l, d) input.

    Returns ``(x + branch, cache)``; ``cache["out"]`` holds the branch alone in
    the same shape as ``x``.
    """
    single = x.ndim == 2
    x3 = x[None] if single else x
    mask3 = np.asarray(mask)[None] if single else np.asarray(mask)
    B, L, d = x3.shape
    if mask3.shape != (B, L, L):
        raise ValueError(f"mask shape {mask3.shape} does not match activations {x.shape}")
    layout = RowLayout.dense(B, L)
    branch, cache = attention_rows(x3.reshape(B * L, d), layout, mask3, layer, n_heads, lora, rng)
    branch = branch.reshape(x.shape)
    cache["out"] = branch
    return x + branch, cache


def attention_backward(dbranch, layer, cache, lora, need):
    """Gradients of the attention branch; ``need(name)`` says which weights to return."""
    layout: RowLayout = cache["layout"]
    probs, q, k, v = cache["probs"], cache["q"], cache["k"], cache["v"]
    B, H, L, dh = q.shape
    d = H * dh
    grads = {}
    if need("wo"):
        grads["wo"] = cache["ctx"].T @ dbranch
    dctx = np.zeros((B * L, d))
    dctx[layout.owner] = dbranch @ layer["wo"].T
    dctx = dctx.reshape(B, L, H, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = kernels.masked_softmax_backward(probs, dprobs) * cache["scale"]
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    n2 = cache["n2"]
    dn2 = np.zeros_like(n2)
    for name, dhead in (("wq", dq), ("wk", dk), ("wv", dv)):
        dout = layout.from_heads(dhead)
        if need(name):
            grads[name] = n2.T @ dout
        dn2 += dout @ layer[name].T
        a_name, b_name = f"{name}.lora_a", f"{name}.lora_b"
        if lora is not None and a_name in layer:
            A, Bm = layer[a_name], layer[b_name]
            nd = cache["dropped"][name]
            d_low = lora.scale * (dout @ A.T)
            if need(a_name):
                grads[a_name] = lora.scale * (nd @ Bm).T @ dout
            if need(b_name):
                grads[b_name] = nd.T @ d_low
            d_nd = d_low @ Bm.T
            drop = cache["drops"][name]
            dn2 += d_nd if drop is None else d_nd * drop
    dx, dgain = rmsnorm_backward(dn2, layer["attn_norm"], cache["norm"])
    if need("attn_norm"):
        grads["attn_norm"] = dgain
    return dx, grads


def ffn_rows(x, layer):
    """Position-wise SiLU feed-forward branch on (N, d) rows."""
    n2, norm_cache = rmsnorm(x, layer["ffn_norm"])
    u = n2 @ layer["w1"]
    act, sig = kernels.silu_forward(u)
    branch = act @ layer["w2"]
    return branch, {"norm": norm_cache, "n2": n2, "u": u, "sig": sig, "act": act, "out": branch}


def ffn_backward(dbranch, layer, cache, need):
    grads = {}
    if need("w2"):
        grads["w2"] = cache["act"].T @ dbranch
    du = kernels.silu_backward(dbranch @ layer["w2"].T, cache["u"], cache["sig"])
    if need("w1"):
        grads["w1"] = cache["n2"].T @ du
    dx, dgain = rmsnorm_backward(du @ layer["w1"].T, layer["ffn_norm"], cache["norm"])
    if need("ffn_norm"):
        grads["ffn_norm"] = dgain
    return dx, grads


# ---------------------------------------------------------------- model


@dataclass
class LayerTrace:
    """Row-compact activations of one attention + feed-forward pair."""

    kind: str
    x_in: np.ndarray
    attn: dict
    x_mid: np.ndarray
    ffn: dict
    x_out: np.ndarray

    @property
    def attn_weights(self) -> np.ndarray:
        return self.attn["probs"]


@dataclass
class ForwardTrace:
    batch: Batch
    layers: list[LayerTrace]
    final_norm: tuple
    hidden_rows: np.ndarray

    @property
    def readout_hidden(self) -> np.ndarray:
        return self.hidden_rows[self.batch.readout_rows]

    def padded(self, rows) -> np.ndarray:
        return self.batch.layout.unflatten(rows)


def forward(params: ModelParameters, config: ModelConfig, batch: Batch, rng=None):
    """Run the whole stack on a batch; returns ``(hidden (B, L, d), trace)``.

    ``rng`` enables LoRA dropout (training only).
    """
    ids = batch.token_ids
    B, L = ids.shape
    if L > config.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len={config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError("token id outside the vocabulary")
    T = params.tensors
    x = T["tok_emb"][batch.row_tokens] + T["pos_emb"][batch.row_positions]
    layers = []
    for s, kind in enumerate(layer_kinds(config.variant, config.n_blocks)):
        layer = _layer(params, s)
        branch, acache = attention_rows(x, batch.layout, batch.mask(kind), layer, config.n_heads, params.lora, rng)
        x_mid = x + branch
        branch, fcache = ffn_rows(x_mid, layer)
        x_out = x_mid + branch
        if not np.isfinite(x_out).all():
            raise NumericalError(f"non-finite activations in sublayer {s} ({kind})")
        layers.append(LayerTrace(kind, x, acache, x_mid, fcache, x_out))
        x = x_out
    hidden, ncache = rmsnorm(x, T["final_norm"])
    trace = ForwardTrace(batch, layers, ncache, hidden)
    return batch.layout.unflatten(hidden), trace


def model_forward(seq: SegmentedSequence, params: ModelParameters, config: ModelConfig):
    """Single-sequence forward: ``(hidden (l, d), trace)``."""
    hidden, trace = forward(params, config, make_batch([seq]))
    return hidden[0], trace


def item_logits(hidden, params: ModelParameters, readout=None) -> np.ndarray:
    if hidden.ndim == 2:
        last = hidden[-1] if readout is None else hidden[readout]
    else:
        if readout is None:
            raise ValueError("batched hidden states need readout positions")
        last = hidden[np.arange(hidden.shape[0]), readout]
    return last @ params["adapter"]


def score_items(hidden, params: ModelParameters, readout=None) -> np.ndarray:
    """Per-item sigmoid scores from the read-out (suffix marker) position."""
    return _sigmoid(item_logits(hidden, params, readout))


def with_variant(config: ModelConfig, variant: str) -> ModelConfig:
    return replace(config, variant=variant)
