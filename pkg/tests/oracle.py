"""Straight-line reference forward pass, written without the package's batching."""

import math

import numpy as np

from iamrec.segmentation import DESCRIPTION


def allowed(labels, kind, i, j):
    if kind == "causal" or labels[i] == DESCRIPTION:
        return j <= i
    if labels[j] == DESCRIPTION:
        return False
    return (labels[i] == labels[j]) == (kind == "intra")


def rms(v, g, eps=1e-6):
    return v / math.sqrt(sum(x * x for x in v) / len(v) + eps) * g


def attention(x, labels, kind, W, n_heads):
    l, d = x.shape
    dh = d // n_heads
    n = np.array([rms(x[i], W["attn_norm"]) for i in range(l)])
    q, k, v = n @ W["wq"], n @ W["wk"], n @ W["wv"]
    out = np.zeros((l, d))
    for i in range(l):
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            cols = [j for j in range(l) if allowed(labels, kind, i, j)]
            if not cols:
                continue
            s = [float(q[i, sl] @ k[j, sl]) / math.sqrt(dh) for j in cols]
            m = max(s)
            e = [math.exp(z - m) for z in s]
            z = sum(e)
            for w, j in zip(e, cols):
                out[i, sl] += (w / z) * v[j, sl]
    return out @ W["wo"]


def ffn(x, W):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        u = rms(x[i], W["ffn_norm"]) @ W["w1"]
        a = u / (1.0 + np.exp(-u))
        out[i] = a @ W["w2"]
    return out


def forward(tokens, labels, params, kinds, n_heads):
    T = params.tensors
    x = np.array([T["tok_emb"][t] + T["pos_emb"][p] for p, t in enumerate(tokens)])
    for s, kind in enumerate(kinds):
        W = {k.split(".", 1)[1]: v for k, v in T.items() if k.startswith(f"layer{s}.")}
        x = x + attention(x, labels, kind, W, n_heads)
        x = x + ffn(x, W)
    return np.array([rms(x[i], T["final_norm"]) for i in range(x.shape[0])])
