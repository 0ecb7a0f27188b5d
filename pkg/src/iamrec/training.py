"""Loss, reverse-mode gradients, Adam, and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import (
    Batch,
    ForwardTrace,
    ModelConfig,
    ModelParameters,
    NumericalError,
    _layer,
    attention_backward,
    ffn_backward,
    forward,
    init_params,
    item_logits,
    make_batch,
    rmsnorm_backward,
    score_items,
)

log = logging.getLogger(__name__)

CLAMP = 1e-12


@dataclass
class LossValue:
    """Summed per-item BCE, averaged over the batch."""

    loss: float
    per_example: np.ndarray
    y: np.ndarray
    gt: np.ndarray


def bce_loss(y, gt) -> LossValue:
    """``-[log y_gt + sum_{i != gt} log(1 - y_i)]`` per example, mean over the batch.

    ``y`` is a score vector (n,) or a batch (B, n); ``gt`` an index or (B,) indices.
    """
    y = np.asarray(y, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.int64)
    y2 = y[None] if y.ndim == 1 else y
    gt1 = gt.reshape(-1)
    if gt1.shape[0] != y2.shape[0]:
        raise ValueError("one ground-truth index per score vector is required")
    n = y2.shape[1]
    if (gt1 < 0).any() or (gt1 >= n).any():
        raise ValueError(f"ground-truth index out of range [0, {n})")
    yc = np.clip(y2, CLAMP, 1.0 - CLAMP)
    rows = np.arange(y2.shape[0])
    neg = np.log1p(-yc)
    per = -(neg.sum(axis=1) - neg[rows, gt1] + np.log(yc[rows, gt1]))
    return LossValue(float(per.mean()), per, y2, gt1)


def loss_gradient(loss: LossValue) -> np.ndarray:
    """d loss / d logits for sigmoid scores; zero where the clamp is active."""
    y, gt = loss.y, loss.gt
    target = np.zeros_like(y)
    target[np.arange(y.shape[0]), gt] = 1.0
    active = (y > CLAMP) & (y < 1.0 - CLAMP)
    return (y - target) * active / y.shape[0]


def backward(params: ModelParameters, trace: ForwardTrace, loss: LossValue, upstream: float = 1.0) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``upstream * loss.loss``; frozen tensors get zeros."""
    T = params.tensors
    frozen = params.frozen
    batch = trace.batch
    d_logits = loss_gradient(loss) * upstream
    if d_logits.shape != (len(batch), T["adapter"].shape[1]):
        raise ValueError(f"loss gradient shape {d_logits.shape} does not match trace")

    grads: dict[str, np.ndarray] = {}
    if "adapter" not in frozen:
        grads["adapter"] = trace.readout_hidden.T @ d_logits
    dx = np.zeros_like(trace.hidden_rows)
    np.add.at(dx, batch.readout_rows, d_logits @ T["adapter"].T)
    dx, dgain = rmsnorm_backward(dx, T["final_norm"], trace.final_norm)
    if "final_norm" not in frozen:
        grads["final_norm"] = dgain

    for s in reversed(range(len(trace.layers))):
        lt = trace.layers[s]
        layer = _layer(params, s)
        prefix = f"layer{s}."

        def need(name, prefix=prefix):
            return prefix + name not in frozen

        dbranch, g = ffn_backward(dx, layer, lt.ffn, need)
        dx = dx + dbranch
        grads.update({prefix + k: v for k, v in g.items()})
        dbranch, g = attention_backward(dx, layer, lt.attn, params.lora, need)
        dx = dx + dbranch
        grads.update({prefix + k: v for k, v in g.items()})

    if "tok_emb" not in frozen:
        g_tok = np.zeros_like(T["tok_emb"])
        np.add.at(g_tok, batch.row_tokens, dx)
        grads["tok_emb"] = g_tok
    if "pos_emb" not in frozen:
        g_pos = np.zeros_like(T["pos_emb"])
        np.add.at(g_pos, batch.row_positions, dx)
        grads["pos_emb"] = g_pos

    for name in T:
        if name not in grads:
            grads[name] = np.zeros_like(T[name])
    return grads


def loss_and_grads(params, config, batch, labels, rng=None):
    hidden, trace = forward(params, config, batch, rng=rng)
    loss = bce_loss(score_items(hidden, params, batch.readout), labels)
    return loss, backward(params, trace, loss)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParameters, grads: dict[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update of every trainable tensor, in place."""
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name in params.trainable():
        g = grads[name]
        p = params.tensors[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheck:
    max_rel_error: float
    n_coords: int
    worst: tuple[str, tuple[int, ...]] | None


GRAD_FLOOR = 1e-3


def relative_error(analytic: float, numeric: float, floor: float = GRAD_FLOOR) -> float:
    """``|a - n| / max(|a|, |n|, floor)``.

    Central differences at eps=1e-3 carry ~1e-7 absolute truncation error, so
    below ``floor`` the check degrades gracefully to an absolute one.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    params: ModelParameters,
    config: ModelConfig,
    batch: Batch,
    labels,
    n_coords: int = 200,
    eps: float = 1e-3,
    seed: int = 0,
    corrupt: bool = False,
) -> GradCheck:
    """Compare ``backward`` against central differences on random coordinates.

    Coordinates are drawn among entries with nonzero analytic gradient;
    tensors are visited round-robin so every parameter group is covered.
    """
    labels = np.asarray(labels)
    _, grads = loss_and_grads(params, config, batch, labels)
    if corrupt:
        grads = {k: v * 1.01 + 1e-3 for k, v in grads.items()}

    def loss_at():
        hidden, _ = forward(params, config, batch)
        return bce_loss(score_items(hidden, params, batch.readout), labels).loss

    rng = np.random.default_rng(seed)
    names = [n for n in params.trainable() if np.any(grads[n])]
    worst_err, worst = 0.0, None
    for c in range(n_coords):
        name = names[c % len(names)]
        g = grads[name]
        flat = np.flatnonzero(g)
        idx = np.unravel_index(flat[rng.integers(flat.size)], g.shape)
        p = params.tensors[name]
        orig = p[idx]
        p[idx] = orig + eps
        up = loss_at()
        p[idx] = orig - eps
        down = loss_at()
        p[idx] = orig
        err = relative_error(g[idx], (up - down) / (2 * eps))
        if err > worst_err:
            worst_err, worst = err, (name, tuple(int(i) for i in idx))
    return GradCheck(worst_err, n_coords, worst)


# ---------------------------------------------------------------- training loop


@dataclass(frozen=True)
class Example:
    """One (history -> next item) training or evaluation case."""

    seq: object  # SegmentedSequence
    label: int
    user_id: str = ""


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_prec10: float
    val_ndcg10: float
    wall_seconds: float

    def line(self) -> str:
        return (
            f"{self.epoch}\t{self.train_loss:.10g}\t{self.val_prec10:.10g}"
            f"\t{self.val_ndcg10:.10g}\t{self.wall_seconds:.3f}"
        )


@dataclass
class TrainResult:
    params: ModelParameters
    history: list[EpochLog]
    best_epoch: int
    final_params: ModelParameters


def iter_batches(examples: Sequence[Example], batch_size: int, order=None):
    idx = np.arange(len(examples)) if order is None else order
    for start in range(0, len(idx), batch_size):
        chunk = [examples[i] for i in idx[start : start + batch_size]]
        yield make_batch([e.seq for e in chunk]), np.array([e.label for e in chunk])


def train(
    config: ModelConfig,
    train_examples: Sequence[Example],
    val_examples: Sequence[Example] = (),
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-3,
    params: ModelParameters | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam on BCE; keeps the epoch with the best validation Prec@10."""
    from .evaluation import evaluate

    if not train_examples:
        raise ValueError("training split is empty")
    params = init_params(config) if params is None else params
    state = AdamState(lr=lr)
    rng = np.random.default_rng(config.seed + 1)
    dropout_rng = np.random.default_rng(config.seed + 2) if params.lora is not None else None

    history: list[EpochLog] = []
    best, best_epoch, best_score = params.copy(), 0, -1.0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_examples))
        total = 0.0
        for b, (batch, labels) in enumerate(iter_batches(train_examples, batch_size, order)):
            loss, grads = loss_and_grads(params, config, batch, labels, rng=dropout_rng)
            if not np.isfinite(loss.loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            total += float(loss.per_example.sum())
            adam_step(params, grads, state)
        if val_examples:
            report = evaluate(params, config, val_examples)
            p10, n10 = report.prec10, report.ndcg10
        else:
            p10 = n10 = float("nan")
        entry = EpochLog(epoch, total / len(train_examples), p10, n10, time.perf_counter() - t0)
        history.append(entry)
        log.info("epoch %s", entry.line())
        if on_epoch is not None:
            on_epoch(entry)
        score = p10 if val_examples else float(epoch)
        if score > best_score:
            best, best_epoch, best_score = params.copy(), epoch, score
    return TrainResult(best, history, best_epoch, params)


__all__ = [
    "AdamState", "Example", "EpochLog", "GradCheck", "LossValue", "TrainResult",
    "adam_step", "backward", "bce_loss", "gradient_check", "item_logits", "loss_and_grads",
    "loss_gradient", "train",
]
