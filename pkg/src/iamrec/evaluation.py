"""Full-ranking evaluation: Prec@k and NDCG@k for k in {5, 10}."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

KS = (5, 10)


def full_rank(y) -> np.ndarray:
    """Item indices by descending score; ties go to the smaller index."""
    y = np.asarray(y, dtype=np.float64)
    return np.argsort(-y, kind="stable")


def gt_ranks(scores, gt) -> np.ndarray:
    """1-based rank of each ground-truth item under the ``full_rank`` ordering.

    Equivalent to locating ``gt`` in ``full_rank(y)`` without sorting.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    target = scores[np.arange(len(gt)), gt][:, None]
    higher = (scores > target).sum(axis=1)
    idx = np.arange(scores.shape[1])[None, :]
    tied_before = ((scores == target) & (idx < gt[:, None])).sum(axis=1)
    return higher + tied_before + 1


def precision_at_k(ranked, gt: int, k: int) -> float:
    ranked = np.asarray(ranked)
    if not 1 <= k <= len(ranked):
        raise ValueError(f"k={k} must be in [1, {len(ranked)}]")
    return 1.0 if gt in ranked[:k] else 0.0


def ndcg_at_k(ranked, gt: int, k: int) -> float:
    """Single relevant item, so the ideal DCG is 1."""
    ranked = np.asarray(ranked)
    if not 1 <= k <= len(ranked):
        raise ValueError(f"k={k} must be in [1, {len(ranked)}]")
    hits = np.flatnonzero(ranked[:k] == gt)
    return 1.0 / math.log2(hits[0] + 2) if hits.size else 0.0


def metrics_from_ranks(ranks, ks: Sequence[int] = KS) -> dict[str, float]:
    ranks = np.asarray(ranks)
    out = {}
    for k in ks:
        hit = ranks <= k
        out[f"prec{k}"] = float(hit.mean())
        out[f"ndcg{k}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    return out


@dataclass
class RankingReport:
    variant: str
    seed: int
    n_examples: int
    prec5: float
    ndcg5: float
    prec10: float
    ndcg10: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def table(self) -> str:
        head = f"{'variant':<12}{'seed':>6}{'n':>7}{'Prec@5':>10}{'NDCG@5':>10}{'Prec@10':>10}{'NDCG@10':>10}"
        row = (
            f"{self.variant:<12}{self.seed:>6}{self.n_examples:>7}"
            f"{self.prec5:>10.4f}{self.ndcg5:>10.4f}{self.prec10:>10.4f}{self.ndcg10:>10.4f}"
        )
        return head + "\n" + row


def report_from_scores(scores, gt, variant: str = "", seed: int = 0) -> RankingReport:
    """Metrics for precomputed score rows (one per example)."""
    gt = np.asarray(gt).reshape(-1)
    if gt.size == 0:
        raise ValueError("cannot evaluate an empty split")
    m = metrics_from_ranks(gt_ranks(scores, gt))
    return RankingReport(variant, seed, int(gt.size), m["prec5"], m["ndcg5"], m["prec10"], m["ndcg10"])


def predict_scores(params, config, examples, batch_size: int = 256) -> np.ndarray:
    from .model import forward, item_logits
    from .training import iter_batches

    rows = []
    for batch, _ in iter_batches(examples, batch_size):
        hidden, _ = forward(params, config, batch)
        rows.append(item_logits(hidden, params, batch.readout))
    return np.concatenate(rows)


def evaluate(params, config, examples, batch_size: int = 256) -> RankingReport:
    """Forward every example, rank the whole catalog, average the metrics.

    Ranks come from the adapter logits; sigmoid is strictly increasing so the
    ordering is the same as for the scores, without saturation ties.
    """
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    logits = predict_scores(params, config, examples, batch_size)
    labels = np.array([e.label for e in examples])
    return report_from_scores(logits, labels, config.variant, config.seed)
