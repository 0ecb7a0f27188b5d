"""Glue from interaction files to trained models and test reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import (
    Catalog,
    DataError,
    DatasetSplits,
    Interaction,
    SplitExample,
    build_sequences,
    chronological_split,
    dataset_stats,
    five_core_filter,
    ingest,
)
from .evaluation import RankingReport, evaluate
from .masks import VARIANTS
from .model import LoraConfig, ModelConfig
from .segmentation import DEFAULT_PREFIX, Vocabulary, build_vocab, tokenize_instruction
from .training import Example, TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    catalog: Catalog
    vocab: Vocabulary
    splits: DatasetSplits
    examples: dict[str, list[Example]]
    stats: dict


def encode_examples(
    split: Sequence[SplitExample],
    catalog: Catalog,
    vocab: Vocabulary,
    max_len: int,
    prefix: str = DEFAULT_PREFIX,
) -> list[Example]:
    out = []
    for ex in split:
        titles = [catalog.title(i) for i in ex.history]
        seq = tokenize_instruction(prefix, titles, vocab, max_len)
        out.append(Example(seq, ex.label, ex.user_id))
    return out


def prepare_interactions(
    interactions: list[Interaction],
    catalog: Catalog,
    *,
    five_core: bool = True,
    min_count: int = 1,
    max_len: int = 256,
    prefix: str = DEFAULT_PREFIX,
) -> PreparedData:
    rows = five_core_filter(interactions) if five_core else list(interactions)
    if not rows:
        raise DataError("no interactions left after 5-core filtering")
    catalog = catalog.restrict(r.item_id for r in rows)
    splits = chronological_split(build_sequences(rows), catalog)
    vocab = build_vocab([prefix] + [catalog.title(i) for i in range(len(catalog))], min_count)
    examples = {
        name: encode_examples(splits[name], catalog, vocab, max_len, prefix)
        for name in ("train", "validation", "test")
    }
    stats = dataset_stats(rows)
    stats.update({f"n_{k}": len(v) for k, v in examples.items()})
    return PreparedData(catalog, vocab, splits, examples, stats)


def prepare_files(run: RunConfig) -> PreparedData:
    interactions, catalog, report = ingest(run.interactions, run.titles)
    if report.duplicates:
        log.info("dropped %d duplicate interactions", report.duplicates)
    return prepare_interactions(
        interactions, catalog, five_core=run.five_core, min_count=run.min_count, max_len=run.max_len
    )


def model_config(run: RunConfig, data: PreparedData, variant: str, seed: int) -> ModelConfig:
    lora = None
    if run.lora_rank:
        lora = LoraConfig(run.lora_rank, run.lora_alpha, run.lora_dropout)
    return ModelConfig(
        vocab_size=len(data.vocab),
        n_items=len(data.catalog),
        d=run.d,
        n_heads=run.n_heads,
        n_blocks=run.n_blocks,
        ffn_mult=run.ffn_mult,
        max_len=run.max_len,
        seed=seed,
        variant=variant,
        lora=lora,
    )


@dataclass
class RunOutcome:
    variant: str
    seed: int
    result: TrainResult
    report: RankingReport


def run_one(run: RunConfig, data: PreparedData, variant: str, seed: int, out_dir: Path | None = None) -> RunOutcome:
    """Train one (variant, seed), evaluate the best-validation model on test."""
    cfg = model_config(run, data, variant, seed)
    log_lines: list[str] = []
    result = train(
        cfg,
        data.examples["train"],
        data.examples["validation"],
        epochs=run.epochs,
        batch_size=run.batch_size,
        lr=run.lr,
        on_epoch=lambda e: log_lines.append(e.line()),
    )
    report = evaluate(result.params, cfg, data.examples["test"])
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"run_config": run.to_dict(), "best_epoch": result.best_epoch}
        save_checkpoint(out_dir / "checkpoint.bin", result.params, cfg, meta)
        header = "epoch\ttrain_loss\tval_Prec@10\tval_NDCG@10\twall_seconds\n"
        (out_dir / "train.log").write_text(header + "\n".join(log_lines) + "\n", encoding="utf-8")
        (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return RunOutcome(variant, seed, result, report)


METRIC_COLUMNS = ("prec5", "ndcg5", "prec10", "ndcg10")
METRIC_HEADERS = ("Prec@5", "NDCG@5", "Prec@10", "NDCG@10")


def summarize(outcomes: Sequence[RunOutcome], variants: Sequence[str] = VARIANTS) -> dict[str, dict[str, float]]:
    """Per-variant mean of each metric over seeds."""
    means = {}
    for v in variants:
        rows = [o.report for o in outcomes if o.variant == v]
        if rows:
            means[v] = {m: float(np.mean([getattr(r, m) for r in rows])) for m in METRIC_COLUMNS}
    return means
