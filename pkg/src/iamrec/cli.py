"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ConfigError, GradCheckConfig, RunConfig, load_config
from .data import DataError, dataset_stats, synth_generate, write_interactions, write_titles
from .evaluation import evaluate
from .masks import VARIANTS, build_mask, causal_mask, render_mask
from .model import ModelConfig, NumericalError, init_params, make_batch
from .segmentation import DESCRIPTION, SegmentedSequence, parse_labels
from .training import gradient_check

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("iamrec")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _run_config(args) -> RunConfig:
    run = load_config(args.config)
    if args.out_dir:
        run = replace(run, out_dir=args.out_dir)
    for key in ("interactions", "titles"):
        path = getattr(run, key)
        if not path:
            raise DataError(f"config key '{key}' is required")
        if not Path(path).is_file():
            raise DataError(f"{key} file not found: {path}")
    return run


def cmd_gen_data(args) -> int:
    syn = synth_generate(
        n_items=args.n_items,
        n_users=args.n_users,
        n_clusters=args.n_clusters,
        stay_prob=args.stay_prob,
        min_len=args.min_len,
        max_len=args.max_len,
        seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(out / "interactions.tsv", syn.interactions)
    write_titles(out / "titles.tsv", syn.catalog)
    clusters = "".join(f"{item}\t{c}\n" for item, c in sorted(syn.cluster_of.items()))
    (out / "clusters.tsv").write_text(clusters, encoding="utf-8")
    stats = dataset_stats(syn.interactions)
    for k, v in stats.items():
        print(f"{k}\t{v:.4g}" if isinstance(v, float) else f"{k}\t{v}")
    return EXIT_OK


def _train_variant(run: RunConfig, data, variant: str, out: Path):
    from .pipeline import run_one

    outcomes = []
    for seed in run.seeds:
        o = run_one(run, data, variant, seed, out / variant / f"seed{seed}")
        for e in o.result.history:
            print(f"{variant}\tseed={seed}\t{e.line()}")
        print(o.report.to_json())
        outcomes.append(o)
    return outcomes


def cmd_train(args) -> int:
    from .pipeline import prepare_files

    run = _run_config(args)
    data = prepare_files(run)
    _train_variant(run, data, run.variant, Path(run.out_dir))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import encode_examples, prepare_files

    params, cfg, meta = load_checkpoint(args.checkpoint)
    run = RunConfig.from_dict(meta["run_config"])
    data = prepare_files(run)
    if len(data.vocab) != cfg.vocab_size or len(data.catalog) != cfg.n_items:
        raise DataError("dataset no longer matches the checkpoint's vocabulary/catalog")
    split = {"val": "validation"}.get(args.split, args.split)
    report = evaluate(params, cfg, data.examples[split])
    print(report.table())
    print(report.to_json())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"report_{split}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .pipeline import METRIC_COLUMNS, METRIC_HEADERS, prepare_files, run_one, summarize

    run = _run_config(args)
    data = prepare_files(run)
    out = Path(run.out_dir)
    outcomes, failures = [], []
    for variant in VARIANTS:
        for seed in run.seeds:
            try:
                outcomes.append(run_one(run, data, variant, seed, out / variant / f"seed{seed}"))
            except (NumericalError, ValueError) as exc:
                log.error("variant %s seed %s failed: %s", variant, seed, exc)
                failures.append((variant, seed, str(exc)))

    header = "variant\tseed\t" + "\t".join(METRIC_HEADERS)
    lines = [header]
    for o in outcomes:
        lines.append(f"{o.variant}\t{o.seed}\t" + "\t".join(f"{getattr(o.report, m):.6f}" for m in METRIC_COLUMNS))
    for variant, seed, msg in failures:
        lines.append(f"{variant}\t{seed}\t" + "\t".join(["failed"] * len(METRIC_COLUMNS)))
    mean_lines = [header.replace("seed", "n_seeds")]
    for variant, means in summarize(outcomes).items():
        n = sum(o.variant == variant for o in outcomes)
        mean_lines.append(f"{variant}\t{n}\t" + "\t".join(f"{means[m]:.6f}" for m in METRIC_COLUMNS))
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "ablation_mean.tsv").write_text("\n".join(mean_lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print()
    print("\n".join(mean_lines))
    return EXIT_NUMERIC if failures and not outcomes else EXIT_OK


def cmd_dump_mask(args) -> int:
    if args.kind == "causal" and args.labels is None:
        if args.len is None:
            raise UsageError("causal masks need --len or a label string")
        print(render_mask(causal_mask(args.len)))
        return EXIT_OK
    if args.labels is None:
        raise UsageError(f"--kind {args.kind} needs a label string such as D,D,A,A,B")
    try:
        labels = parse_labels(args.labels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(render_mask(build_mask(labels, args.kind)))
    return EXIT_OK


def _grad_batch(gc: GradCheckConfig, rng: np.random.Generator):
    """Random instructions of length ``seq_len`` (and shorter) with 2-token items."""
    seqs = []
    for b in range(gc.batch):
        length = gc.seq_len - 3 * (b % 2)
        labels = [DESCRIPTION, DESCRIPTION]
        k = 0
        while len(labels) < length - 1:
            labels += [k] * min(2, length - 1 - len(labels))
            k += 1
        labels.append(DESCRIPTION)
        ids = rng.integers(3, gc.vocab_size, size=length)
        seqs.append(SegmentedSequence(tuple(int(i) for i in ids), tuple(labels)))
    return make_batch(seqs), rng.integers(0, gc.n_items, size=gc.batch)


def run_grad_check(gc: GradCheckConfig, corrupt: bool = False) -> list[tuple[str, float]]:
    from .model import LoraConfig

    results = []
    for variant in gc.variant_list:
        rng = np.random.default_rng(gc.seed)
        batch, labels = _grad_batch(gc, rng)
        cfg = ModelConfig(
            vocab_size=gc.vocab_size, n_items=gc.n_items, d=gc.d, n_heads=gc.n_heads,
            n_blocks=gc.n_blocks, ffn_mult=gc.ffn_mult, max_len=gc.seq_len, seed=gc.seed,
            variant=variant, lora=LoraConfig(gc.lora_rank, 2.0 * gc.lora_rank, 0.0) if gc.lora_rank else None,
        )
        params = init_params(cfg)
        check = gradient_check(params, cfg, batch, labels, gc.n_coords, gc.eps, gc.seed, corrupt=corrupt)
        results.append((variant, check.max_rel_error))
    return results


def cmd_grad_check(args) -> int:
    gc = load_config(args.config, GradCheckConfig) if args.config else GradCheckConfig()
    ok = True
    for variant, err in run_grad_check(gc, corrupt=args.corrupt):
        passed = err < gc.tolerance
        ok &= passed
        print(f"{variant}\tmax_rel_error={err:.3e}\t{'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iamrec", description="Item-aware attention for sequential recommendation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic planted-cluster dataset")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-items", type=int, default=200)
    g.add_argument("--n-users", type=int, default=2000)
    g.add_argument("--n-clusters", type=int, default=10)
    g.add_argument("--stay-prob", type=float, default=0.9)
    g.add_argument("--min-len", type=int, default=6)
    g.add_argument("--max-len", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one variant for every configured seed")
    t.add_argument("config")
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with full ranking")
    e.add_argument("checkpoint")
    e.add_argument("--split", choices=("train", "validation", "val", "test"), default="test")
    e.add_argument("--out-dir")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare all five mask variants")
    a.add_argument("config")
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("dump-mask", help="print an attention mask as '#'/'.' text")
    d.add_argument("labels", nargs="?", help="comma-separated labels, D = description, e.g. D,D,A,A,B")
    d.add_argument("--kind", choices=("causal", "intra", "inter"), required=True)
    d.add_argument("--len", type=int)
    d.set_defaults(func=cmd_dump_mask)

    c = sub.add_parser("grad-check", help="finite-difference check of the backward pass")
    c.add_argument("config", nargs="?")
    c.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"iamrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"iamrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"iamrec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"iamrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
