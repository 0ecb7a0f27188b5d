"""Instruction construction, tokenization and per-token segment labels.

A label is an int: ``DESCRIPTION`` (-1) for task-description tokens, or the
item's position ``k >= 0`` within the instruction for title tokens.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

DESCRIPTION = -1

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SUFFIX_TOKEN = "<next>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, SUFFIX_TOKEN)

DEFAULT_PREFIX = (
    "Please predict the next item a user would purchase, "
    "given the following purchased items:"
)

_PUNCT = re.compile(r"[^\w\s]|_")


def normalize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Vocabulary:
    token_strings: tuple[str, ...]
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.token_strings[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        lookup = {tok: i for i, tok in enumerate(self.token_strings)}
        if len(lookup) != len(self.token_strings):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "id_of", lookup)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def suffix_id(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.token_strings)

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.id_of.get(tok, unk) for tok in normalize(text)]

    def save(self, path) -> None:
        lines = [f"{tok}\t{i}\n" for i, tok in enumerate(self.token_strings)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, idx = line.rsplit("\t", 1)
            pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: token ids are not dense")
        return cls(tuple(tok for _, tok in pairs))


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Word-level vocabulary; tokens below ``min_count`` fall back to UNK."""
    counts: Counter[str] = Counter()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        counts.update(normalize(text))
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(tok for tok, c in counts.items() if c >= min_count)
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


@dataclass(frozen=True)
class SegmentedSequence:
    token_ids: tuple[int, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.token_ids) != len(self.labels):
            raise ValueError("token_ids and labels differ in length")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def n_items(self) -> int:
        return 1 + max((lab for lab in self.labels), default=-1)


def tokenize_instruction(
    prefix: str,
    titles: Sequence[str],
    vocab: Vocabulary,
    max_len: int | None = None,
) -> SegmentedSequence:
    """Lay out ``[prefix][title 0]...[title t-1][suffix marker]`` with labels.

    Oldest titles are dropped whole while the sequence exceeds ``max_len``;
    the prefix is never truncated.
    """
    if not titles:
        raise ValueError("an instruction needs at least one item title")
    prefix_ids = vocab.encode(prefix)
    title_ids = [vocab.encode(t) or [vocab.unk_id] for t in titles]

    start = 0
    if max_len is not None:
        total = len(prefix_ids) + sum(len(t) for t in title_ids) + 1
        while total > max_len and start < len(title_ids) - 1:
            total -= len(title_ids[start])
            start += 1
        if total > max_len:
            raise ValueError(
                f"instruction of length {total} exceeds max_len={max_len} "
                "even with a single item"
            )

    ids = list(prefix_ids)
    labels = [DESCRIPTION] * len(prefix_ids)
    for k, toks in enumerate(title_ids[start:]):
        ids.extend(toks)
        labels.extend([k] * len(toks))
    ids.append(vocab.suffix_id)
    labels.append(DESCRIPTION)
    return SegmentedSequence(tuple(ids), tuple(labels))


def item_spans(seq: SegmentedSequence | Sequence[int]) -> list[tuple[int, int, int]]:
    """``(item_position, start, end)`` per item, ``end`` exclusive.

    Raises ``ValueError`` if an item's labels are not contiguous or item
    positions are not 0, 1, 2, ... in order.
    """
    labels = seq.labels if isinstance(seq, SegmentedSequence) else seq
    spans: list[tuple[int, int, int]] = []
    i, n = 0, len(labels)
    while i < n:
        lab = labels[i]
        if lab == DESCRIPTION:
            i += 1
            continue
        if lab != len(spans):
            raise ValueError(f"item label {lab} at position {i} breaks ordering/contiguity")
        j = i
        while j < n and labels[j] == lab:
            j += 1
        spans.append((lab, i, j))
        i = j
    return spans


def parse_labels(spec: str) -> list[int]:
    """Parse a compact label string such as ``"D,D,A,A,B"``.

    ``D`` marks description tokens; any other symbol is an item, numbered
    in order of first appearance.
    """
    labels = []
    items: dict[str, int] = {}
    for sym in (s.strip() for s in spec.split(",")):
        if not sym:
            raise ValueError(f"empty label in {spec!r}")
        if sym == "D":
            labels.append(DESCRIPTION)
        else:
            labels.append(items.setdefault(sym, len(items)))
    return labels
