"""Interaction ingestion, 5-core filtering, chronological splits, synthetic data."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Unreadable or empty input data."""


class Interaction(NamedTuple):
    user_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class Catalog:
    """Items with titles and a dense index; ``item_ids[i]`` has index ``i``."""

    item_ids: tuple[str, ...]
    titles: dict[str, str]

    def __post_init__(self):
        object.__setattr__(self, "_index", {item: i for i, item in enumerate(self.item_ids)})
        if len(self._index) != len(self.item_ids):
            raise ValueError("duplicate item id in catalog")

    def __len__(self) -> int:
        return len(self.item_ids)

    def index(self, item_id: str) -> int:
        return self._index[item_id]

    def title(self, index: int) -> str:
        return self.titles.get(self.item_ids[index], "")

    def restrict(self, item_ids: Iterable[str]) -> "Catalog":
        keep = sorted(set(item_ids))
        return Catalog(tuple(keep), {i: self.titles.get(i, "") for i in keep})


@dataclass(frozen=True)
class SplitExample:
    user_id: str
    history: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class DatasetSplits:
    train: tuple[SplitExample, ...]
    validation: tuple[SplitExample, ...]
    test: tuple[SplitExample, ...]

    def __getitem__(self, name: str) -> tuple[SplitExample, ...]:
        if name in ("val", "valid"):
            name = "validation"
        if name not in ("train", "validation", "test"):
            raise KeyError(name)
        return getattr(self, name)


class IngestReport(NamedTuple):
    malformed_interactions: int
    malformed_titles: int
    duplicates: int


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def ingest(interactions_file, titles_file) -> tuple[list[Interaction], Catalog, IngestReport]:
    """Parse ``user<TAB>item<TAB>timestamp`` and ``item<TAB>title`` files.

    Malformed lines are skipped and counted; exact duplicate interactions are
    dropped.  Items without a title get an empty one.
    """
    seen: set[Interaction] = set()
    interactions: list[Interaction] = []
    bad = dups = 0
    for line in _read_lines(interactions_file):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not parts[0] or not parts[1]:
            bad += 1
            continue
        try:
            row = Interaction(parts[0], parts[1], int(parts[2]))
        except ValueError:
            bad += 1
            continue
        if row in seen:
            dups += 1
            continue
        seen.add(row)
        interactions.append(row)
    if not interactions:
        raise DataError(f"{interactions_file}: no valid interactions")

    titles: dict[str, str] = {}
    bad_titles = 0
    for line in _read_lines(titles_file):
        if not line.strip():
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2 or not parts[0]:
            bad_titles += 1
            continue
        titles[parts[0]] = parts[1]

    report = IngestReport(bad, bad_titles, dups)
    if bad or bad_titles:
        log.warning("skipped %d malformed interaction lines, %d malformed title lines", bad, bad_titles)
    catalog = Catalog(tuple(sorted({r.item_id for r in interactions})), titles)
    return interactions, catalog, report


def five_core_filter(interactions: list[Interaction], k: int = 5) -> list[Interaction]:
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    rows = list(interactions)
    while True:
        users = Counter(r.user_id for r in rows)
        items = Counter(r.item_id for r in rows)
        kept = [r for r in rows if users[r.user_id] >= k and items[r.item_id] >= k]
        if len(kept) == len(rows):
            return kept
        rows = kept


def build_sequences(interactions: Iterable[Interaction]) -> dict[str, list[Interaction]]:
    """Per-user interactions ordered by (timestamp, item_id); users sorted by id."""
    per_user: dict[str, list[Interaction]] = defaultdict(list)
    for r in interactions:
        per_user[r.user_id].append(r)
    return {u: sorted(rows, key=lambda r: (r.timestamp, r.item_id)) for u, rows in sorted(per_user.items())}


def chronological_split(
    sequences: dict[str, list[Interaction]],
    catalog: Catalog,
    ratios: tuple[int, int, int] = (8, 1, 1),
) -> DatasetSplits:
    """Split users by final-interaction time: earliest to train, latest to test.

    Validation and test sizes are floored; the remainder goes to train.  Each
    user yields one example whose label is their last item.
    """
    users = [u for u, rows in sequences.items() if len(rows) >= 2]
    if len(users) < len(sequences):
        log.warning("dropped %d users with fewer than 2 interactions", len(sequences) - len(users))
    if len(users) < 3:
        raise DataError(f"need at least 3 users to split, got {len(users)}")
    users.sort(key=lambda u: (sequences[u][-1].timestamp, u))
    total = sum(ratios)
    n = len(users)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    n_train = n - n_val - n_test

    def example(u):
        idx = [catalog.index(r.item_id) for r in sequences[u]]
        return SplitExample(u, tuple(idx[:-1]), idx[-1])

    ex = [example(u) for u in users]
    return DatasetSplits(tuple(ex[:n_train]), tuple(ex[n_train : n_train + n_val]), tuple(ex[n_train + n_val :]))


# ---------------------------------------------------------------- synthetic data

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


def _pseudo_words(n: int, rng) -> list[str]:
    syllables = [c + v for c in _ONSETS for v in _VOWELS]
    words: set[str] = set()
    while len(words) < n:
        words.add("".join(rng.choice(syllables, size=3)))
    return sorted(words)


class SyntheticData(NamedTuple):
    interactions: list[Interaction]
    catalog: Catalog
    cluster_of: dict[str, int]


def synth_generate(
    n_items: int = 200,
    n_users: int = 2000,
    n_clusters: int = 10,
    stay_prob: float = 0.9,
    min_len: int = 6,
    max_len: int = 6,
    seed: int = 0,
    n_words: int | None = None,
) -> SyntheticData:
    """Users walk a cluster Markov chain over items.

    Each step stays in the current cluster with probability ``stay_prob``
    (uniform over the cluster's other items) or jumps to a uniformly chosen
    other cluster.  Titles are random pseudo-word pairs drawn before the
    cluster assignment, so they carry no information about clusters.
    """
    if n_clusters < 1 or n_items % n_clusters:
        raise ValueError(f"n_items={n_items} is not divisible by n_clusters={n_clusters}")
    if not 0.0 <= stay_prob <= 1.0:
        raise ValueError("stay_prob must be in [0, 1]")
    if n_clusters == 1 and stay_prob < 1.0:
        raise ValueError("leaving a cluster needs at least two clusters")
    if n_items // n_clusters == 1 and stay_prob > 0.0:
        raise ValueError("staying in a cluster needs at least two items per cluster")
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    rng = np.random.default_rng(seed)

    item_ids = [f"i{k:05d}" for k in range(n_items)]
    n_words = n_words or max(4, n_items // 2)
    words = _pseudo_words(n_words, rng)
    pairs: set[tuple[int, int]] = set()
    while len(pairs) < n_items:
        a, b = rng.choice(n_words, size=2, replace=False)
        pairs.add((int(a), int(b)))
    pair_list = sorted(pairs)
    rng.shuffle(pair_list)
    titles = {item: f"{words[a]} {words[b]}" for item, (a, b) in zip(item_ids, pair_list)}

    perm = rng.permutation(n_items)
    size = n_items // n_clusters
    cluster_of = {item_ids[perm[k]]: k // size for k in range(n_items)}
    members = [[item_ids[perm[c * size + j]] for j in range(size)] for c in range(n_clusters)]

    interactions: list[Interaction] = []
    clock = 0
    for u in range(n_users):
        user = f"u{u:05d}"
        length = int(rng.integers(min_len, max_len + 1))
        item = item_ids[int(rng.integers(n_items))]
        for step in range(length):
            if step:
                c = cluster_of[item]
                if rng.random() < stay_prob:
                    pool = [x for x in members[c] if x != item]
                else:
                    other = int(rng.integers(n_clusters - 1))
                    pool = members[other if other < c else other + 1]
                item = pool[int(rng.integers(len(pool)))]
            interactions.append(Interaction(user, item, clock))
            clock += 1
    catalog = Catalog(tuple(item_ids), titles)
    return SyntheticData(interactions, catalog, cluster_of)


def write_interactions(path, interactions: Iterable[Interaction]) -> None:
    lines = [f"{r.user_id}\t{r.item_id}\t{r.timestamp}\n" for r in interactions]
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_titles(path, catalog: Catalog) -> None:
    lines = [f"{item}\t{catalog.titles.get(item, '')}\n" for item in catalog.item_ids]
    Path(path).write_text("".join(lines), encoding="utf-8")


def dataset_stats(interactions: list[Interaction]) -> dict:
    users = {r.user_id for r in interactions}
    items = {r.item_id for r in interactions}
    return {
        "n_items": len(items),
        "n_users": len(users),
        "n_interactions": len(interactions),
        "avg_length": len(interactions) / len(users) if users else 0.0,
    }
