import numpy as np
import pytest

from iamrec.segmentation import DESCRIPTION, SegmentedSequence


def random_labels(rng, max_len=32, max_items=8, min_items=1):
    """Random valid layout: description prefix, contiguous items, description suffix."""
    n_items = int(rng.integers(min_items, max_items + 1))
    prefix = int(rng.integers(0, 4))
    budget = max_len - prefix - 1
    lengths = np.ones(n_items, dtype=int)
    extra = budget - n_items
    if extra > 0:
        lengths += rng.multinomial(int(rng.integers(0, extra + 1)), np.ones(n_items) / n_items)
    labels = [DESCRIPTION] * prefix
    for k, n in enumerate(lengths):
        labels += [k] * int(n)
    return labels + [DESCRIPTION]


def random_sequence(rng, vocab_size, **kw):
    labels = random_labels(rng, **kw)
    ids = rng.integers(3, vocab_size, size=len(labels))
    return SegmentedSequence(tuple(int(i) for i in ids), tuple(labels))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
