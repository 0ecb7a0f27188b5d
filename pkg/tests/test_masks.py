import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iamrec import kernels
from iamrec.masks import (
    VARIANTS,
    build_mask,
    causal_mask,
    inter_item_mask,
    intra_item_mask,
    layer_kinds,
    mask_schedule,
    render_mask,
)
from iamrec.segmentation import DESCRIPTION, parse_labels

from conftest import random_labels


def oracle(labels, kind):
    """Direct double loop over the published predicates."""
    n = len(labels)
    out = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if kind == "causal" or labels[i] == DESCRIPTION:
                out[i, j] = j <= i
            elif labels[j] == DESCRIPTION:
                out[i, j] = False
            elif kind == "intra":
                out[i, j] = labels[i] == labels[j]
            else:
                out[i, j] = labels[i] != labels[j]
    return out


def rows(mask):
    return [set(np.flatnonzero(r).tolist()) for r in mask]


def test_causal_examples():
    assert rows(causal_mask(3)) == [{0}, {0, 1}, {0, 1, 2}]
    assert causal_mask(1).tolist() == [[True]]
    with pytest.raises(ValueError):
        causal_mask(0)


def test_causal_32_matches_predicate():
    m = causal_mask(32)
    assert all(m[i, j] == (i >= j) for i in range(32) for j in range(32))


def test_intra_example():
    r = rows(intra_item_mask(parse_labels("D,D,A,A,B")))
    assert r[2] == {2, 3} and r[3] == {2, 3} and r[4] == {4}
    assert r[1] == {0, 1}
    assert intra_item_mask([DESCRIPTION]).tolist() == [[True]]


def test_inter_example():
    r = rows(inter_item_mask(parse_labels("D,D,A,A,B")))
    assert r[2] == {4} and r[3] == {4} and r[4] == {2, 3}
    assert r[0] == {0}
    single = inter_item_mask(parse_labels("D,A,A"))
    assert not single[1].any() and not single[2].any()


@pytest.mark.parametrize("kind", ["causal", "intra", "inter"])
def test_builders_match_oracle(rng, kind):
    for _ in range(300):
        labels = random_labels(rng)
        assert np.array_equal(build_mask(labels, kind), oracle(labels, kind))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=8), st.integers(0, 3))
def test_partition_and_symmetry(sizes, prefix):
    labels = [DESCRIPTION] * prefix + [k for k, n in enumerate(sizes) for _ in range(n)] + [DESCRIPTION]
    lab = np.array(labels)
    intra, inter, causal = (build_mask(labels, k) for k in ("intra", "inter", "causal"))
    item = lab >= 0
    sub_a, sub_e = intra[np.ix_(item, item)], inter[np.ix_(item, item)]
    assert not (sub_a & sub_e).any()
    assert (sub_a | sub_e).all()
    assert np.array_equal(sub_a, sub_a.T) and np.array_equal(sub_e, sub_e.T)
    desc = ~item
    assert np.array_equal(intra[desc], causal[desc]) and np.array_equal(inter[desc], causal[desc])
    # block-diagonal intra: one block per span
    start = 0
    for n in sizes:
        assert sub_a[start : start + n, start : start + n].all()
        start += n
    assert sub_a.sum() == sum(n * n for n in sizes)


def test_item_rows_never_see_description(rng):
    for _ in range(100):
        labels = np.array(random_labels(rng))
        for kind in ("intra", "inter"):
            m = build_mask(labels, kind)
            assert not m[np.ix_(labels >= 0, labels < 0)].any()


def test_kernel_padding_blocked():
    seg = np.array([DESCRIPTION, 0, 0, -2, -2])  # -2 marks padding
    for kind in (kernels.CAUSAL, kernels.INTRA, kernels.INTER):
        m = kernels.build_mask(seg, kind)
        assert not m[3:].any() and not m[:, 3:].any()


def test_schedules():
    assert layer_kinds("iam", 2) == ["intra", "inter", "intra", "inter"]
    assert layer_kinds("reversed", 1) == ["inter", "intra"]
    assert layer_kinds("standard", 1) == ["causal", "causal"]
    assert layer_kinds("intra_only", 2) == ["intra"] * 4
    assert layer_kinds("inter_only", 3) == ["inter"] * 6
    for v in VARIANTS:
        assert len(layer_kinds(v, 3)) == 6
    with pytest.raises(ValueError):
        layer_kinds("bogus", 1)
    with pytest.raises(ValueError):
        layer_kinds("iam", 0)


def test_mask_schedule_builds_matrices():
    labels = parse_labels("D,A,A,B,D")
    sched = mask_schedule("iam", labels, 1)
    assert np.array_equal(sched[0], intra_item_mask(labels))
    assert np.array_equal(sched[1], inter_item_mask(labels))


def test_render():
    assert render_mask(causal_mask(3)) == "#..\n##.\n###"


def test_invalid_labels():
    with pytest.raises(ValueError):
        intra_item_mask([])
    with pytest.raises(ValueError):
        inter_item_mask([-5, 0])
    with pytest.raises(ValueError):
        build_mask([0], "diagonal")
