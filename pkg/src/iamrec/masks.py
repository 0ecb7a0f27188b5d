"""Attention masks: causal, intra-item, inter-item, and the per-variant schedule."""

from __future__ import annotations

from enum import Enum
from typing import Sequence

import numpy as np

from . import kernels
from .segmentation import DESCRIPTION


class Variant(str, Enum):
    STANDARD = "standard"
    INTRA_ONLY = "intra_only"
    INTER_ONLY = "inter_only"
    REVERSED = "reversed"
    IAM = "iam"


# ablation table order
VARIANTS = tuple(v.value for v in Variant)

MASK_KINDS = {"causal": kernels.CAUSAL, "intra": kernels.INTRA, "inter": kernels.INTER}

_PATTERNS = {
    Variant.IAM: ("intra", "inter"),
    Variant.REVERSED: ("inter", "intra"),
    Variant.INTRA_ONLY: ("intra", "intra"),
    Variant.INTER_ONLY: ("inter", "inter"),
    Variant.STANDARD: ("causal", "causal"),
}


def _check_labels(labels: Sequence[int]) -> np.ndarray:
    seg = np.asarray(labels, dtype=np.int64)
    if seg.ndim != 1 or seg.size == 0:
        raise ValueError("labels must be a non-empty 1-D sequence")
    if (seg < DESCRIPTION).any():
        raise ValueError("labels must be DESCRIPTION (-1) or item positions >= 0")
    return seg


def causal_mask(length: int) -> np.ndarray:
    if length < 1:
        raise ValueError("mask length must be >= 1")
    return np.tril(np.ones((length, length), dtype=bool))


def intra_item_mask(labels: Sequence[int]) -> np.ndarray:
    """Description rows stay causal; item rows see only their own item, both directions."""
    return kernels.build_mask(_check_labels(labels), kernels.INTRA)


def inter_item_mask(labels: Sequence[int]) -> np.ndarray:
    """Description rows stay causal; item rows see only tokens of other items.

    With a single item every item row is fully masked.
    """
    return kernels.build_mask(_check_labels(labels), kernels.INTER)


def layer_kinds(variant: Variant | str, n_blocks: int) -> list[str]:
    """Mask kind for each attention sublayer; always ``2 * n_blocks`` entries."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    try:
        pattern = _PATTERNS[Variant(variant)]
    except ValueError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}") from None
    return list(pattern) * n_blocks


def build_mask(labels: Sequence[int], kind: str) -> np.ndarray:
    if kind == "causal":
        return causal_mask(len(labels))
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}")
    return kernels.build_mask(_check_labels(labels), MASK_KINDS[kind])


def mask_schedule(variant: Variant | str, labels: Sequence[int], n_blocks: int) -> list[np.ndarray]:
    kinds = layer_kinds(variant, n_blocks)
    cache = {k: build_mask(labels, k) for k in set(kinds)}
    return [cache[k] for k in kinds]


def render_mask(mask: np.ndarray) -> str:
    return "\n".join("".join("#" if v else "." for v in row) for row in np.asarray(mask))
