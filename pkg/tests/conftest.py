"""Shared fixtures and batch builders for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tbpslab.losses import EmbeddingBatch, build_labels
from tbpslab.numerics import Rng, l2_normalize_rows


def random_raw_pair(rng: Rng, n: int, d: int, repeat_ids: bool = True):
    """Raw (pre-normalization) feature pair plus paired identity ids.

    With repeat_ids, some identities occur twice in the batch so the label
    matrix has off-diagonal positives.
    """
    raw_img = rng.normal(size=(n, d))
    raw_txt = rng.normal(size=(n, d))
    if repeat_ids and n >= 4:
        ids = np.arange(n) // 2  # every identity twice
    else:
        ids = np.arange(n)
    return raw_img, raw_txt, ids


def batches_from_raw(raw_img, raw_txt, ids):
    img = EmbeddingBatch(l2_normalize_rows(raw_img), ids, normalized=True)
    txt = EmbeddingBatch(l2_normalize_rows(raw_txt), ids, normalized=True)
    labels = build_labels(ids, ids)
    return img, txt, labels


@pytest.fixture
def rng():
    return Rng(20240817)
