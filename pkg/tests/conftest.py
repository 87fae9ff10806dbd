"""Shared test helpers."""

import numpy as np
import pytest

from fednl import Dataset


def make_dataset(features, labels, c, ids=None, true_labels=None, name="fixture"):
    """Build a small Dataset from plain lists."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if ids is None:
        ids = np.arange(labels.shape[0], dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)
    if true_labels is not None:
        true_labels = np.asarray(true_labels, dtype=np.int64)
    return Dataset(
        features=features,
        observed_labels=labels,
        ids=ids,
        class_count=c,
        true_labels=true_labels,
        name=name,
    )


@pytest.fixture
def tiny_dataset():
    """Nine linearly separated instances over three classes."""
    features = [[float(k * 5 + j), 1.0] for k in range(3) for j in range(3)]
    labels = [k for k in range(3) for _ in range(3)]
    return make_dataset(features, labels, c=3)
