"""Shared builders for synthetic embedding stores."""

from __future__ import annotations

import numpy as np
import pytest

from lexent import embedstore


def build_store(
    path,
    kind: embedstore.StoreKind,
    vocab: list[str],
    counts: list[int],
    make_vector,
    dim: int,
) -> embedstore.StoreHeader:
    """Write a store whose record for occurrence j of word i is make_vector(i, j)."""
    header = embedstore.StoreHeader(kind=kind, dim=dim, vocab=list(vocab), counts=list(counts))

    def records():
        for wid in range(len(vocab)):
            for j in range(counts[wid]):
                yield embedstore.EmbeddingRecord(wid, np.asarray(make_vector(wid, j), dtype=np.float32))

    embedstore.write_store_path(header, records(), path)
    return header


def gaussian_store(
    path,
    kind: embedstore.StoreKind,
    n_types: int,
    count_per_type,
    dim: int,
    seed: int,
    spread=1.0,
    center_scale: float = 4.0,
) -> embedstore.StoreHeader:
    """Per-type Gaussian clusters: type i sits at a random center with its own spread."""
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}" for i in range(n_types)]
    counts = (
        [int(count_per_type)] * n_types
        if np.isscalar(count_per_type)
        else [int(c) for c in count_per_type]
    )
    centers = center_scale * rng.standard_normal((n_types, dim))
    spreads = np.full(n_types, spread) if np.isscalar(spread) else np.asarray(spread)
    header = embedstore.StoreHeader(kind=kind, dim=dim, vocab=vocab, counts=counts)

    def records():
        for wid in range(n_types):
            noise = rng.standard_normal((counts[wid], dim))
            for row in centers[wid] + spreads[wid] * noise:
                yield embedstore.EmbeddingRecord(wid, row.astype(np.float32))

    embedstore.write_store_path(header, records(), path)
    return header


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
