"""Shared builders for the extractor test suite."""

from __future__ import annotations

import random

from lexent import embedstore


def pool_corpus(n_sentences: int, words: list[str], seed: int = 0, length: int = 5) -> str:
    """Deterministic plain-text corpus: fixed-seed sentences over a word pool."""
    rng = random.Random(seed)
    lines = []
    for _ in range(n_sentences):
        lines.append(" ".join(rng.choice(words) for _ in range(length)) + ".")
    return "\n".join(lines) + "\n"


def read_records(path) -> tuple[embedstore.StoreHeader, list[embedstore.EmbeddingRecord]]:
    header, records = embedstore.read_store_path(path)
    return header, list(records)
