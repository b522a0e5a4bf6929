"""Per-type lexical ambiguity in bits.

Continuous estimate: stream a TokenStates store into per-type running
moments (Welford updates, Chan pairwise merges) and score each type with
the diagonal Gaussian differential-entropy bound

    0.5 * sum_d log2(2 * pi * e * var_d)

which upper-bounds the meaning entropy of the type for any distribution
with the same per-dimension variances. Discrete estimate: log2 of the
type's sense count from a lexicon table.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from lexent import embedstore
from lexent.errors import LexentDataError, LexentNumericalError

log = logging.getLogger(__name__)

_LOG2_2PI_E = math.log2(2.0 * math.pi * math.e)

DEFAULT_MIN_CONTEXTS = 100
DEFAULT_VARIANCE_FLOOR = 1e-10


class InsufficientDataError(LexentNumericalError):
    """Fewer observations than the estimator needs."""


class WrongStoreKindError(LexentDataError):
    """The store holds the other record kind."""

    def __init__(self, found: embedstore.StoreKind, expected: embedstore.StoreKind):
        super().__init__(f"store kind is {found.name}, expected {expected.name}")
        self.found = found
        self.expected = expected


@dataclass
class TypeMoments:
    """Streaming count / mean / sum-of-squared-deviations, per dimension."""

    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "TypeMoments":
        return cls(n=0, mean=np.zeros(dim), m2=np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def variances(self) -> np.ndarray:
        """Unbiased per-dimension variances; requires n >= 2."""
        if self.n < 2:
            raise InsufficientDataError(
                f"unbiased variance needs n >= 2 observations, have {self.n}"
            )
        return np.maximum(self.m2 / (self.n - 1), 0.0)


def accumulate(acc: TypeMoments, x: np.ndarray) -> TypeMoments:
    """Welford single-observation update, in place; returns ``acc``.

    Non-finite input is rejected and leaves the accumulator unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (acc.dim,):
        raise ValueError(f"observation shape {x.shape} does not match dim {acc.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("observation contains non-finite components")
    acc.n += 1
    delta = x - acc.mean
    acc.mean += delta / acc.n
    acc.m2 += delta * (x - acc.mean)
    return acc


def merge_moments(a: TypeMoments, b: TypeMoments) -> TypeMoments:
    """Chan pairwise merge of two accumulators; the empty one is the identity."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")
    if a.n == 0:
        return TypeMoments(n=b.n, mean=b.mean.copy(), m2=b.m2.copy())
    if b.n == 0:
        return TypeMoments(n=a.n, mean=a.mean.copy(), m2=a.m2.copy())
    n = a.n + b.n
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.n / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.n * b.n / n)
    return TypeMoments(n=n, mean=mean, m2=m2)


@dataclass
class AmbiguityScore:
    """Continuous ambiguity of one word type, in bits (may be negative)."""

    word_id: int
    n_contexts: int
    entropy_bits: float
    floored_dims: int


def gaussian_entropy_bound(
    acc: TypeMoments,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    word_id: int = 0,
) -> AmbiguityScore:
    """Diagonal Gaussian entropy bound over the accumulated observations.

    Per-dimension unbiased variances below ``variance_floor`` are clamped to
    it (and counted), preventing -inf on degenerate types.
    """
    if variance_floor <= 0:
        raise ValueError(f"variance_floor must be positive, got {variance_floor}")
    variances = acc.variances()
    floored = int(np.sum(variances < variance_floor))
    v = np.maximum(variances, variance_floor)
    entropy_bits = 0.5 * float(np.sum(_LOG2_2PI_E + np.log2(v)))
    return AmbiguityScore(
        word_id=word_id,
        n_contexts=acc.n,
        entropy_bits=entropy_bits,
        floored_dims=floored,
    )


def load_sense_table(path) -> dict[str, int]:
    """Two-column TSV (word, sense count) -> mapping; counts must be >= 1."""
    table: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise LexentDataError(f"{path}:{lineno}: expected 2 tab-separated columns")
            word, raw = parts
            try:
                count = int(raw)
            except ValueError:
                raise LexentDataError(f"{path}:{lineno}: sense count {raw!r} is not an integer") from None
            if count < 1:
                raise LexentDataError(f"{path}:{lineno}: sense count must be >= 1, got {count}")
            if word in table:
                raise LexentDataError(f"{path}:{lineno}: duplicate word {word!r}")
            table[word] = count
    return table


def wordnet_ambiguity(senses: Mapping[str, int], word: str) -> float | None:
    """log2(sense count) in bits, or None when the word is not covered."""
    count = senses.get(word)
    if count is None:
        return None
    return math.log2(count)


@dataclass
class _MomentBank:
    """Vectorized per-type accumulators over a whole vocabulary."""

    n: np.ndarray
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, vocab_size: int, dim: int) -> "_MomentBank":
        return cls(
            n=np.zeros(vocab_size, dtype=np.int64),
            mean=np.zeros((vocab_size, dim)),
            m2=np.zeros((vocab_size, dim)),
        )

    def merge_batch(self, word_ids: np.ndarray, vectors: np.ndarray) -> None:
        """Fold one record batch in: exact two-pass stats per type, Chan-merged."""
        vocab_size, dim = self.mean.shape
        nb = np.bincount(word_ids, minlength=vocab_size).astype(np.float64)
        present = nb > 0
        sums = np.zeros((vocab_size, dim))
        np.add.at(sums, word_ids, vectors.astype(np.float64))
        mean_b = np.zeros((vocab_size, dim))
        mean_b[present] = sums[present] / nb[present, None]
        centered = vectors.astype(np.float64) - mean_b[word_ids]
        m2_b = np.zeros((vocab_size, dim))
        np.add.at(m2_b, word_ids, centered * centered)

        na = self.n.astype(np.float64)
        n = np.maximum(na + nb, 1.0)
        delta = mean_b - self.mean
        ratio = nb / n
        cross = na * nb / n
        self.mean[present] += delta[present] * ratio[present, None]
        self.m2[present] += m2_b[present] + delta[present] * delta[present] * cross[present, None]
        self.n[present] += nb[present].astype(np.int64)

    def moments_for(self, word_id: int) -> TypeMoments:
        return TypeMoments(
            n=int(self.n[word_id]),
            mean=self.mean[word_id].copy(),
            m2=np.maximum(self.m2[word_id], 0.0),
        )


def estimate_ambiguities(
    store_path,
    min_contexts: int = DEFAULT_MIN_CONTEXTS,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> list[AmbiguityScore]:
    """Score every type in a TokenStates store with at least ``min_contexts``
    observations; others are omitted (and counted in a log line). The result
    is sorted by word_id and invariant to record order.
    """
    header, batches = embedstore.read_batches_path(store_path)
    if header.kind != embedstore.StoreKind.TOKEN_STATES:
        raise WrongStoreKindError(header.kind, embedstore.StoreKind.TOKEN_STATES)
    bank = _MomentBank.empty(header.vocab_size, header.dim)
    total = 0
    for word_ids, vectors in batches:
        bank.merge_batch(word_ids, vectors)
        total += len(word_ids)
    if total == 0:
        log.warning("store %s holds no records; emitting an empty table", store_path)
        return []
    scores = []
    omitted = 0
    for word_id in range(header.vocab_size):
        if bank.n[word_id] >= max(min_contexts, 2):
            scores.append(
                gaussian_entropy_bound(
                    bank.moments_for(word_id),
                    variance_floor=variance_floor,
                    word_id=word_id,
                )
            )
        else:
            omitted += 1
    if omitted:
        level = logging.WARNING if not scores else logging.INFO
        log.log(
            level,
            "omitted %d of %d types below min_contexts=%d",
            omitted,
            header.vocab_size,
            min_contexts,
        )
    return scores
