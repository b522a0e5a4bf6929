"""Corpus-to-store extraction.

Given tokenized sentences and an encoder, this module emits the two binary
stores the analysis toolkit consumes: observed-token states (per occurrence,
the mean of the word's piece vectors) and masked-slot states (the same
context with the word replaced by one mask token, read at the mask position).
Both stores from one run share a vocabulary table and per-type counts, so
they hash identically and pass the probe's vocabulary gate.
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from lexent import embedstore
from lexent.embedstore import EmbeddingRecord, StoreHeader, StoreKind
from lexent.errors import LexentDataError

from lexent_extract.encoders import Encoder, encode_checked
from lexent_extract.segment import get_language, in_script

log = logging.getLogger(__name__)

MASKING_POLICY = "one mask token replaces every piece of the target word"

DEFAULT_ANALYSIS_BUDGET = 1_000_000
DEFAULT_PROBE_BUDGET = 100_000
DEFAULT_MIN_CONTEXTS = 100


@dataclass(frozen=True)
class CorpusConfig:
    """Sampling and filtering knobs for one extraction run.

    The language code fixes the allowed script ranges via the language
    registry. Analysis and probe-training sentences are drawn disjointly
    from one seeded shuffle.
    """

    language: str
    analysis_budget: int = DEFAULT_ANALYSIS_BUDGET
    probe_budget: int = DEFAULT_PROBE_BUDGET
    min_contexts: int = DEFAULT_MIN_CONTEXTS
    seed: int = 0

    def __post_init__(self):
        get_language(self.language)
        if self.analysis_budget < 1:
            raise LexentDataError(
                f"analysis budget must be >= 1, got {self.analysis_budget}"
            )
        if self.probe_budget < 0:
            raise LexentDataError(f"probe budget must be >= 0, got {self.probe_budget}")
        if self.min_contexts < 1:
            raise LexentDataError(f"min_contexts must be >= 1, got {self.min_contexts}")


def subsample(sentences: list, n: int, rng: np.random.Generator) -> list:
    """Uniform sample of ``n`` sentences without replacement.

    A corpus of at most ``n`` sentences is returned whole; the shortfall
    case warns instead of failing.
    """
    total = len(sentences)
    if n >= total:
        if n > total:
            warnings.warn(f"requested {n} sentences but the corpus has {total}; using all")
        return list(sentences)
    order = rng.permutation(total)
    return [sentences[i] for i in order[:n]]


def disjoint_samples(
    sentences: list, n_first: int, n_second: int, rng: np.random.Generator
) -> tuple[list, list]:
    """Two disjoint uniform samples cut from one seeded shuffle.

    The first sample equals ``subsample(sentences, n_first, rng)`` under the
    same generator state, so requesting a second sample never changes the
    first. Shortfalls warn and return what remains.
    """
    total = len(sentences)
    if n_first >= total:
        if n_first > total:
            warnings.warn(
                f"requested {n_first} sentences but the corpus has {total}; using all"
            )
        if n_second > 0:
            warnings.warn(f"no sentences left for a disjoint sample of {n_second}")
        return list(sentences), []
    order = rng.permutation(total)
    first = [sentences[i] for i in order[:n_first]]
    remaining = total - n_first
    if n_second > remaining:
        warnings.warn(
            f"requested a disjoint sample of {n_second} but only {remaining} "
            f"sentences remain; using all of them"
        )
    second = [sentences[i] for i in order[n_first : n_first + n_second]]
    return first, second


def _sentence_pieces(tokens: list[str], encoder: Encoder) -> tuple[list[str], list[tuple[int, int]]]:
    """Piece sequence for a whole sentence plus each token's [start, end) span."""
    pieces: list[str] = []
    spans: list[tuple[int, int]] = []
    for token in tokens:
        token_pieces = encoder.wordpieces(token)
        spans.append((len(pieces), len(pieces) + len(token_pieces)))
        pieces.extend(token_pieces)
    return pieces, spans


def _token_records(sentences, encoder: Encoder, word_to_id: dict[str, int]):
    """One record per in-vocabulary occurrence: the mean of its piece states.

    The sentence is encoded once; out-of-vocabulary tokens stay in the
    context but emit nothing.
    """
    for tokens in sentences:
        pieces, spans = _sentence_pieces(tokens, encoder)
        if not pieces:
            continue
        states = encode_checked(encoder, pieces)
        for token, (start, end) in zip(tokens, spans):
            word_id = word_to_id.get(token)
            if word_id is not None:
                yield EmbeddingRecord(word_id=word_id, vector=states[start:end].mean(axis=0))


def _masked_records(sentences, encoder: Encoder, word_to_id: dict[str, int]):
    """One record per in-vocabulary occurrence: the state at the mask slot.

    Each encoder call sees exactly one mask token, substituted for all of
    the target word's pieces.
    """
    for tokens in sentences:
        pieces, spans = _sentence_pieces(tokens, encoder)
        for token, (start, end) in zip(tokens, spans):
            word_id = word_to_id.get(token)
            if word_id is None:
                continue
            masked = pieces[:start] + [encoder.mask_token] + pieces[end:]
            states = encode_checked(encoder, masked)
            yield EmbeddingRecord(word_id=word_id, vector=states[start])


@dataclass
class ExtractionResult:
    """What one extraction run produced, for summaries and manifests."""

    token_header: StoreHeader
    masked_header: StoreHeader
    sentence_count: int
    records_per_store: int
    candidate_types: int
    dropped_types: int
    out_of_script_types: int


def extract_states(
    sentences: list[list[str]],
    encoder: Encoder,
    config: CorpusConfig,
    out_tokens,
    out_masked,
) -> ExtractionResult:
    """Write the TokenStates and MaskedStates stores for one sentence sample.

    First pass counts in-script word types and fixes the shared vocabulary
    (types seen at least ``min_contexts`` times, sorted); second pass encodes
    and writes records. Words containing out-of-script characters never
    become records, though they remain part of every context.
    """
    language = get_language(config.language)
    counts: Counter[str] = Counter()
    rejected: set[str] = set()
    for tokens in sentences:
        for token in tokens:
            if in_script(token, language):
                counts[token] += 1
            else:
                rejected.add(token)
    vocab = sorted(word for word, count in counts.items() if count >= config.min_contexts)
    if not vocab:
        raise LexentDataError(
            f"no in-script word type occurs at least {config.min_contexts} times "
            f"in the {len(sentences)}-sentence sample ({len(counts)} candidate types)"
        )
    kept_counts = [counts[word] for word in vocab]
    token_header = StoreHeader(
        kind=StoreKind.TOKEN_STATES, dim=encoder.dim, vocab=vocab, counts=kept_counts
    )
    masked_header = StoreHeader(
        kind=StoreKind.MASKED_STATES, dim=encoder.dim, vocab=vocab, counts=kept_counts
    )
    word_to_id = token_header.word_to_id()
    embedstore.write_store_path(
        token_header, _token_records(sentences, encoder, word_to_id), out_tokens
    )
    embedstore.write_store_path(
        masked_header, _masked_records(sentences, encoder, word_to_id), out_masked
    )
    result = ExtractionResult(
        token_header=token_header,
        masked_header=masked_header,
        sentence_count=len(sentences),
        records_per_store=sum(kept_counts),
        candidate_types=len(counts),
        dropped_types=len(counts) - len(vocab),
        out_of_script_types=len(rejected),
    )
    log.info(
        "extracted %d records per store over %d types (%d below min_contexts, "
        "%d out-of-script types skipped)",
        result.records_per_store,
        len(vocab),
        result.dropped_types,
        result.out_of_script_types,
    )
    return result


def extract_training_states(
    sentences: list[list[str]],
    encoder: Encoder,
    header: StoreHeader,
    out_path,
) -> int:
    """Write probe-training masked states under an existing vocabulary header.

    Reusing the analysis header keeps the vocabulary hash identical, which
    the probe requires before it will score the analysis store. Occurrences
    of words outside that vocabulary emit nothing; record totals may fall
    short of the header counts, which the store format permits. Returns the
    number of records written.
    """
    if header.kind != StoreKind.MASKED_STATES:
        raise LexentDataError(
            f"training store header must be MASKED_STATES, got {header.kind.name}"
        )
    word_to_id = header.word_to_id()
    written = 0

    def _counted():
        nonlocal written
        for record in _masked_records(sentences, encoder, word_to_id):
            written += 1
            yield record

    embedstore.write_store_path(header, _counted(), out_path)
    log.info("extracted %d training records over %d sentences", written, len(sentences))
    return written
