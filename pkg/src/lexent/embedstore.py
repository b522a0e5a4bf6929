"""Binary embedding-record stores (``.lexe`` files).

One store holds per-occurrence contextual vectors for a fixed vocabulary,
either observed-token states or masked-slot states. The layout is fully
self-describing::

    magic "LEXE" (4) | version u16 | kind u8 | dim u32 | vocab_size u32
    vocab entries: word_len u16 | word UTF-8 | corpus_count u64
    records:       word_id u32 | dim x float32

All integers and floats are little-endian. Records are unordered by
contract: consumers must produce results invariant to record order.
"""

from __future__ import annotations

import enum
import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from lexent.errors import LexentDataError

MAGIC = b"LEXE"
FORMAT_VERSION = 1

_HEAD = struct.Struct("<4sHBII")
_VOCAB_LEN = struct.Struct("<H")
_VOCAB_COUNT = struct.Struct("<Q")
_WORD_ID = struct.Struct("<I")


class StoreFormatError(LexentDataError):
    """The source is not a readable store of a supported version."""


class StoreCorruptionError(LexentDataError):
    """The store is structurally damaged; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class InvalidRecordError(LexentDataError):
    """A record violates the header contract; carries the record index."""

    def __init__(self, message: str, index: int):
        super().__init__(f"record {index}: {message}")
        self.index = index


class StoreKind(enum.IntEnum):
    TOKEN_STATES = 1
    MASKED_STATES = 2


@dataclass
class StoreHeader:
    """Self-describing store header, including the vocabulary table."""

    kind: StoreKind
    dim: int
    vocab: list[str]
    counts: list[int]
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.kind = StoreKind(self.kind)
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if len(self.vocab) != len(self.counts):
            raise ValueError(
                f"vocab/counts length mismatch: {len(self.vocab)} != {len(self.counts)}"
            )
        seen = set()
        for word in self.vocab:
            if not word:
                raise ValueError("vocab words must be non-empty")
            if word in seen:
                raise ValueError(f"duplicate vocab word: {word!r}")
            seen.add(word)
        for word, count in zip(self.vocab, self.counts):
            if count < 1:
                raise ValueError(f"corpus count for {word!r} must be >= 1, got {count}")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def total_count(self) -> int:
        return sum(self.counts)

    def word_to_id(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.vocab)}

    def record_nbytes(self) -> int:
        return _WORD_ID.size + 4 * self.dim

    def vocab_hash(self) -> bytes:
        """SHA-256 over the (word, count) table; identifies the vocabulary."""
        h = hashlib.sha256()
        for word, count in zip(self.vocab, self.counts):
            data = word.encode("utf-8")
            h.update(_VOCAB_LEN.pack(len(data)))
            h.update(data)
            h.update(_VOCAB_COUNT.pack(count))
        return h.digest()

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEAD.pack(MAGIC, self.version, int(self.kind), self.dim, self.vocab_size))
        for word, count in zip(self.vocab, self.counts):
            data = word.encode("utf-8")
            if len(data) > 0xFFFF:
                raise StoreFormatError(
                    f"vocab word too long ({len(data)} bytes): {word[:32]!r}..."
                )
            buf.write(_VOCAB_LEN.pack(len(data)))
            buf.write(data)
            buf.write(_VOCAB_COUNT.pack(count))
        return buf.getvalue()


@dataclass
class EmbeddingRecord:
    """One (word type, contextual vector) observation."""

    word_id: int
    vector: np.ndarray

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingRecord)
            and self.word_id == other.word_id
            and np.array_equal(self.vector, other.vector)
        )


def write_store(
    header: StoreHeader,
    records: Iterable[EmbeddingRecord],
    sink: BinaryIO,
) -> int:
    """Write header then records to ``sink``; returns the byte count written.

    Each record is validated against the header: ``word_id`` must index the
    vocab table and the vector must be finite float32 of the declared dim.
    """
    head = header.to_bytes()
    sink.write(head)
    written = len(head)
    for index, rec in enumerate(records):
        if not (0 <= rec.word_id < header.vocab_size):
            raise InvalidRecordError(
                f"word_id {rec.word_id} out of range for vocab_size {header.vocab_size}",
                index,
            )
        vec = np.asarray(rec.vector, dtype="<f4")
        if vec.shape != (header.dim,):
            raise InvalidRecordError(
                f"vector shape {vec.shape} does not match dim {header.dim}", index
            )
        if not np.all(np.isfinite(vec)):
            raise InvalidRecordError("vector contains non-finite components", index)
        sink.write(_WORD_ID.pack(rec.word_id))
        sink.write(vec.tobytes())
        written += header.record_nbytes()
    return written


def write_store_path(header: StoreHeader, records: Iterable[EmbeddingRecord], path) -> int:
    with open(path, "wb") as sink:
        return write_store(header, records, sink)


def read_header(source: BinaryIO) -> StoreHeader:
    head = source.read(_HEAD.size)
    if len(head) < _HEAD.size:
        raise StoreFormatError(f"source too short for a store header ({len(head)} bytes)")
    magic, version, kind, dim, vocab_size = _HEAD.unpack(head)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported store version {version}")
    try:
        kind = StoreKind(kind)
    except ValueError:
        raise StoreFormatError(f"unknown store kind {kind}") from None
    offset = _HEAD.size
    vocab: list[str] = []
    counts: list[int] = []
    for _ in range(vocab_size):
        raw = source.read(_VOCAB_LEN.size)
        if len(raw) < _VOCAB_LEN.size:
            raise StoreCorruptionError("truncated vocab entry length", offset)
        (word_len,) = _VOCAB_LEN.unpack(raw)
        offset += _VOCAB_LEN.size
        raw = source.read(word_len + _VOCAB_COUNT.size)
        if len(raw) < word_len + _VOCAB_COUNT.size:
            raise StoreCorruptionError("truncated vocab entry", offset)
        try:
            vocab.append(raw[:word_len].decode("utf-8"))
        except UnicodeDecodeError:
            raise StoreCorruptionError("vocab entry is not valid UTF-8", offset) from None
        (count,) = _VOCAB_COUNT.unpack(raw[word_len:])
        counts.append(count)
        offset += word_len + _VOCAB_COUNT.size
    try:
        return StoreHeader(kind=kind, dim=dim, vocab=vocab, counts=counts, version=version)
    except ValueError as exc:
        raise StoreCorruptionError(f"invalid header: {exc}", offset) from None


def _iter_records(source: BinaryIO, header: StoreHeader, offset: int) -> Iterator[EmbeddingRecord]:
    for word_ids, vectors, offset in _iter_batches(source, header, offset):
        for word_id, vec in zip(word_ids, vectors):
            yield EmbeddingRecord(word_id=int(word_id), vector=vec)


def _iter_batches(
    source: BinaryIO,
    header: StoreHeader,
    offset: int,
    batch_records: int = 8192,
) -> Iterator[tuple[np.ndarray, np.ndarray, int]]:
    """Yield (word_ids, vectors, end_offset) chunks of at most ``batch_records``.

    Memory use is bounded by the batch size, not the store size.
    """
    rec_size = header.record_nbytes()
    want = rec_size * batch_records
    while True:
        raw = source.read(want)
        while raw and len(raw) < want:
            # Non-file sources may return short reads before EOF.
            more = source.read(want - len(raw))
            if not more:
                break
            raw += more
        if not raw:
            return
        n_full, rem = divmod(len(raw), rec_size)
        if rem:
            raise StoreCorruptionError(
                f"truncated record: {rem} trailing bytes, record size is {rec_size}",
                offset + n_full * rec_size,
            )
        flat = np.frombuffer(raw, dtype=np.uint8).reshape(n_full, rec_size)
        word_ids = flat[:, : _WORD_ID.size].copy().view("<u4").reshape(n_full)
        vectors = flat[:, _WORD_ID.size :].copy().view("<f4").reshape(n_full, header.dim)
        bad = np.nonzero(word_ids >= header.vocab_size)[0]
        if bad.size:
            raise StoreCorruptionError(
                f"record word_id {int(word_ids[bad[0]])} out of range "
                f"for vocab_size {header.vocab_size}",
                offset + int(bad[0]) * rec_size,
            )
        offset += n_full * rec_size
        yield word_ids, vectors, offset


def read_store(source: BinaryIO) -> tuple[StoreHeader, Iterator[EmbeddingRecord]]:
    """Parse the header and return it with a lazy record iterator."""
    header = read_header(source)
    body = source.tell() if source.seekable() else len(header.to_bytes())
    return header, _iter_records(source, header, body)


def read_store_path(path) -> tuple[StoreHeader, Iterator[EmbeddingRecord]]:
    """Like :func:`read_store`; the file is closed when the iterator is exhausted."""
    source = open(path, "rb")
    try:
        header = read_header(source)
    except Exception:
        source.close()
        raise

    def _gen() -> Iterator[EmbeddingRecord]:
        with source:
            yield from _iter_records(source, header, source.tell())

    return header, _gen()


def read_batches_path(path, batch_records: int = 8192):
    """Header plus a lazy (word_ids, vectors) batch iterator over a store file."""
    source = open(path, "rb")
    try:
        header = read_header(source)
    except Exception:
        source.close()
        raise

    def _gen():
        with source:
            for word_ids, vectors, _ in _iter_batches(source, header, source.tell(), batch_records):
                yield word_ids, vectors

    return header, _gen()


@dataclass
class StoreReport:
    """Summary produced by :func:`validate_store`."""

    kind: StoreKind
    dim: int
    vocab_size: int
    record_count: int
    type_counts: dict[str, int]
    min_component: float
    max_component: float
    min_contexts: int
    flagged_types: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.name,
            "dim": self.dim,
            "vocab_size": self.vocab_size,
            "record_count": self.record_count,
            "type_counts": self.type_counts,
            "min_component": self.min_component,
            "max_component": self.max_component,
            "min_contexts": self.min_contexts,
            "flagged_types": self.flagged_types,
        }


def validate_store(path, min_contexts: int = 100) -> StoreReport:
    """Full scan: per-type counts, component range, below-threshold flags."""
    header, batches = read_batches_path(path)
    per_type = np.zeros(header.vocab_size, dtype=np.int64)
    lo, hi = np.inf, -np.inf
    total = 0
    for word_ids, vectors in batches:
        per_type += np.bincount(word_ids, minlength=header.vocab_size)
        total += len(word_ids)
        if vectors.size:
            lo = min(lo, float(vectors.min()))
            hi = max(hi, float(vectors.max()))
    flagged = [w for w, c in zip(header.vocab, per_type) if c < min_contexts]
    return StoreReport(
        kind=header.kind,
        dim=header.dim,
        vocab_size=header.vocab_size,
        record_count=total,
        type_counts={w: int(c) for w, c in zip(header.vocab, per_type)},
        min_component=float(lo) if total else float("nan"),
        max_component=float(hi) if total else float("nan"),
        min_contexts=min_contexts,
        flagged_types=flagged,
    )
