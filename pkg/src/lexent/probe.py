"""Cloze probe over masked-context states.

A one-hidden-layer classifier ``softmax(W2 relu(W1 h + b1) + b2)`` is
trained with Adam on MaskedStates records to predict the masked word from
its context state. Its per-type mean negative log2-probability is the
contextual surprisal score; together with unigram surprisal from the
header counts it yields contextual informativeness.

Internally losses are in nats; every reported quantity is converted to
bits once, at the boundary.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from lexent import embedstore
from lexent.ambiguity import WrongStoreKindError
from lexent.errors import LexentDataError, LexentNumericalError

log = logging.getLogger(__name__)

_LN2 = math.log(2.0)

PROBE_MAGIC = b"LEXP"
PROBE_VERSION = 1
_PROBE_HEAD = struct.Struct("<4sHIII32s")

INFORMATIVENESS_FLAG_BITS = -0.5


class TrainingDivergedError(LexentNumericalError):
    """Loss became non-finite during training."""


class VocabHashMismatchError(LexentDataError):
    """Probe parameters and store were built over different vocabularies."""


@dataclass
class ProbeHyper:
    """Training hyperparameters. Defaults: hidden 200, one epoch, Adam
    with lr 1e-3 / betas (0.9, 0.999) / eps 1e-8, mini-batches of 64."""

    hidden_size: int = 200
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


@dataclass
class ProbeParams:
    """Classifier weights plus (while training) Adam moment estimates."""

    w1: np.ndarray  # (hidden, dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (vocab, hidden)
    b2: np.ndarray  # (vocab,)
    vocab_hash: bytes
    adam: AdamState | None = None
    epoch_loss_bits: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.w2.shape[0]

    def weights(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_params(
    dim: int, hidden_size: int, vocab_size: int, seed: int, vocab_hash: bytes = b""
) -> tuple[ProbeParams, np.random.Generator]:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (dim + hidden_size))
    lim2 = math.sqrt(6.0 / (hidden_size + vocab_size))
    params = ProbeParams(
        w1=rng.uniform(-lim1, lim1, size=(hidden_size, dim)),
        b1=np.zeros(hidden_size),
        w2=rng.uniform(-lim2, lim2, size=(vocab_size, hidden_size)),
        b2=np.zeros(vocab_size),
        vocab_hash=vocab_hash,
        adam=AdamState(
            step=0,
            m={
                "w1": np.zeros((hidden_size, dim)),
                "b1": np.zeros(hidden_size),
                "w2": np.zeros((vocab_size, hidden_size)),
                "b2": np.zeros(vocab_size),
            },
            v={
                "w1": np.zeros((hidden_size, dim)),
                "b1": np.zeros(hidden_size),
                "w2": np.zeros((vocab_size, hidden_size)),
                "b2": np.zeros(vocab_size),
            },
        ),
    )
    return params, rng


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax (nats) along the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _forward_batch(params: ProbeParams, h: np.ndarray):
    a = h @ params.w1.T + params.b1
    z = np.maximum(a, 0.0)
    logits = z @ params.w2.T + params.b2
    return a, z, logits


def probe_forward(params: ProbeParams, h: np.ndarray) -> np.ndarray:
    """Vocabulary log2-probabilities for one context state."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (params.dim,):
        raise ValueError(f"state shape {h.shape} does not match dim {params.dim}")
    if not np.all(np.isfinite(h)):
        raise ValueError("state contains non-finite components")
    _, _, logits = _forward_batch(params, h[None, :])
    return _log_softmax(logits)[0] / _LN2


def cross_entropy_loss_and_grads(
    params: ProbeParams, h: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean cross entropy (nats) and its gradients w.r.t. all weights."""
    h = np.asarray(h, dtype=np.float64)
    targets = np.asarray(targets)
    n = h.shape[0]
    a, z, logits = _forward_batch(params, h)
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(n), targets].mean())

    g_logits = np.exp(logp)
    g_logits[np.arange(n), targets] -= 1.0
    g_logits /= n
    g_w2 = g_logits.T @ z
    g_b2 = g_logits.sum(axis=0)
    g_z = g_logits @ params.w2
    g_a = g_z * (a > 0.0)
    g_w1 = g_a.T @ h
    g_b1 = g_a.sum(axis=0)
    return loss, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}


def adam_step(params: ProbeParams, grads: dict[str, np.ndarray], hyper: ProbeHyper) -> None:
    state = params.adam
    if state is None:
        raise ValueError("parameters carry no optimizer state")
    state.step += 1
    t = state.step
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for name, weight in params.weights().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        weight -= hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)


def _load_masked(store_path) -> tuple[embedstore.StoreHeader, np.ndarray, np.ndarray]:
    header, batches = embedstore.read_batches_path(store_path)
    if header.kind != embedstore.StoreKind.MASKED_STATES:
        raise WrongStoreKindError(header.kind, embedstore.StoreKind.MASKED_STATES)
    ids_parts, vec_parts = [], []
    for word_ids, vectors in batches:
        ids_parts.append(word_ids.astype(np.int64))
        vec_parts.append(vectors)
    if not ids_parts:
        return header, np.zeros(0, dtype=np.int64), np.zeros((0, header.dim), dtype=np.float32)
    return header, np.concatenate(ids_parts), np.concatenate(vec_parts)


def train_probe(store_path, hyper: ProbeHyper | None = None) -> ProbeParams:
    """One pass (by default) of Adam over a shuffled MaskedStates store."""
    hyper = hyper or ProbeHyper()
    header, ids, vectors = _load_masked(store_path)
    n = len(ids)
    if n == 0:
        raise LexentDataError(f"training store {store_path} holds no records")
    params, rng = init_params(
        header.dim, hyper.hidden_size, header.vocab_size, hyper.seed, header.vocab_hash()
    )
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        total_nats = 0.0
        for start in range(0, n, hyper.batch_size):
            take = perm[start : start + hyper.batch_size]
            loss, grads = cross_entropy_loss_and_grads(
                params, vectors[take].astype(np.float64), ids[take]
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {params.adam.step}, "
                    f"records {start}..{start + len(take)}"
                )
            adam_step(params, grads, hyper)
            total_nats += loss * len(take)
        epoch_bits = total_nats / n / _LN2
        params.epoch_loss_bits.append(epoch_bits)
        log.info("epoch %d/%d: mean cross entropy %.4f bits", epoch + 1, hyper.epochs, epoch_bits)
    return params


@dataclass
class ContextualScore:
    """Per-type mean surprisal under the probe, in bits."""

    word_id: int
    n_contexts: int
    ctx_surprisal_bits: float


def score_surprisal(
    params: ProbeParams,
    store_path,
    min_contexts: int = 100,
    batch_records: int = 8192,
) -> list[ContextualScore]:
    """Mean -log2 q(w|c) per word type over a MaskedStates store.

    Types with fewer than ``min_contexts`` records are omitted; records whose
    word_id does not fit the probe's output layer are skipped (and counted).
    """
    header, batches = embedstore.read_batches_path(store_path, batch_records)
    if header.kind != embedstore.StoreKind.MASKED_STATES:
        raise WrongStoreKindError(header.kind, embedstore.StoreKind.MASKED_STATES)
    sums = np.zeros(header.vocab_size)
    counts = np.zeros(header.vocab_size, dtype=np.int64)
    skipped = 0
    for word_ids, vectors in batches:
        keep = word_ids < params.vocab_size
        skipped += int((~keep).sum())
        word_ids = word_ids[keep].astype(np.int64)
        if word_ids.size == 0:
            continue
        _, _, logits = _forward_batch(params, vectors[keep].astype(np.float64))
        logp = _log_softmax(logits)
        surprisal_bits = -logp[np.arange(len(word_ids)), word_ids] / _LN2
        sums += np.bincount(word_ids, weights=surprisal_bits, minlength=header.vocab_size)
        counts += np.bincount(word_ids, minlength=header.vocab_size)
    if skipped:
        log.warning("skipped %d records outside the probe vocabulary", skipped)
    return [
        ContextualScore(
            word_id=w, n_contexts=int(counts[w]), ctx_surprisal_bits=float(sums[w] / counts[w])
        )
        for w in range(header.vocab_size)
        if counts[w] >= min_contexts
    ]


def unigram_surprisal(header: embedstore.StoreHeader, word_id: int) -> float:
    """-log2 of the maximum-likelihood unigram probability from header counts."""
    return -math.log2(header.counts[word_id] / header.total_count)


def informativeness(unigram_bits: float, ctx_bits: float) -> float:
    """Unigram minus contextual surprisal; negative values beyond the probe's
    estimation slack (< -0.5 bits) are logged."""
    value = unigram_bits - ctx_bits
    if value < INFORMATIVENESS_FLAG_BITS:
        log.debug("informativeness %.3f bits below %.1f", value, INFORMATIVENESS_FLAG_BITS)
    return value


@dataclass
class TypeScores:
    """Joined per-type surprisal row."""

    word_id: int
    n_contexts: int
    ctx_surprisal_bits: float
    unigram_surprisal_bits: float
    informativeness_bits: float
    flagged: bool


def build_type_scores(
    header: embedstore.StoreHeader, contextual: list[ContextualScore]
) -> list[TypeScores]:
    rows = []
    for c in contextual:
        uni = unigram_surprisal(header, c.word_id)
        info = informativeness(uni, c.ctx_surprisal_bits)
        rows.append(
            TypeScores(
                word_id=c.word_id,
                n_contexts=c.n_contexts,
                ctx_surprisal_bits=c.ctx_surprisal_bits,
                unigram_surprisal_bits=uni,
                informativeness_bits=info,
                flagged=info < INFORMATIVENESS_FLAG_BITS,
            )
        )
    n_flagged = sum(r.flagged for r in rows)
    if n_flagged:
        log.warning(
            "%d of %d types score worse than their unigram baseline by more than %.1f bits",
            n_flagged,
            len(rows),
            -INFORMATIVENESS_FLAG_BITS,
        )
    return rows


def save_probe(params: ProbeParams, path) -> None:
    """Persist weights as float32: fixed header then w1, b1, w2, b2 packed."""
    if len(params.vocab_hash) != 32:
        raise ValueError("probe parameters carry no 32-byte vocab hash")
    with open(path, "wb") as fh:
        fh.write(
            _PROBE_HEAD.pack(
                PROBE_MAGIC,
                PROBE_VERSION,
                params.dim,
                params.hidden_size,
                params.vocab_size,
                params.vocab_hash,
            )
        )
        for name in ("w1", "b1", "w2", "b2"):
            fh.write(np.ascontiguousarray(params.weights()[name], dtype="<f4").tobytes())


def load_probe(path) -> ProbeParams:
    with open(path, "rb") as fh:
        head = fh.read(_PROBE_HEAD.size)
        if len(head) < _PROBE_HEAD.size:
            raise LexentDataError(f"{path}: too short for a probe parameter file")
        magic, version, dim, hidden, vocab_size, vocab_hash = _PROBE_HEAD.unpack(head)
        if magic != PROBE_MAGIC:
            raise LexentDataError(f"{path}: bad magic {magic!r}, expected {PROBE_MAGIC!r}")
        if version != PROBE_VERSION:
            raise LexentDataError(f"{path}: unsupported probe file version {version}")
        shapes = [(hidden, dim), (hidden,), (vocab_size, hidden), (vocab_size,)]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            if len(raw) < 4 * count:
                raise LexentDataError(f"{path}: truncated parameter block")
            arrays.append(np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape))
        if fh.read(1):
            raise LexentDataError(f"{path}: trailing bytes after parameter blocks")
    w1, b1, w2, b2 = arrays
    return ProbeParams(w1=w1, b1=b1, w2=w2, b2=b2, vocab_hash=vocab_hash)


def ensure_vocab_match(params: ProbeParams, header: embedstore.StoreHeader) -> None:
    if params.vocab_hash != header.vocab_hash():
        raise VocabHashMismatchError(
            "probe parameters were trained over a different vocabulary than this store"
        )
