"""Encoder abstraction and the deterministic stub used for tests and
desk-scale runs.

An encoder exposes three things: a declared output dimension, a mask token,
and two operations — splitting one token into word pieces, and mapping a
piece sequence to one final-layer state per piece. Any contextual model
meeting this interface (e.g. a transformer wrapper returning last-layer
hidden states) can drive the extraction pipeline.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np

from lexent.errors import LexentDataError


class EncoderDimensionMismatchError(LexentDataError):
    """Encoder output shape disagrees with its declared dimension."""


@runtime_checkable
class Encoder(Protocol):
    dim: int
    mask_token: str

    def wordpieces(self, token: str) -> list[str]: ...

    def encode(self, pieces: list[str]) -> np.ndarray: ...


def _piece_vector(piece: str, position: int, dim: int) -> np.ndarray:
    """Position-dependent constant for one piece, derived from SHA-256 so it
    is identical across platforms and runs. Components are dyadic rationals
    in [-1, 1), exact in float64."""
    needed = 4 * dim
    material = f"{position}|{piece}".encode("utf-8")
    chunks = []
    counter = 0
    while sum(len(c) for c in chunks) < needed:
        chunks.append(hashlib.sha256(material + b"#%d" % counter).digest())
        counter += 1
    raw = np.frombuffer(b"".join(chunks)[:needed], dtype=">u4")
    return raw.astype(np.float64) / 2.0**31 - 1.0


class StubEncoder:
    """Deterministic stand-in: each piece's state depends only on the piece
    string and its position. Tokens longer than ``piece_len`` characters are
    split into a head piece and ``##``-prefixed continuations."""

    mask_token = "[MASK]"

    def __init__(self, dim: int = 16, piece_len: int = 4):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if piece_len < 1:
            raise ValueError(f"piece_len must be >= 1, got {piece_len}")
        self.dim = dim
        self.piece_len = piece_len

    def wordpieces(self, token: str) -> list[str]:
        if len(token) <= self.piece_len:
            return [token]
        head, rest = token[: self.piece_len], token[self.piece_len :]
        return [head] + [
            "##" + rest[i : i + self.piece_len] for i in range(0, len(rest), self.piece_len)
        ]

    def encode(self, pieces: list[str]) -> np.ndarray:
        if not pieces:
            return np.zeros((0, self.dim))
        return np.stack([_piece_vector(p, i, self.dim) for i, p in enumerate(pieces)])


def encode_checked(encoder: Encoder, pieces: list[str]) -> np.ndarray:
    """Run the encoder and verify its output shape against the declared dim."""
    states = np.asarray(encoder.encode(pieces), dtype=np.float64)
    if states.shape != (len(pieces), encoder.dim):
        raise EncoderDimensionMismatchError(
            f"encoder returned shape {states.shape} for {len(pieces)} pieces "
            f"with declared dim {encoder.dim}"
        )
    return states


def build_encoder(spec: str) -> Encoder:
    """Construct an encoder from a CLI spec string: ``stub`` or ``stub:<dim>``."""
    name, _, arg = spec.partition(":")
    if name != "stub":
        raise LexentDataError(f"unknown encoder {name!r}; available: stub[:<dim>]")
    if not arg:
        return StubEncoder()
    try:
        dim = int(arg)
    except ValueError:
        raise LexentDataError(f"encoder dim must be an integer, got {arg!r}") from None
    if dim < 1:
        raise LexentDataError(f"encoder dim must be >= 1, got {dim}")
    return StubEncoder(dim=dim)
