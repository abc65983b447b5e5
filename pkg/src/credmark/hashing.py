"""Deterministic keyed primitives: seed derivation, per-step keys, and the
keyed Fisher-Yates shuffle.

Every byte layout here is part of the cross-implementation conformance
surface (see data/golden_vectors.json), so the encodings are fixed:

* seed derivation   sha256(key || 0x02 || message_be || width_byte)
* step key          sha256(seed || prev_token_u32be || 0x01)
* draw stream       sha256(key || counter_u64be), first 8 bytes as a
                    big-endian u64, with rejection sampling for unbiased
                    bounded draws
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MAX_MESSAGE_BITS = 24

_DOMAIN_STEP = b"\x01"
_DOMAIN_SEED = b"\x02"
_U64_SPAN = 1 << 64


class ConfigurationError(ValueError):
    """Raised for invalid scheme parameters (bit widths, thresholds, ...)."""


@dataclass(frozen=True)
class MessageBits:
    """A b-bit payload; ``value`` is the big-endian integer reading of ``bits``."""

    value: int
    width: int

    def __post_init__(self):
        if not 1 <= self.width <= MAX_MESSAGE_BITS:
            raise ConfigurationError(
                f"message width must be in [1, {MAX_MESSAGE_BITS}], got {self.width}"
            )
        if not 0 <= self.value < (1 << self.width):
            raise ConfigurationError(
                f"message value {self.value} out of range for {self.width} bits"
            )

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.value >> (self.width - 1 - i)) & 1 for i in range(self.width))

    @classmethod
    def from_bits(cls, bits) -> "MessageBits":
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ConfigurationError("bits must be 0/1")
        value = 0
        for b in bits:
            value = (value << 1) | b
        return cls(value=value, width=len(bits))

    def to_bytes(self) -> bytes:
        nbytes = (self.width + 7) // 8
        return self.value.to_bytes(nbytes, "big")

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class SeedMaterial:
    """32 opaque bytes tying a (vendor key, message) pair to its shuffles."""

    data: bytes

    def __post_init__(self):
        if len(self.data) != 32:
            raise ConfigurationError(f"seed material must be 32 bytes, got {len(self.data)}")

    @property
    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, s: str) -> "SeedMaterial":
        return cls(bytes.fromhex(s))


def derive_seed(vendor_key: bytes, message: MessageBits) -> SeedMaterial:
    """Derive the watermark seed for one message under a vendor key."""
    if len(vendor_key) != 32:
        raise ConfigurationError("vendor key must be 32 bytes")
    preimage = vendor_key + _DOMAIN_SEED + message.to_bytes() + bytes([message.width])
    return SeedMaterial(hashlib.sha256(preimage).digest())


def build_seed_table(vendor_key: bytes, width: int) -> list[SeedMaterial]:
    """Seeds for every message value 0..2^width-1, in message-value order."""
    return [derive_seed(vendor_key, MessageBits(m, width)) for m in range(1 << width)]


def step_key(seed: SeedMaterial, prev_token: int) -> bytes:
    """Per-position shuffle key; ``prev_token`` may be the sentinel id ``vocab_size``."""
    if prev_token < 0 or prev_token > 0xFFFFFFFF:
        raise ConfigurationError(f"prev_token {prev_token} not encodable as u32")
    return hashlib.sha256(seed.data + prev_token.to_bytes(4, "big") + _DOMAIN_STEP).digest()


def prf_u64(key: bytes, counter: int) -> int:
    """counter-th draw of the keyed stream: first 8 bytes of sha256(key || u64be)."""
    digest = hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
    return int.from_bytes(digest[:8], "big")


def shuffle(vocab_size: int, key: bytes) -> np.ndarray:
    """Keyed Fisher-Yates permutation of [0, vocab_size), bit-exact across
    implementations.

    Iterates i from vocab_size-1 down to 1; each bounded draw in [0, i] comes
    from the keyed stream with rejection of the biased tail of the u64 range.
    The stream counter advances on every draw, including rejected ones.
    """
    if vocab_size < 1:
        raise ConfigurationError("vocab_size must be >= 1")
    perm = np.arange(vocab_size, dtype=np.int64)
    t = 0
    for i in range(vocab_size - 1, 0, -1):
        m = i + 1
        limit = (_U64_SPAN // m) * m
        while True:
            r = prf_u64(key, t)
            t += 1
            if r < limit:
                break
        j = r % m
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffled_cut(probs: np.ndarray, key: bytes, sigma: float) -> tuple[np.ndarray, int]:
    """Full shuffle order plus the cut index of the sigma-mass prefix.

    The cut is the earliest permutation index whose strict suffix carries at
    most 1-sigma of the probability mass, i.e. the first position where the
    running prefix mass reaches sigma (ties inclusive). The suffix-sum
    formulation is canonical: accumulation runs from the end of the
    permutation so that float rounding agrees exactly with the early-exit
    walks in _kernels.py.
    """
    perm = shuffle(len(probs), key)
    thresh = 1.0 - sigma
    running = 0.0
    cut = len(probs) - 1
    for idx in range(len(probs) - 1, -1, -1):
        if running > thresh:
            break
        cut = idx
        running += float(probs[perm[idx]])
    return perm, cut


def tail_walk(probs: np.ndarray, key: bytes, sigma: float) -> tuple[np.ndarray, int]:
    """Early-exit walk producing only the tail side of the sigma cut.

    Runs keyed Fisher-Yates from the top of the permutation, accumulating
    suffix mass, and stops once the mass strictly after the current position
    exceeds 1-sigma. Returns (tail token ids in suffix-fix order, crossing
    token id); the crossing token is the last entry. Equivalent to
    ``perm[cut:]`` of shuffled_cut, but O((1-sigma)*vocab) instead of
    O(vocab).
    """
    vocab_size = len(probs)
    if vocab_size < 1:
        raise ConfigurationError("empty distribution")
    thresh = 1.0 - sigma
    arr = np.arange(vocab_size, dtype=np.int64)
    tail: list[int] = []
    running = 0.0
    t = 0
    for i in range(vocab_size - 1, 0, -1):
        if running > thresh:
            return np.array(tail[::-1], dtype=np.int64), tail[-1]
        m = i + 1
        limit = (_U64_SPAN // m) * m
        while True:
            r = prf_u64(key, t)
            t += 1
            if r < limit:
                break
        j = r % m
        arr[i], arr[j] = arr[j], arr[i]
        e = int(arr[i])
        tail.append(e)
        running += float(probs[e])
    if running <= thresh:
        tail.append(int(arr[0]))
    return np.array(tail[::-1], dtype=np.int64), tail[-1]
