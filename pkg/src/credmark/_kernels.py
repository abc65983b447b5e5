"""Vectorized hot paths for the keyed shuffle walks.

The extraction side of the scheme evaluates the same keyed Fisher-Yates walk
for every candidate seed at every text position, so the SHA-256 draw stream
is evaluated in 128-lane blocks (one lane per key) where LLVM keeps the
compression function in 32-bit SIMD registers. All outputs are bit-identical
to the pure-Python reference in hashing.py; parity is enforced by tests.

Walk layout: Fisher-Yates fixes shuffled positions from the top down, so the
running suffix mass is known as each element is fixed. An element belongs to
the "tail" side of the sigma cut iff the suffix mass strictly after it is at
most 1-sigma, which lets the walk stop after ~(1-sigma)*vocab steps instead
of shuffling the whole vocabulary. The shuffle array is virtualized behind a
byte-stamp overlay because only ~(1-sigma)*vocab of its entries are ever
touched.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange, uint32, uint64

_LANES = 128
_TBLOCK = 16

_K32 = np.array([
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
], dtype=np.uint32)

_UMAX = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(inline="always", cache=True)
def _sha_rounds(w, n, out):
    """SHA-256 schedule + compression over n lanes; w[0..15, lane] pre-filled."""
    for i in range(16, 64):
        for l in range(n):
            x = w[i - 15, l]
            s0 = uint32(((x >> 7) | (x << 25)) ^ ((x >> 18) | (x << 14)) ^ (x >> 3))
            y = w[i - 2, l]
            s1 = uint32(((y >> 17) | (y << 15)) ^ ((y >> 19) | (y << 13)) ^ (y >> 10))
            w[i, l] = uint32(w[i - 16, l] + s0 + w[i - 7, l] + s1)
    a = np.empty(n, np.uint32); b = np.empty(n, np.uint32)
    c = np.empty(n, np.uint32); d = np.empty(n, np.uint32)
    e = np.empty(n, np.uint32); f = np.empty(n, np.uint32)
    g = np.empty(n, np.uint32); h = np.empty(n, np.uint32)
    for l in range(n):
        a[l] = uint32(0x6a09e667); b[l] = uint32(0xbb67ae85)
        c[l] = uint32(0x3c6ef372); d[l] = uint32(0xa54ff53a)
        e[l] = uint32(0x510e527f); f[l] = uint32(0x9b05688c)
        g[l] = uint32(0x1f83d9ab); h[l] = uint32(0x5be0cd19)
    for i in range(64):
        ki = _K32[i]
        for l in range(n):
            ee = e[l]; aa = a[l]
            s1 = uint32(((ee >> 6) | (ee << 26)) ^ ((ee >> 11) | (ee << 21)) ^ ((ee >> 25) | (ee << 7)))
            ch = uint32((ee & f[l]) ^ ((~ee) & g[l]))
            t1 = uint32(h[l] + s1 + ch + ki + w[i, l])
            s0 = uint32(((aa >> 2) | (aa << 30)) ^ ((aa >> 13) | (aa << 19)) ^ ((aa >> 22) | (aa << 10)))
            mj = uint32((aa & b[l]) ^ (aa & c[l]) ^ (b[l] & c[l]))
            t2 = uint32(s0 + mj)
            h[l] = g[l]; g[l] = f[l]; f[l] = ee; e[l] = uint32(d[l] + t1)
            d[l] = c[l]; c[l] = b[l]; b[l] = aa; a[l] = uint32(t1 + t2)
    for l in range(n):
        out[l, 0] = uint32(uint32(0x6a09e667) + a[l])
        out[l, 1] = uint32(uint32(0xbb67ae85) + b[l])
        out[l, 2] = uint32(uint32(0x3c6ef372) + c[l])
        out[l, 3] = uint32(uint32(0xa54ff53a) + d[l])
        out[l, 4] = uint32(uint32(0x510e527f) + e[l])
        out[l, 5] = uint32(uint32(0x9b05688c) + f[l])
        out[l, 6] = uint32(uint32(0x1f83d9ab) + g[l])
        out[l, 7] = uint32(uint32(0x5be0cd19) + h[l])


@njit(inline="always", cache=True)
def _stream_tblock_active(keys, lo, active, na, t_base, w, dg, draws):
    """draws[k, j] = first 8 bytes of sha256(key_active[k] || u64be(t_base+j)).

    Only the still-active lanes are hashed; by construction every active lane
    has consumed exactly t_base draws, so they share the counter window.
    """
    for k in range(na):
        l = active[k]
        for i in range(8):
            w[i, k] = keys[lo + l, i]
        w[8, k] = uint32(0)
        w[10, k] = uint32(0x80000000)
        w[11, k] = uint32(0); w[12, k] = uint32(0)
        w[13, k] = uint32(0); w[14, k] = uint32(0)
        w[15, k] = uint32(320)               # 40 bytes * 8
    for j in range(_TBLOCK):
        for k in range(na):
            w[9, k] = uint32(t_base + j)     # counters stay far below 2^32
        _sha_rounds(w, na, dg)
        for k in range(na):
            draws[k, j] = (uint64(dg[k, 0]) << uint64(32)) | uint64(dg[k, 1])


@njit(inline="always", cache=True)
def _reject_bound(m):
    # accept r <= bound, i.e. r below the largest multiple of m in [0, 2^64)
    rem = (_UMAX % m + uint64(1)) % m
    return _UMAX - rem


@njit(inline="always", cache=True)
def _arr_read(val, stamp, l, x):
    if stamp[l, x]:
        return val[l, x]
    return x


@njit(cache=True, parallel=True)
def tail_masks(keys, probs, sigma, masks, overflow):
    """Per-key bitmask of the tail side of the sigma cut.

    keys: (n, 8) uint32 digest words; probs: (V,) float64; masks: (n, ceil(V/8))
    uint8 zeroed by caller; bit v is (masks[j, v>>3] >> (v&7)) & 1.
    """
    n = keys.shape[0]
    v = probs.shape[0]
    budget = 4 * v + 64
    thresh = 1.0 - sigma
    nchunk = (n + _LANES - 1) // _LANES
    for cidx in prange(nchunk):
        lo = cidx * _LANES
        nl = min(_LANES, n - lo)
        val = np.empty((nl, v), dtype=np.int32)
        stamp = np.zeros((nl, v), dtype=np.uint8)
        w = np.empty((64, nl), dtype=np.uint32)
        dg = np.empty((nl, 8), dtype=np.uint32)
        draws = np.empty((nl, _TBLOCK), dtype=np.uint64)
        active = np.empty(nl, dtype=np.int64)
        ipos = np.empty(nl, dtype=np.int64)
        tmass = np.zeros(nl, dtype=np.float64)
        done = np.zeros(nl, dtype=np.uint8)
        for l in range(nl):
            ipos[l] = v - 1
        t_base = 0
        while t_base < budget:
            na = 0
            for l in range(nl):
                if not done[l]:
                    active[na] = l
                    na += 1
            if na == 0:
                break
            _stream_tblock_active(keys, lo, active, na, t_base, w, dg, draws)
            for k in range(na):
                l = active[k]
                for off in range(_TBLOCK):
                    if tmass[l] > thresh:
                        done[l] = 1
                        break
                    i = ipos[l]
                    if i <= 0:
                        if tmass[l] <= thresh:
                            e0 = _arr_read(val, stamp, l, 0)
                            masks[lo + l, e0 >> 3] |= np.uint8(1 << (e0 & 7))
                        done[l] = 1
                        break
                    r = draws[k, off]
                    m = uint64(i + 1)
                    if r > _reject_bound(m):
                        continue
                    j = np.int64(r % m)
                    e = _arr_read(val, stamp, l, j)
                    if j != i:
                        val[l, j] = _arr_read(val, stamp, l, i)
                        stamp[l, j] = 1
                    masks[lo + l, e >> 3] |= np.uint8(1 << (e & 7))
                    tmass[l] += probs[e]
                    ipos[l] = i - 1
            t_base += _TBLOCK
        for l in range(nl):
            if not done[l]:
                overflow[lo + l] = 1


@njit(cache=True, parallel=True)
def tail_hits(keys, probs, sigma, target, hits, overflow):
    """hits[j] = 1 iff token ``target`` lies on the tail side under key j.

    Early exit in both directions: once the target is fixed its side is
    known; once the suffix mass crosses 1-sigma no later element is tail.
    """
    n = keys.shape[0]
    v = probs.shape[0]
    budget = 4 * v + 64
    thresh = 1.0 - sigma
    nchunk = (n + _LANES - 1) // _LANES
    for cidx in prange(nchunk):
        lo = cidx * _LANES
        nl = min(_LANES, n - lo)
        val = np.empty((nl, v), dtype=np.int32)
        stamp = np.zeros((nl, v), dtype=np.uint8)
        w = np.empty((64, nl), dtype=np.uint32)
        dg = np.empty((nl, 8), dtype=np.uint32)
        draws = np.empty((nl, _TBLOCK), dtype=np.uint64)
        active = np.empty(nl, dtype=np.int64)
        ipos = np.empty(nl, dtype=np.int64)
        tmass = np.zeros(nl, dtype=np.float64)
        done = np.zeros(nl, dtype=np.uint8)
        for l in range(nl):
            ipos[l] = v - 1
        t_base = 0
        while t_base < budget:
            na = 0
            for l in range(nl):
                if not done[l]:
                    active[na] = l
                    na += 1
            if na == 0:
                break
            _stream_tblock_active(keys, lo, active, na, t_base, w, dg, draws)
            for k in range(na):
                l = active[k]
                for off in range(_TBLOCK):
                    if tmass[l] > thresh:
                        done[l] = 1          # target still unfixed: not tail
                        break
                    i = ipos[l]
                    if i <= 0:
                        if tmass[l] <= thresh and _arr_read(val, stamp, l, 0) == target:
                            hits[lo + l] = 1
                        done[l] = 1
                        break
                    r = draws[k, off]
                    m = uint64(i + 1)
                    if r > _reject_bound(m):
                        continue
                    j = np.int64(r % m)
                    e = _arr_read(val, stamp, l, j)
                    if j != i:
                        val[l, j] = _arr_read(val, stamp, l, i)
                        stamp[l, j] = 1
                    if e == target:
                        hits[lo + l] = 1     # fixed while mass still under cut
                        done[l] = 1
                        break
                    tmass[l] += probs[e]
                    ipos[l] = i - 1
            t_base += _TBLOCK
        for l in range(nl):
            if not done[l]:
                overflow[lo + l] = 1


@njit(cache=True, parallel=True)
def full_perms(keys, v, perms, overflow):
    """Complete keyed Fisher-Yates permutations, one row per key."""
    n = keys.shape[0]
    budget = 4 * v + 64
    nchunk = (n + _LANES - 1) // _LANES
    for cidx in prange(nchunk):
        lo = cidx * _LANES
        nl = min(_LANES, n - lo)
        w = np.empty((64, nl), dtype=np.uint32)
        dg = np.empty((nl, 8), dtype=np.uint32)
        draws = np.empty((nl, _TBLOCK), dtype=np.uint64)
        active = np.empty(nl, dtype=np.int64)
        ipos = np.empty(nl, dtype=np.int64)
        done = np.zeros(nl, dtype=np.uint8)
        for l in range(nl):
            ipos[l] = v - 1
            for x in range(v):
                perms[lo + l, x] = x
        t_base = 0
        while t_base < budget:
            na = 0
            for l in range(nl):
                if not done[l]:
                    active[na] = l
                    na += 1
            if na == 0:
                break
            _stream_tblock_active(keys, lo, active, na, t_base, w, dg, draws)
            for k in range(na):
                l = active[k]
                for off in range(_TBLOCK):
                    i = ipos[l]
                    if i <= 0:
                        done[l] = 1
                        break
                    r = draws[k, off]
                    m = uint64(i + 1)
                    if r > _reject_bound(m):
                        continue
                    j = np.int64(r % m)
                    tmp = perms[lo + l, i]; perms[lo + l, i] = perms[lo + l, j]; perms[lo + l, j] = tmp
                    ipos[l] = i - 1
            t_base += _TBLOCK
        for l in range(nl):
            if not done[l]:
                overflow[lo + l] = 1


@njit(cache=True, parallel=True)
def step_keys_sha(seed_words, prev, keys_out):
    """keys_out[j] = sha256 words of (seed_j || u32be(prev) || 0x01)."""
    n = seed_words.shape[0]
    nchunk = (n + _LANES - 1) // _LANES
    for cidx in prange(nchunk):
        lo = cidx * _LANES
        nl = min(_LANES, n - lo)
        w = np.empty((64, nl), dtype=np.uint32)
        dg = np.empty((nl, 8), dtype=np.uint32)
        for l in range(nl):
            for i in range(8):
                w[i, l] = seed_words[lo + l, i]
            w[8, l] = uint32(prev)
            w[9, l] = uint32(0x01800000)     # domain byte 0x01 then pad bit
            w[10, l] = uint32(0); w[11, l] = uint32(0); w[12, l] = uint32(0)
            w[13, l] = uint32(0); w[14, l] = uint32(0)
            w[15, l] = uint32(296)           # 37 bytes * 8
        _sha_rounds(w, nl, dg)
        for l in range(nl):
            for i in range(8):
                keys_out[lo + l, i] = dg[l, i]


def key_bytes_to_words(keys: list[bytes] | bytes) -> np.ndarray:
    """Pack 32-byte digests into (n, 8) big-endian uint32 word arrays."""
    if isinstance(keys, (bytes, bytearray)):
        keys = [bytes(keys)]
    buf = b"".join(keys)
    return np.frombuffer(buf, dtype=">u4").reshape(len(keys), 8).astype(np.uint32)


def words_to_key_bytes(words: np.ndarray) -> bytes:
    return words.astype(">u4").tobytes()


class KernelOverflowError(RuntimeError):
    """A walk exhausted its draw budget; indicates a bug, not bad luck."""


def _check_overflow(overflow: np.ndarray):
    if overflow.any():
        raise KernelOverflowError(f"{int(overflow.sum())} walk(s) exhausted the draw budget")


def tail_mask_batch(keys_words: np.ndarray, probs: np.ndarray, sigma: float) -> np.ndarray:
    """Tail-side bitmasks for many keys over one distribution."""
    from . import _fastwalk
    lib = _fastwalk.load()
    if lib is not None:
        return _fastwalk.tail_masks_c(lib, keys_words, probs, float(sigma))
    n = keys_words.shape[0]
    v = len(probs)
    masks = np.zeros((n, (v + 7) // 8), dtype=np.uint8)
    overflow = np.zeros(n, dtype=np.uint8)
    tail_masks(keys_words, np.ascontiguousarray(probs, dtype=np.float64),
               float(sigma), masks, overflow)
    _check_overflow(overflow)
    return masks


def tail_hit_batch(keys_words: np.ndarray, probs: np.ndarray, sigma: float, target: int) -> np.ndarray:
    """Tail membership of one target token under many keys."""
    from . import _fastwalk
    lib = _fastwalk.load()
    if lib is not None:
        return _fastwalk.tail_hits_c(lib, keys_words, probs, float(sigma), int(target))
    n = keys_words.shape[0]
    hits = np.zeros(n, dtype=np.uint8)
    overflow = np.zeros(n, dtype=np.uint8)
    tail_hits(keys_words, np.ascontiguousarray(probs, dtype=np.float64),
              float(sigma), int(target), hits, overflow)
    _check_overflow(overflow)
    return hits


def full_perm_batch(keys_words: np.ndarray, vocab_size: int) -> np.ndarray:
    n = keys_words.shape[0]
    perms = np.empty((n, vocab_size), dtype=np.int32)
    overflow = np.zeros(n, dtype=np.uint8)
    full_perms(keys_words, vocab_size, perms, overflow)
    _check_overflow(overflow)
    return perms


def step_key_batch(seed_words: np.ndarray, prev_token: int) -> np.ndarray:
    out = np.empty_like(seed_words)
    step_keys_sha(seed_words, int(prev_token), out)
    return out


def mask_bit_column(masks: np.ndarray, token: int) -> np.ndarray:
    """Extract bit ``token`` of every row as a uint8 vector."""
    return (masks[:, token >> 3] >> (token & 7)) & 1


@njit(cache=True)
def accumulate_mask_columns(masks, tokens, text_idx, totals):
    """totals[text_idx[q]] += bit column ``tokens[q]`` of masks, per query."""
    nq = tokens.shape[0]
    n = masks.shape[0]
    for q in range(nq):
        t = text_idx[q]
        byte = tokens[q] >> 3
        shift = tokens[q] & 7
        for j in range(n):
            totals[t, j] += (masks[j, byte] >> shift) & 1


@njit(cache=True)
def write_mask_columns(masks, tokens, row_idx, rows):
    """rows[row_idx[q], :] = bit column ``tokens[q]`` of masks, per query."""
    nq = tokens.shape[0]
    n = masks.shape[0]
    for q in range(nq):
        i = row_idx[q]
        byte = tokens[q] >> 3
        shift = tokens[q] & 7
        for j in range(n):
            rows[i, j] = (masks[j, byte] >> shift) & 1


@njit(cache=True)
def tail_ids_single(key, probs, sigma, out_ids):
    """Single-key early-exit walk; returns (count, crossing token).

    out_ids[:count] receives the tail-side token ids in suffix-fix order
    (the crossing token is the last one written). out_ids must have room
    for the whole vocabulary.
    """
    v = probs.shape[0]
    thresh = 1.0 - sigma
    val = np.empty(v, dtype=np.int32)
    stamp = np.zeros(v, dtype=np.uint8)
    w = np.empty((64, 1), dtype=np.uint32)
    dg = np.empty((1, 8), dtype=np.uint32)
    for i in range(8):
        w[i, 0] = key[i]
    w[8, 0] = uint32(0)
    w[10, 0] = uint32(0x80000000)
    w[11, 0] = uint32(0); w[12, 0] = uint32(0)
    w[13, 0] = uint32(0); w[14, 0] = uint32(0)
    w[15, 0] = uint32(320)
    running = 0.0
    count = 0
    t = 0
    crossing = -1
    i = v - 1
    while True:
        if running > thresh:
            return count, crossing
        if i <= 0:
            if running <= thresh:
                e0 = np.int64(0)
                if stamp[0]:
                    e0 = np.int64(val[0])
                out_ids[count] = e0
                crossing = e0
                count += 1
            return count, crossing
        w[9, 0] = uint32(t)
        _sha_rounds(w, 1, dg)
        t += 1
        r = (uint64(dg[0, 0]) << uint64(32)) | uint64(dg[0, 1])
        m = uint64(i + 1)
        if r > _reject_bound(m):
            continue
        j = np.int64(r % m)
        e = np.int64(j)
        if stamp[j]:
            e = np.int64(val[j])
        if j != i:
            ei = np.int64(i)
            if stamp[i]:
                ei = np.int64(val[i])
            val[j] = ei
            stamp[j] = 1
        out_ids[count] = e
        crossing = e
        count += 1
        running += probs[e]
        i -= 1


def warm_kernels():
    """Compile (or load from cache) every kernel with tiny inputs."""
    kw = key_bytes_to_words([b"\x00" * 32])
    probs = np.full(16, 1.0 / 16)
    tail_mask_batch(kw, probs, 0.9)
    tail_hit_batch(kw, probs, 0.9, 3)
    full_perm_batch(kw, 16)
    step_key_batch(kw, 0)
