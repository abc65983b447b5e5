"""Loader for the optional C walk accelerator (_fastwalk.c).

Compiles the shared library on first use (cached next to the source), loads
it through ctypes, and verifies a known-answer self-test before handing it
out. Any failure (no compiler, wrong arch, failed self-test) degrades to
None and callers use the numba kernels instead; results are identical either
way.
"""

from __future__ import annotations

import ctypes
import os
import subprocess
import threading
from pathlib import Path

import numpy as np

_SRC = Path(__file__).with_name("_fastwalk.c")
_LIB = Path(__file__).with_name("_fastwalk_lib.so")

_lock = threading.Lock()
_lib = None
_load_attempted = False


def _compile() -> bool:
    cc = os.environ.get("CC", "cc")
    cmd = [cc, "-O3", "-fPIC", "-shared", "-mssse3", "-msse4.1", "-msha",
           str(_SRC), "-o", str(_LIB)]
    try:
        res = subprocess.run(cmd, capture_output=True, timeout=120)
    except (OSError, subprocess.TimeoutExpired):
        return False
    return res.returncode == 0 and _LIB.exists()


def load():
    """The ctypes library, or None if the accelerator is unusable."""
    global _lib, _load_attempted
    with _lock:
        if _load_attempted:
            return _lib
        _load_attempted = True
        if os.environ.get("CREDMARK_NO_FASTWALK"):
            return None
        if not _LIB.exists() or _LIB.stat().st_mtime < _SRC.stat().st_mtime:
            if not _compile():
                return None
        try:
            lib = ctypes.CDLL(str(_LIB))
        except OSError:
            return None
        lib.cm_available.restype = ctypes.c_int
        lib.cm_selftest.restype = ctypes.c_int
        for name in ("cm_walk_tail_masks", "cm_walk_tail_hits"):
            fn = getattr(lib, name)
            fn.restype = ctypes.c_int
        if lib.cm_selftest() != 0:
            return None
        _lib = lib
        return _lib


class WalkScratch:
    """Per-thread scratch buffers for the C walks."""

    def __init__(self, vocab: int):
        self.vocab = vocab
        self.val = np.empty(4 * vocab, dtype=np.int32)
        self.stamp = np.zeros(4 * vocab, dtype=np.uint32)
        self.epoch = ctypes.c_uint32(0)


_scratch_tls = threading.local()


def _scratch_for(vocab: int) -> WalkScratch:
    sc = getattr(_scratch_tls, "sc", None)
    if sc is None or sc.vocab != vocab:
        sc = WalkScratch(vocab)
        _scratch_tls.sc = sc
    return sc


def _ptr(arr: np.ndarray):
    return arr.ctypes.data_as(ctypes.c_void_p)


def tail_masks_c(lib, keys_words: np.ndarray, probs: np.ndarray, sigma: float,
                 n_threads: int = 2) -> np.ndarray:
    """C-backed tail_mask_batch; keys_words is (n, 8) uint32."""
    n = keys_words.shape[0]
    vocab = len(probs)
    vbytes = (vocab + 7) // 8
    masks = np.zeros((n, vbytes), dtype=np.uint8)
    keys_c = np.ascontiguousarray(keys_words, dtype=np.uint32)
    probs_c = np.ascontiguousarray(probs, dtype=np.float64)

    def run(lo: int, hi: int) -> int:
        sc = _scratch_for(vocab)
        return lib.cm_walk_tail_masks(
            ctypes.c_void_p(keys_c.ctypes.data + lo * 32), ctypes.c_int64(hi - lo),
            _ptr(probs_c), ctypes.c_int32(vocab), ctypes.c_double(sigma),
            ctypes.c_void_p(masks.ctypes.data + lo * vbytes), ctypes.c_int64(vbytes),
            _ptr(sc.val), _ptr(sc.stamp), ctypes.byref(sc.epoch), ctypes.c_int(0))

    rcs = _run_split(run, n, n_threads)
    if any(rc != 0 for rc in rcs):
        raise RuntimeError("fastwalk draw budget exhausted")
    return masks


def tail_hits_c(lib, keys_words: np.ndarray, probs: np.ndarray, sigma: float,
                target: int, n_threads: int = 2) -> np.ndarray:
    n = keys_words.shape[0]
    vocab = len(probs)
    hits = np.zeros(n, dtype=np.uint8)
    keys_c = np.ascontiguousarray(keys_words, dtype=np.uint32)
    probs_c = np.ascontiguousarray(probs, dtype=np.float64)

    def run(lo: int, hi: int) -> int:
        sc = _scratch_for(vocab)
        return lib.cm_walk_tail_hits(
            ctypes.c_void_p(keys_c.ctypes.data + lo * 32), ctypes.c_int64(hi - lo),
            _ptr(probs_c), ctypes.c_int32(vocab), ctypes.c_double(sigma),
            ctypes.c_int32(target),
            ctypes.c_void_p(hits.ctypes.data + lo),
            _ptr(sc.val), _ptr(sc.stamp), ctypes.byref(sc.epoch), ctypes.c_int(0))

    rcs = _run_split(run, n, n_threads)
    if any(rc != 0 for rc in rcs):
        raise RuntimeError("fastwalk draw budget exhausted")
    return hits


def _run_split(run, n: int, n_threads: int) -> list[int]:
    if n < 512 or n_threads <= 1:
        return [run(0, n)]
    mid = n // 2
    out = [0, 0]
    th = threading.Thread(target=lambda: out.__setitem__(1, run(mid, n)))
    th.start()
    out[0] = run(0, mid)
    th.join()
    return out
