#!/usr/bin/env python3
"""Freeze the cross-implementation conformance vectors
(src/credmark/data/golden_vectors.json).

Digest records pin the exact preimage layouts (seed derivation, step keys,
draw stream); shuffle records pin the keyed Fisher-Yates output. Every
shuffle record is recomputed here with an independent inline walk before it
is written, so the frozen file does not simply mirror the library code.
"""

from __future__ import annotations

import hashlib
import json
import pathlib

from credmark.hashing import MessageBits, derive_seed, prf_u64, shuffle, step_key, SeedMaterial

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "credmark" / "data" / "golden_vectors.json"


def independent_shuffle(vocab_size: int, key: bytes) -> list[int]:
    """Plain-python rewrite of the keyed shuffle, sharing no code with the
    library implementation."""
    arr = list(range(vocab_size))
    counter = 0
    for i in range(vocab_size - 1, 0, -1):
        bound = i + 1
        usable = (2 ** 64 // bound) * bound
        while True:
            digest = hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
            counter += 1
            value = int.from_bytes(digest[:8], "big")
            if value < usable:
                break
        pick = value % bound
        arr[i], arr[pick] = arr[pick], arr[i]
    return arr


def digest_record(label: str, preimage: bytes) -> dict:
    return {
        "kind": "digest",
        "label": label,
        "preimage_hex": preimage.hex(),
        "digest_hex": hashlib.sha256(preimage).hexdigest(),
    }


def shuffle_record(label: str, vocab_size: int, key: bytes) -> dict:
    lib = shuffle(vocab_size, key)
    ind = independent_shuffle(vocab_size, key)
    assert lib.tolist() == ind, f"library and independent walks disagree for {label}"
    return {
        "kind": "shuffle",
        "label": label,
        "key_hex": key.hex(),
        "vocab_size": vocab_size,
        "permutation": ind,
    }


def main():
    records = []

    # classic known-answer digests
    records.append(digest_record("sha256 of empty input", b""))
    records.append(digest_record("sha256 of 'abc'", b"abc"))

    # seed derivation: key || 0x02 || message bytes || width byte
    zero_key = b"\x00" * 32
    m0 = MessageBits(0, 8)
    records.append(digest_record(
        "seed derivation, zero key, message 0 of width 8 (35-byte preimage)",
        zero_key + b"\x02" + m0.to_bytes() + bytes([8])))
    assert derive_seed(zero_key, m0).data == bytes.fromhex(records[-1]["digest_hex"])

    m20 = MessageBits(0xABCDE, 20)
    records.append(digest_record(
        "seed derivation, 0x11.. key, message 0xabcde of width 20",
        (b"\x11" * 32) + b"\x02" + m20.to_bytes() + bytes([20])))
    assert derive_seed(b"\x11" * 32, m20).data == bytes.fromhex(records[-1]["digest_hex"])

    # step key: seed || u32be(prev) || 0x01
    records.append(digest_record(
        "step key, zero seed, prev token 7 (37-byte preimage)",
        zero_key + (7).to_bytes(4, "big") + b"\x01"))
    assert step_key(SeedMaterial(zero_key), 7) == bytes.fromhex(records[-1]["digest_hex"])

    # draw stream: key || u64be(counter)
    records.append(digest_record(
        "draw stream, zero key, counter 0 (40-byte preimage)",
        zero_key + (0).to_bytes(8, "big")))
    assert prf_u64(zero_key, 0) == int.from_bytes(
        bytes.fromhex(records[-1]["digest_hex"])[:8], "big")

    # keyed shuffles
    records.append(shuffle_record("zero key, vocab 8", 8, zero_key))
    records.append(shuffle_record("zero key, vocab 16", 16, zero_key))
    records.append(shuffle_record("0xa5.. key, vocab 32", 32, b"\xa5" * 32))
    records.append(shuffle_record(
        "step key of zero seed after token 3, vocab 64", 64,
        step_key(SeedMaterial(zero_key), 3)))
    records.append(shuffle_record("zero key, vocab 1024", 1024, zero_key))

    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")
    print(f"wrote {OUT} with {len(records)} records")


if __name__ == "__main__":
    main()
