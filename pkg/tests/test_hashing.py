"""Keyed primitives: encodings, golden vectors, shuffle properties."""

import hashlib
import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credmark.hashing import (ConfigurationError, MessageBits, SeedMaterial,
                              build_seed_table, derive_seed, prf_u64, shuffle,
                              shuffled_cut, step_key, tail_walk)


def golden_records():
    text = resources.files("credmark.data").joinpath("golden_vectors.json").read_text()
    return json.loads(text)


class TestMessageBits:
    def test_round_trip_value_bits(self):
        m = MessageBits(0b10110, 5)
        assert m.bits == (1, 0, 1, 1, 0)
        assert MessageBits.from_bits(m.bits) == m

    @given(st.integers(min_value=1, max_value=24), st.data())
    @settings(max_examples=60, deadline=None)
    def test_round_trip_random(self, width, data):
        value = data.draw(st.integers(min_value=0, max_value=(1 << width) - 1))
        m = MessageBits(value, width)
        assert MessageBits.from_bits(m.bits).value == value
        assert int(str(m), 2) == value

    def test_width_bounds(self):
        with pytest.raises(ConfigurationError):
            MessageBits(0, 25)
        with pytest.raises(ConfigurationError):
            MessageBits(4, 2)

    def test_big_endian_bytes(self):
        assert MessageBits(0xABCDE, 20).to_bytes() == bytes.fromhex("0abcde")


class TestDeriveSeed:
    def test_deterministic(self):
        key = b"\x42" * 32
        m = MessageBits(77, 8)
        assert derive_seed(key, m) == derive_seed(key, m)

    def test_distinct_over_full_width8_space(self):
        key = b"\x00" * 32
        seeds = {derive_seed(key, MessageBits(v, 8)).data for v in range(256)}
        assert len(seeds) == 256

    def test_preimage_layout(self):
        # 35 bytes: 32-byte key, domain byte, 1 message byte, width byte
        preimage = b"\x00" * 32 + b"\x02" + b"\x00" + bytes([8])
        assert len(preimage) == 35
        expect = hashlib.sha256(preimage).digest()
        assert derive_seed(b"\x00" * 32, MessageBits(0, 8)).data == expect

    def test_key_length_enforced(self):
        with pytest.raises(ConfigurationError):
            derive_seed(b"\x00" * 16, MessageBits(0, 8))

    def test_table_order_and_size(self):
        table = build_seed_table(b"\x01" * 32, 4)
        assert len(table) == 16
        assert table[5] == derive_seed(b"\x01" * 32, MessageBits(5, 4))


class TestStepKey:
    def test_deterministic_and_token_sensitivity(self):
        seed = SeedMaterial(b"\x07" * 32)
        assert step_key(seed, 0) == step_key(seed, 0)
        assert step_key(seed, 0) != step_key(seed, 1)

    def test_preimage_layout(self):
        seed = SeedMaterial(b"\x00" * 32)
        expect = hashlib.sha256(b"\x00" * 32 + (7).to_bytes(4, "big") + b"\x01").digest()
        assert step_key(seed, 7) == expect

    def test_sentinel_token_is_encodable(self):
        # the reserved "no context" id is the vocab size itself
        seed = SeedMaterial(b"\x07" * 32)
        assert len(step_key(seed, 1024)) == 32


class TestShuffle:
    def test_is_permutation(self):
        perm = shuffle(257, b"\x05" * 32)
        assert sorted(perm.tolist()) == list(range(257))

    def test_deterministic(self):
        key = hashlib.sha256(b"k").digest()
        assert (shuffle(64, key) == shuffle(64, key)).all()

    def test_distinct_keys_distinct_permutations(self):
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(300):
            perm = shuffle(32, rng.bytes(32))
            seen.add(tuple(perm.tolist()))
        assert len(seen) == 300

    def test_draw_stream_counter_layout(self):
        key = b"\x00" * 32
        expect = hashlib.sha256(key + (3).to_bytes(8, "big")).digest()[:8]
        assert prf_u64(key, 3) == int.from_bytes(expect, "big")

    def test_golden_vectors(self):
        for record in golden_records():
            if record["kind"] == "digest":
                pre = bytes.fromhex(record["preimage_hex"])
                assert hashlib.sha256(pre).hexdigest() == record["digest_hex"], record["label"]
            elif record["kind"] == "shuffle":
                perm = shuffle(record["vocab_size"], bytes.fromhex(record["key_hex"]))
                assert perm.tolist() == record["permutation"], record["label"]

    def test_vocab_one(self):
        assert shuffle(1, b"\x00" * 32).tolist() == [0]


class TestShuffledCut:
    @given(st.integers(min_value=2, max_value=48), st.integers(min_value=0, max_value=2 ** 32),
           st.floats(min_value=0.05, max_value=1.0))
    @settings(max_examples=80, deadline=None)
    def test_cut_is_first_sigma_crossing(self, vocab, key_seed, sigma):
        rng = np.random.default_rng(key_seed)
        probs = rng.dirichlet(np.ones(vocab))
        key = hashlib.sha256(str(key_seed).encode()).digest()
        perm, cut = shuffled_cut(probs, key, sigma)
        # strict suffix after the cut carries at most 1 - sigma
        suffix = probs[perm[cut + 1:]].sum()
        assert suffix <= (1 - sigma) + 1e-12
        if cut > 0:
            # one position earlier the suffix would exceed it
            assert probs[perm[cut:]].sum() > (1 - sigma) - 1e-12

    @given(st.integers(min_value=2, max_value=48), st.integers(min_value=0, max_value=2 ** 32))
    @settings(max_examples=60, deadline=None)
    def test_tail_walk_matches_cut(self, vocab, key_seed):
        rng = np.random.default_rng(key_seed)
        probs = rng.dirichlet(np.ones(vocab) * 0.6)
        key = hashlib.sha256(str(key_seed).encode()).digest()
        perm, cut = shuffled_cut(probs, key, 0.9)
        tail_ids, crossing = tail_walk(probs, key, 0.9)
        assert set(tail_ids.tolist()) == set(perm[cut:].tolist())
        assert crossing == perm[cut]
