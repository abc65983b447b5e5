"""Perturbation attacks: determinism, shape guarantees, and surface edits."""

import numpy as np
import pytest

from credmark.attacks import (AttackError, AttackSpec, apply_attack,
                              attack_copy_paste, attack_delete,
                              attack_homoglyph, attack_substitute)
from credmark.providers import SyntheticProvider, Tokenizer


@pytest.fixture(scope="module")
def provider():
    return SyntheticProvider(vocab_size=64, gen_seed=3)


class TestDelete:
    def test_ratio_zero_identity(self):
        text = list(range(50))
        assert attack_delete(text, 0.0, 1) == text

    def test_half_leaves_contiguous_gap(self):
        text = list(range(200))
        out = attack_delete(text, 0.5, 7)
        assert len(out) == 100
        # survivors keep relative order and form prefix + suffix of the original
        gaps = [b - a for a, b in zip(out, out[1:])]
        assert sum(g > 1 for g in gaps) <= 1
        assert all(g >= 1 for g in gaps)

    def test_deterministic(self):
        text = list(range(60))
        assert attack_delete(text, 0.25, 5) == attack_delete(text, 0.25, 5)
        assert attack_delete(text, 0.25, 5) != attack_delete(text, 0.25, 6)

    def test_full_deletion_rejected(self):
        with pytest.raises(AttackError):
            attack_delete(list(range(4)), 1.0, 0)


class TestSubstitute:
    def test_ratio_zero_identity(self, provider):
        text = list(range(30))
        assert attack_substitute(text, 0.0, 1, provider) == text

    def test_replacements_differ_and_bounded(self, provider):
        text = [int(t) for t in np.random.default_rng(0).integers(0, 64, 80)]
        out = attack_substitute(text, 0.2, 3, provider)
        changed = [i for i in range(len(text)) if out[i] != text[i]]
        assert 0 < len(changed) <= int(np.ceil(0.2 * len(text)))
        assert len(out) == len(text)

    def test_deterministic(self, provider):
        text = [int(t) for t in np.random.default_rng(1).integers(0, 64, 50)]
        assert attack_substitute(text, 0.3, 9, provider) == \
            attack_substitute(text, 0.3, 9, provider)


class TestHomoglyph:
    def test_world_becomes_wor1d(self):
        # 'world' has two lookalike sites ('o', 'l'); at ratio 0.5 this seed
        # picks the 'l', producing 'wor1d', which falls out of vocabulary
        tok = Tokenizer.train("hello world again world", vocab_size=16)
        text = tok.encode("world")
        chars = list(tok.decode(text))
        import numpy as np
        from credmark.attacks import HOMOGLYPHS
        eligible = [i for i, ch in enumerate(chars) if ch in HOMOGLYPHS]
        rng = np.random.Generator(np.random.PCG64(0))
        pick = eligible[int(rng.choice(len(eligible), size=1, replace=False)[0])]
        chars[pick] = HOMOGLYPHS[chars[pick]]
        assert "".join(chars) == "wor1d"
        out = attack_homoglyph(text, 0.5, 0, tok)
        assert out == [0]
        assert HOMOGLYPHS["l"] == "1"

    def test_ratio_zero_identity(self):
        tok = Tokenizer.train("alpha beta", vocab_size=8)
        text = tok.encode("alpha beta")
        assert attack_homoglyph(text, 0.0, 0, tok) == text

    def test_perturbed_words_map_to_unk(self):
        # non-ascii lookalikes shatter words on retokenization, so the token
        # count may grow; every perturbed fragment lands on the unknown id
        tok = Tokenizer.train("the old river turned near the gate", vocab_size=16)
        text = tok.encode("the old river turned near the gate")
        out = attack_homoglyph(text, 1.0, 4, tok)
        assert 0 in out
        assert out != text
        assert len(out) >= len(text)
        mild = attack_homoglyph(text, 0.15, 4, tok)
        assert 0 in mild
        assert sum(1 for t in mild if t != 0) >= 3   # most words survive

    def test_deterministic(self):
        tok = Tokenizer.train("some longer example text with letters", vocab_size=16)
        text = tok.encode("some longer example text with letters")
        assert attack_homoglyph(text, 0.5, 11, tok) == attack_homoglyph(text, 0.5, 11, tok)


class TestCopyPaste:
    def test_ratio_one_identity(self):
        wm = list(range(20))
        out, span = attack_copy_paste(wm, [], 1.0, 0)
        assert out == wm and span == (0, 20)

    def test_total_length_arithmetic(self):
        wm = list(range(200))
        human = list(np.random.default_rng(0).integers(0, 64, 2000))
        out, span = attack_copy_paste(wm, human, 0.2, 3)
        assert len(out) == 1000
        assert out[span[0]:span[1]] == wm       # span intact

    def test_deterministic(self):
        wm = list(range(40))
        human = list(range(100, 400))
        a = attack_copy_paste(wm, human, 0.5, 9)
        b = attack_copy_paste(wm, human, 0.5, 9)
        assert a == b

    def test_short_human_source_rejected(self):
        with pytest.raises(AttackError):
            attack_copy_paste(list(range(50)), list(range(10)), 0.2, 0)


class TestDispatch:
    def test_spec_validation(self):
        with pytest.raises(AttackError):
            AttackSpec("reverse", 0.1)
        with pytest.raises(AttackError):
            AttackSpec("deletion", 1.5)

    def test_apply_none(self):
        assert apply_attack(AttackSpec("none", 0.0), [1, 2]) == [1, 2]

    def test_missing_dependencies_raise(self):
        with pytest.raises(AttackError):
            apply_attack(AttackSpec("substitution", 0.2), [1, 2, 3])
        with pytest.raises(AttackError):
            apply_attack(AttackSpec("copy_paste", 0.5), [1, 2, 3])
