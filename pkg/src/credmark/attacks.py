"""Text perturbation attacks for robustness evaluation.

All attacks are deterministic under a fixed rng_seed. Deletion removes one
contiguous span; substitution swaps tokens for plausible in-context
alternatives; homoglyph rewrites characters with lookalikes so perturbed
words fall out of the vocabulary; copy-paste plants the watermarked span
inside surrounding human text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HOMOGLYPHS = {
    "l": "1",
    "O": "0",
    "o": "ο",   # greek omicron
    "a": "а",   # cyrillic a
    "e": "е",   # cyrillic ie
    "i": "і",   # cyrillic i
}


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str                  # deletion | substitution | homoglyph | copy_paste
    ratio: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("deletion", "substitution", "homoglyph", "copy_paste", "none"):
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if not 0 <= self.ratio <= 1:
            raise AttackError("ratio must be in [0, 1]")


def attack_delete(text, ratio: float, rng_seed: int = 0) -> list[int]:
    """Remove one contiguous span of floor(ratio * len) tokens at a uniform
    start position."""
    text = [int(t) for t in text]
    n = len(text)
    k = int(ratio * n)
    if k >= n:
        raise AttackError("deleting the whole text leaves nothing to extract")
    if k == 0:
        return list(text)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    start = int(rng.integers(0, n - k + 1))
    return text[:start] + text[start + k:]


def attack_substitute(text, ratio: float, rng_seed: int, provider) -> list[int]:
    """Replace up to ceil(ratio * len) tokens with provider-plausible
    alternatives.

    Each step picks an unmodified position and swaps its token for one of
    the provider's top-5 continuations at that context, never the original;
    gives up after three times the target number of attempts.
    """
    text = [int(t) for t in text]
    if ratio >= 1:
        raise AttackError("substitution ratio must be < 1")
    n = len(text)
    target = int(np.ceil(ratio * n))
    if target == 0:
        return list(text)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    modified: set[int] = set()
    attempts = 0
    max_attempts = 3 * target
    while len(modified) < target and attempts < max_attempts:
        attempts += 1
        pos = int(rng.integers(0, n))
        if pos in modified:
            continue
        logits = provider.logits(text[:pos])
        top5 = np.argsort(-logits, kind="stable")[:5]
        candidates = [int(t) for t in top5 if int(t) != text[pos]]
        if not candidates:
            continue
        text[pos] = candidates[int(rng.integers(0, len(candidates)))]
        modified.add(pos)
    return text


def attack_homoglyph(text, ratio: float, rng_seed: int, tokenizer) -> list[int]:
    """Detokenize, swap lookalike characters at a ratio of the eligible
    sites, retokenize (perturbed words usually map to the unknown id)."""
    text = [int(t) for t in text]
    surface = tokenizer.decode(text)
    chars = list(surface)
    eligible = [i for i, ch in enumerate(chars) if ch in HOMOGLYPHS]
    target = int(np.ceil(ratio * len(eligible)))
    if target == 0:
        return list(text)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    picks = rng.choice(len(eligible), size=target, replace=False)
    for p in picks:
        idx = eligible[int(p)]
        chars[idx] = HOMOGLYPHS[chars[idx]]
    return tokenizer.encode("".join(chars))


def attack_copy_paste(wm_text, human_source, wm_ratio: float,
                      rng_seed: int = 0) -> tuple[list[int], tuple[int, int]]:
    """Embed the watermarked tokens intact as one span inside human text
    sized so they make up wm_ratio of the result.

    Returns (mixed tokens, ground-truth span [start, end)).
    """
    wm_text = [int(t) for t in wm_text]
    human_source = [int(t) for t in human_source]
    if not 0 < wm_ratio <= 1:
        raise AttackError("wm_ratio must be in (0, 1]")
    if wm_ratio == 1.0:
        return list(wm_text), (0, len(wm_text))
    total = int(round(len(wm_text) / wm_ratio))
    human_needed = total - len(wm_text)
    if len(human_source) < human_needed:
        raise AttackError(
            f"human source too short: need {human_needed}, have {len(human_source)}")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    offset = int(rng.integers(0, human_needed + 1))
    mixed = human_source[:offset] + wm_text + human_source[offset:human_needed]
    return mixed, (offset, offset + len(wm_text))


def apply_attack(spec: AttackSpec, text, provider=None, tokenizer=None,
                 human_source=None):
    """Dispatch an AttackSpec; copy_paste returns (tokens, span), the rest
    return tokens."""
    if spec.kind == "none":
        return list(int(t) for t in text)
    if spec.kind == "deletion":
        return attack_delete(text, spec.ratio, spec.rng_seed)
    if spec.kind == "substitution":
        if provider is None:
            raise AttackError("substitution needs a provider")
        return attack_substitute(text, spec.ratio, spec.rng_seed, provider)
    if spec.kind == "homoglyph":
        if tokenizer is None:
            raise AttackError("homoglyph needs a tokenizer")
        return attack_homoglyph(text, spec.ratio, spec.rng_seed, tokenizer)
    if spec.kind == "copy_paste":
        if human_source is None:
            raise AttackError("copy_paste needs a human token source")
        return attack_copy_paste(text, human_source, spec.ratio, spec.rng_seed)
    raise AttackError(f"unknown attack kind {spec.kind!r}")
