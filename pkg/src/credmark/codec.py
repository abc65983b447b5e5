"""Watermarked generation and message extraction.

Generation biases each gated step's logits toward the keyed bias set and
samples with the configured decoding strategy. Extraction replays the gate
and the per-seed bias sets over the bare text (no prompt) and counts, for
every candidate seed, how often the observed token landed inside that seed's
bias set; the column sums of the counter rank the candidate messages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import DecodingSpec, WatermarkConfig
from .hashing import MessageBits, SeedMaterial, step_key, tail_walk
from .partition import biased_logits, channel_from_ids, entropy, softmax


class ArityError(ValueError):
    pass


class InvalidTokenError(ValueError):
    pass


class NoGatedStepsError(ValueError):
    """Every position fell below the entropy gate; the text is undecodable."""


def bpw(bits: int, tokens: int) -> float:
    """Embedded information bits per generated token."""
    if tokens < 1:
        raise ArityError("tokens must be >= 1")
    return bits / tokens


def _bias_ids_from_walk(tail_ids: np.ndarray, crossing: int, vocab_size: int,
                        side: str) -> np.ndarray:
    if side == "tail":
        return tail_ids
    mask = np.ones(vocab_size, dtype=bool)
    mask[tail_ids] = False
    mask[crossing] = True
    return np.nonzero(mask)[0]


def _step_bias_ids(probs: np.ndarray, key: bytes, config: WatermarkConfig) -> np.ndarray:
    v = len(probs)
    scratch = np.empty(v, dtype=np.int64)
    kw = _kernels.key_bytes_to_words(key)[0]
    count, crossing = _kernels.tail_ids_single(
        kw, np.ascontiguousarray(probs, dtype=np.float64), config.sigma, scratch)
    tail_ids = scratch[:count].copy()
    return _bias_ids_from_walk(tail_ids, int(crossing), v, config.bias_side)


# ---------------------------------------------------------------------------
# generation

def _select_sampling(final_logits: np.ndarray, decoding: DecodingSpec,
                     rng: np.random.Generator) -> int:
    v = len(final_logits)
    scaled = final_logits / decoding.temperature
    if (decoding.top_k is None or decoding.top_k >= v) and decoding.top_p >= 1.0:
        # no truncation: inverse-CDF draw in token-id order
        probs = softmax(scaled)
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        return min(idx, v - 1)
    order = np.lexsort((np.arange(v), -scaled))      # by logit desc, id asc
    k = v if decoding.top_k is None else min(decoding.top_k, v)
    kept = order[:k]
    probs = softmax(scaled[kept])
    if decoding.top_p < 1.0:
        cum = np.cumsum(probs)
        cutoff = int(np.searchsorted(cum, decoding.top_p, side="left"))
        kept = kept[: cutoff + 1]
        probs = probs[: cutoff + 1]
        probs = probs / probs.sum()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return int(kept[min(idx, len(kept) - 1)])


def _biased_step_logits(provider, context, seed: SeedMaterial,
                        config: WatermarkConfig) -> np.ndarray:
    logits = provider.logits(context)
    if config.delta == 0.0:
        return logits
    probs = softmax(logits)
    if entropy(probs) <= config.theta:
        return logits
    prev = int(context[-1]) if len(context) else provider.descriptor.vocab_size
    key = step_key(seed, prev)
    ids = _step_bias_ids(probs, key, config)
    return biased_logits(logits, ids, config.delta)


def _generate_beam(provider, prompt, seed, config, decoding, length) -> list[int]:
    # beams as (tokens tuple, cumulative log prob); bias applied before any
    # normalization; final choice by length-normalized score, ties lexicographic
    beams: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    prompt = tuple(int(t) for t in prompt)
    for _ in range(length):
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for tokens, score in beams:
            final = _biased_step_logits(provider, prompt + tokens, seed, config)
            logp = final - final.max()
            logp = logp - np.log(np.exp(logp).sum())
            for v in range(len(logp)):
                candidates.append((score + float(logp[v]), tokens + (v,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = [(toks, sc) for sc, toks in candidates[: decoding.num_beams]]
    best = min(beams, key=lambda b: (-b[1] / len(b[0]), b[0]))
    return list(best[0])


def generate(provider, prompt, seed: SeedMaterial, config: WatermarkConfig,
             decoding: DecodingSpec, length: int) -> list[int]:
    """Generate ``length`` watermarked tokens continuing ``prompt``.

    Deterministic given all inputs; the unwatermarked baseline is the same
    call with delta=0 (or a gate nothing passes).
    """
    if length < 1:
        raise ArityError("length must be >= 1")
    vocab = provider.descriptor.vocab_size
    prompt = [int(t) for t in prompt]
    if any(t >= vocab or t < 0 for t in prompt):
        raise InvalidTokenError("prompt token outside provider vocabulary")
    if decoding.strategy == "beam":
        return _generate_beam(provider, prompt, seed, config, decoding, length)
    rng = np.random.Generator(np.random.PCG64(decoding.rng_seed))
    out: list[int] = []
    for _ in range(length):
        final = _biased_step_logits(provider, prompt + out, seed, config)
        if decoding.strategy == "greedy":
            out.append(int(np.argmax(final)))
        else:
            out.append(_select_sampling(final, decoding, rng))
    return out


# ---------------------------------------------------------------------------
# extraction

@dataclass
class CounterMatrix:
    """Positions x candidate-seeds hit matrix plus its column sums."""

    counts: np.ndarray            # uint8 [K, n], rows of ungated positions are zero
    gated_steps: int
    per_message_totals: np.ndarray

    @classmethod
    def from_rows(cls, counts: np.ndarray, gated_steps: int) -> "CounterMatrix":
        return cls(counts=counts, gated_steps=int(gated_steps),
                   per_message_totals=counts.sum(axis=0, dtype=np.int64))


@dataclass
class ExtractionResult:
    message: MessageBits
    seed_index: int
    posterior: float
    pvalue: float
    totals: np.ndarray
    gated_steps: int
    watermarked: bool

    def to_dict(self) -> dict:
        return {
            "message_bits": str(self.message),
            "seed_index": self.seed_index,
            "posterior": self.posterior,
            "pvalue": self.pvalue,
            "gated_steps": self.gated_steps,
            "watermarked": self.watermarked,
        }


class ExtractionEngine:
    """Replays gating and per-seed bias sets over texts for one seed table.

    Memoizes per-predecessor bias masks when the provider's logits depend
    only on the preceding token (context_order == 1), which makes repeated
    extraction over a shared provider cheap; otherwise memberships are
    evaluated per position.
    """

    # keep per-predecessor masks only while they stay small; big tables are
    # processed in grouped passes instead (one predecessor in memory at a time)
    MASK_CACHE_LIMIT_BYTES = 768 << 20

    def __init__(self, provider, seed_table: list[SeedMaterial], config: WatermarkConfig):
        if len(seed_table) < 1:
            raise ArityError("seed table must be non-empty")
        self.provider = provider
        self.config = config
        self.seed_table = seed_table
        self.vocab = provider.descriptor.vocab_size
        self._seed_words = _kernels.key_bytes_to_words([s.data for s in seed_table])
        self._stepkey_cache: dict[int, np.ndarray] = {}
        self._mask_cache: dict[int, np.ndarray] = {}
        self._mask_cache_bytes = 0
        self._dist_cache: dict[tuple, tuple[np.ndarray, float]] = {}
        self._order1 = provider.descriptor.context_order == 1

    @property
    def n_seeds(self) -> int:
        return len(self.seed_table)

    def _step_keys(self, prev: int) -> np.ndarray:
        # caching pays off only when the per-call batch is small; at large
        # table sizes the keys are cheap relative to the walks they feed
        if self.n_seeds > 8192:
            return _kernels.step_key_batch(self._seed_words, prev)
        keys = self._stepkey_cache.get(prev)
        if keys is None:
            keys = _kernels.step_key_batch(self._seed_words, prev)
            self._stepkey_cache[prev] = keys
        return keys

    def _dist_at(self, text, i: int) -> tuple[np.ndarray, float]:
        sig = self.provider.context_signature(text[:i])
        got = self._dist_cache.get(sig)
        if got is None:
            probs = softmax(self.provider.logits(text[:i]))
            got = (probs, entropy(probs))
            if len(self._dist_cache) > 100_000:
                self._dist_cache.clear()
            self._dist_cache[sig] = got
        return got

    def _tail_masks_for_prev(self, prev: int, probs: np.ndarray) -> np.ndarray:
        masks = self._mask_cache.get(prev)
        if masks is None:
            masks = _kernels.tail_mask_batch(self._step_keys(prev), probs, self.config.sigma)
            if self._mask_cache_bytes + masks.nbytes <= self.MASK_CACHE_LIMIT_BYTES:
                self._mask_cache[prev] = masks
                self._mask_cache_bytes += masks.nbytes
        return masks

    def _hits_at(self, probs: np.ndarray, prev: int, target: int) -> np.ndarray:
        """uint8 per-seed membership of ``target`` in the configured bias set."""
        if self.config.bias_side == "head":
            return self._hits_reference(probs, prev, target)
        if self._order1:
            masks = self._tail_masks_for_prev(prev, probs)
            return _kernels.mask_bit_column(masks, target)
        return _kernels.tail_hit_batch(self._step_keys(prev), probs,
                                       self.config.sigma, target)

    def _hits_reference(self, probs: np.ndarray, prev: int, target: int) -> np.ndarray:
        hits = np.zeros(self.n_seeds, dtype=np.uint8)
        for j, seed in enumerate(self.seed_table):
            tail_ids, crossing = tail_walk(probs, step_key(seed, prev), self.config.sigma)
            ids = _bias_ids_from_walk(tail_ids, crossing, len(probs), self.config.bias_side)
            hits[j] = 1 if target in set(int(x) for x in ids) else 0
        return hits

    def plan(self, text) -> list[tuple[int, int, int, np.ndarray]]:
        """Gated positions of a text as (position, prev, token, probs)."""
        text = [int(t) for t in text]
        if len(text) < 2:
            raise ArityError("extraction needs at least 2 tokens")
        if any(t < 0 or t >= self.vocab for t in text):
            raise InvalidTokenError("token id outside provider vocabulary")
        out = []
        for i in range(1, len(text)):
            probs, h = self._dist_at(text, i)
            if h > self.config.theta:
                out.append((i, text[i - 1], text[i], probs))
        return out

    def rows_for_text(self, text) -> tuple[np.ndarray, int]:
        """Full per-position hit rows (uint8 [len(text), n_seeds])."""
        rows = np.zeros((len(text), self.n_seeds), dtype=np.uint8)
        gated = self.plan(text)
        if self._order1 and self.config.bias_side == "tail":
            by_prev: dict[int, list[tuple[int, int, np.ndarray]]] = {}
            for i, prev, tok, probs in gated:
                by_prev.setdefault(prev, []).append((i, tok, probs))
            for prev, items in by_prev.items():
                masks = self._tail_masks_for_prev(prev, items[0][2])
                toks = np.array([it[1] for it in items], dtype=np.int64)
                idx = np.array([it[0] for it in items], dtype=np.int64)
                _kernels.write_mask_columns(masks, toks, idx, rows)
        else:
            for i, prev, tok, probs in gated:
                rows[i] = self._hits_at(probs, prev, tok)
        return rows, len(gated)

    def totals_for_text(self, text) -> tuple[np.ndarray, int]:
        totals, gated = self.totals_for_texts([text])
        return totals[0], gated[0]

    def totals_for_texts(self, texts) -> tuple[np.ndarray, np.ndarray]:
        """Per-message totals for a batch of texts in one grouped pass.

        Positions of every text are grouped by predecessor token so each
        per-seed mask batch is built exactly once per predecessor, then
        discarded; peak memory is one predecessor's masks.
        """
        texts = list(texts)
        totals = np.zeros((len(texts), self.n_seeds), dtype=np.int64)
        gated_counts = np.zeros(len(texts), dtype=np.int64)
        plans = [self.plan(t) for t in texts]
        for ti, gated in enumerate(plans):
            gated_counts[ti] = len(gated)
        if self._order1 and self.config.bias_side == "tail":
            by_prev: dict[int, list[tuple[int, int, np.ndarray]]] = {}
            for ti, gated in enumerate(plans):
                for _, prev, tok, probs in gated:
                    by_prev.setdefault(prev, []).append((ti, tok, probs))
            for prev, items in by_prev.items():
                masks = self._tail_masks_for_prev(prev, items[0][2])
                toks = np.array([it[1] for it in items], dtype=np.int64)
                idx = np.array([it[0] for it in items], dtype=np.int64)
                _kernels.accumulate_mask_columns(masks, toks, idx, totals)
        else:
            for ti, gated in enumerate(plans):
                for _, prev, tok, probs in gated:
                    totals[ti] += self._hits_at(probs, prev, tok)
        return totals, gated_counts


def count_matrix(provider, text, seed_table: list[SeedMaterial],
                 config: WatermarkConfig, engine: ExtractionEngine | None = None) -> CounterMatrix:
    """Hit counter over all candidate seeds; position 0 has no predecessor
    and stays a zero row. Deterministic regardless of worker scheduling."""
    if engine is None:
        engine = ExtractionEngine(provider, seed_table, config)
    rows, gated_steps = engine.rows_for_text(text)
    return CounterMatrix.from_rows(rows, gated_steps)


def _decode_totals(totals: np.ndarray, gated_steps: int,
                   config: WatermarkConfig) -> ExtractionResult:
    n = len(totals)
    if n < 2:
        raise ArityError("need at least two candidate messages")
    if gated_steps < 1:
        raise NoGatedStepsError("no gated positions; nothing to decode")
    totals = np.asarray(totals, dtype=np.int64)
    j = int(np.argmax(totals))
    others = np.delete(totals, j).astype(np.float64)
    # null rate from the non-winning candidates, kept away from the
    # degenerate endpoints by half a count
    qhat = float(others.mean()) / gated_steps
    qhat = min(max(qhat, 0.5 / gated_steps), 1.0 - 0.5 / gated_steps)
    # exact binomial tail of the winning count under the estimated null; a
    # normal approximation is 1-2 orders of magnitude too light this deep in
    # the tail at window-sized counts and breaks the false-positive budget
    from scipy.stats import binom
    p_raw = float(binom.sf(int(totals[j]) - 1, gated_steps, qhat))
    pvalue = min(1.0, n * p_raw)                 # corrected for the n-way scan
    w = config.confidence_beta * (totals - totals[j])
    posterior = float(1.0 / np.exp(w).sum())
    width = max(n.bit_length() - 1, 1)
    if 1 << width != n:
        raise ArityError(f"seed table size {n} is not a power of two")
    return ExtractionResult(
        message=MessageBits(j, width),
        seed_index=j,
        posterior=posterior,
        pvalue=pvalue,
        totals=totals,
        gated_steps=gated_steps,
        watermarked=bool(pvalue < config.pvalue_threshold),
    )


def decode(counter: CounterMatrix, config: WatermarkConfig) -> ExtractionResult:
    """Pick the best-supported seed and attach confidence statistics.

    The p-value is the one-sided normal tail of the winning count against the
    null rate estimated from the other candidates (spread floored at one
    count), multiplied by the number of candidates scanned so a fixed
    threshold keeps its false-positive meaning at any table size.
    """
    return _decode_totals(counter.per_message_totals, counter.gated_steps, config)


def extract(provider, text, seed_table, config,
            engine: ExtractionEngine | None = None) -> ExtractionResult:
    return decode(count_matrix(provider, text, seed_table, config, engine=engine), config)


# ---------------------------------------------------------------------------
# sliding-window defense against copy-paste dilution

@dataclass
class SlidingWindowResult:
    result: ExtractionResult
    spans: list[tuple[int, int]]             # merged accepted regions
    accepted_windows: list[tuple[int, int]]


def sliding_window_extract(provider, text, seed_table, config,
                           window: int, stride: int,
                           engine: ExtractionEngine | None = None) -> SlidingWindowResult:
    """Decode per window, drop windows whose p-value misses the threshold,
    then decode the union of surviving positions (no double counting)."""
    text = [int(t) for t in text]
    if window > len(text):
        raise ArityError("window larger than text")
    if window < 2 or stride < 1:
        raise ArityError("need window >= 2 and stride >= 1")
    if engine is None:
        engine = ExtractionEngine(provider, seed_table, config)
    rows, _ = engine.rows_for_text(text)
    gated_pos = rows.any(axis=1)
    # a gated position with an all-zero row is possible (no seed hit); recover
    # the true gate flags from the plan
    gate_flags = np.zeros(len(text), dtype=bool)
    for i, _, _, _ in engine.plan(text):
        gate_flags[i] = True
    del gated_pos

    starts = list(range(0, len(text) - window + 1, stride))
    if starts[-1] != len(text) - window:
        starts.append(len(text) - window)

    accepted: list[tuple[int, int]] = []
    for s in starts:
        e = s + window
        g = int(gate_flags[s:e].sum())
        if g < 1:
            continue
        totals = rows[s:e].sum(axis=0, dtype=np.int64)
        try:
            res = _decode_totals(totals, g, config)
        except ArityError:
            continue
        if res.pvalue < config.pvalue_threshold:
            accepted.append((s, e))

    full_totals = rows.sum(axis=0, dtype=np.int64)
    full_g = int(gate_flags.sum())
    if not accepted:
        if full_g >= 1:
            fallback = _decode_totals(full_totals, full_g, config)
            null_result = ExtractionResult(
                message=fallback.message, seed_index=fallback.seed_index,
                posterior=0.0, pvalue=1.0, totals=full_totals,
                gated_steps=full_g, watermarked=False,
            )
        else:
            raise NoGatedStepsError("no gated positions in any window")
        return SlidingWindowResult(result=null_result, spans=[], accepted_windows=[])

    union = np.zeros(len(text), dtype=bool)
    for s, e in accepted:
        union[s:e] = True
    union &= gate_flags
    agg_totals = rows[union].sum(axis=0, dtype=np.int64)
    result = _decode_totals(agg_totals, int(union.sum()), config)
    return SlidingWindowResult(result=result, spans=_merge_spans(accepted),
                               accepted_windows=accepted)


def _merge_spans(spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for s, e in sorted(spans):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [tuple(x) for x in merged]


# ---------------------------------------------------------------------------
# channel-magnitude diagnostic

def mean_logpw_statistic(texts, provider, config: WatermarkConfig,
                         sample_messages: int, vendor_key: bytes = b"\x00" * 32,
                         samples_per_text: int = 100, rng_seed: int = 0) -> tuple[float, float]:
    """Mean and spread, over sampled (text, position) pairs, of the average
    log emission probability of the observed token under a random subset of
    candidate messages' watermark channels."""
    texts = list(texts)
    if not texts:
        raise ArityError("need at least one text")
    if sample_messages < 2:
        raise ArityError("sample_messages must be >= 2")
    from .hashing import derive_seed  # local import to avoid cycle noise

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    space = 1 << config.bits
    m_values = (np.arange(space) if space <= sample_messages
                else rng.choice(space, size=sample_messages, replace=False))
    seeds = [derive_seed(vendor_key, MessageBits(int(m), config.bits)) for m in m_values]
    seed_words = _kernels.key_bytes_to_words([s.data for s in seeds])
    vocab = provider.descriptor.vocab_size

    values: list[float] = []
    for text in texts:
        text = [int(t) for t in text]
        gated = []
        for i in range(1, len(text)):
            probs = softmax(provider.logits(text[:i]))
            if entropy(probs) > config.theta:
                gated.append((i, text[i - 1], text[i], probs))
        if not gated:
            continue
        picks = rng.choice(len(gated), size=min(samples_per_text, len(gated)), replace=False)
        for pi in picks:
            i, prev, tok, probs = gated[int(pi)]
            keys = _kernels.step_key_batch(seed_words, prev)
            if config.bias_side == "tail":
                masks = _kernels.tail_mask_batch(keys, probs, config.sigma)
                sizes = np.unpackbits(masks, axis=1, bitorder="little")[:, :vocab].sum(axis=1)
                hits = _kernels.mask_bit_column(masks, tok).astype(np.float64)
            else:
                sizes = np.empty(len(seeds), dtype=np.int64)
                hits = np.empty(len(seeds), dtype=np.float64)
                for j, seed in enumerate(seeds):
                    tail_ids, crossing = tail_walk(probs, step_key(seed, prev), config.sigma)
                    ids = _bias_ids_from_walk(tail_ids, crossing, vocab, "head")
                    sizes[j] = len(ids)
                    hits[j] = 1.0 if tok in set(int(x) for x in ids) else 0.0
            log_z = np.log(sizes * math.exp(config.delta) + (vocab - sizes))
            values.append(float(np.mean(config.delta * hits - log_z)))
    if not values:
        raise NoGatedStepsError("no gated positions found in the sample")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


def channel_log_prob(partition_member_ids: np.ndarray, vocab_size: int,
                     delta: float, token: int) -> float:
    p = channel_from_ids(vocab_size, partition_member_ids, delta)
    return float(np.log(p[token]))


# ---------------------------------------------------------------------------
# watermarked-text artifact file (never carries the seed or the message)

def save_artifact(path, tokens, provider_id: str, config: WatermarkConfig,
                  decoding: DecodingSpec, prompt_len: int, bits: int):
    payload = {
        "tokens": [int(t) for t in tokens],
        "provider_id": provider_id,
        "config": config.to_dict(),
        "decoding": decoding.to_dict(),
        "prompt_len": int(prompt_len),
        "b": int(bits),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_artifact(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    for field in ("tokens", "provider_id", "config", "decoding", "prompt_len", "b"):
        if field not in payload:
            raise ValueError(f"artifact missing field {field!r}")
    payload["config"] = WatermarkConfig.from_dict(payload["config"])
    payload["decoding"] = DecodingSpec.from_dict(payload["decoding"])
    return payload
