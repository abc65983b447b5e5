"""Pluggable next-token logit sources.

Three providers cover the desk-scale test matrix: a seeded synthetic
distribution generator (order-1, exact extraction regime), a count-based
n-gram model trained on the bundled corpus, and a newline-delimited JSON
client for external logit servers (stdio or TCP).
"""

from __future__ import annotations

import hashlib
import json
import re
import socket
import subprocess
import threading
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .hashing import shuffle

# entropy_scale values at vocab 1024, zipf_s 1.0; H(0.3) = 6.8665 nats.
# see scripts/calibrate_synthetic.py for the recorded sweep.
DEFAULT_ENTROPY_SCALE = 0.3     # default profile, H ~= 6.87 nats
SCALE_H55_V1024 = 0.933911      # H ~= 5.5 nats
SCALE_H30_V1024 = 1.478934      # gate-calibration point: H ~= 3.0 nats

UNK_ID = 0
_SENTINEL_DOMAIN = b"\x03"


@dataclass(frozen=True)
class ProviderDescriptor:
    provider_id: str
    vocab_size: int
    context_order: int      # trailing tokens the logits depend on; 0 = full context
    deterministic: bool = True

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")


class LogitProvider:
    """Base interface: referentially transparent logits over token contexts."""

    descriptor: ProviderDescriptor

    def logits(self, context) -> np.ndarray:
        raise NotImplementedError

    def context_signature(self, context) -> tuple:
        """Hashable key the logits actually depend on."""
        order = self.descriptor.context_order
        ctx = tuple(int(t) for t in context)
        if order == 0:
            return ctx
        return ctx[-order:] if order <= len(ctx) else ctx

    def close(self):
        pass


class SyntheticProvider(LogitProvider):
    """Deterministic Zipf-profile logits, re-shuffled per preceding token.

    Each step's logits are entropy_scale * (-zipf_s * log(rank)), with ranks
    assigned to token ids by a keyed shuffle of (gen_seed, last token). The
    profile (hence the step entropy) is identical at every step; only the
    rank-to-token assignment moves.
    """

    def __init__(self, vocab_size: int = 1024, gen_seed: int = 0,
                 zipf_s: float = 1.0, entropy_scale: float = DEFAULT_ENTROPY_SCALE):
        self.vocab_size = int(vocab_size)
        self.gen_seed = int(gen_seed)
        self.zipf_s = float(zipf_s)
        self.entropy_scale = float(entropy_scale)
        self.descriptor = ProviderDescriptor(
            provider_id=f"synthetic-v{vocab_size}-g{gen_seed}-z{zipf_s:g}-e{entropy_scale:g}",
            vocab_size=self.vocab_size,
            context_order=1,
        )
        ranks = np.arange(1, self.vocab_size + 1, dtype=np.float64)
        self._profile = self.entropy_scale * (-self.zipf_s * np.log(ranks))
        self._cache: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def _key_for(self, prev: int) -> bytes:
        return hashlib.sha256(
            self.gen_seed.to_bytes(8, "big") + int(prev).to_bytes(4, "big") + _SENTINEL_DOMAIN
        ).digest()

    def logits(self, context) -> np.ndarray:
        prev = int(context[-1]) if len(context) else self.vocab_size
        cached = self._cache.get(prev)
        if cached is None:
            perm = shuffle(self.vocab_size, self._key_for(prev))
            arr = np.empty(self.vocab_size, dtype=np.float64)
            arr[perm] = self._profile
            with self._lock:
                self._cache[prev] = arr
            cached = arr
        return cached.copy()


class Tokenizer:
    """Lowercased word/punctuation tokenizer with a frozen train-time vocab.

    Id 0 is reserved for out-of-vocabulary tokens.
    """

    _SPLIT = re.compile(r"[a-z0-9']+|[^\sa-z0-9']", re.IGNORECASE)

    def __init__(self, vocab: list[str]):
        if vocab[0] != "<unk>":
            raise ValueError("vocab[0] must be the <unk> slot")
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @classmethod
    def split(cls, text: str) -> list[str]:
        return [w.lower() for w in cls._SPLIT.findall(text)]

    @classmethod
    def train(cls, text: str, vocab_size: int) -> "Tokenizer":
        freq = Counter(cls.split(text))
        keep = [w for w, _ in freq.most_common(vocab_size - 1)]
        return cls(["<unk>"] + keep)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, UNK_ID) for w in self.split(text)]

    def decode(self, ids) -> str:
        # ids at or beyond the trained vocab (smoothing mass on unseen token
        # slots) render as the unknown token
        return " ".join(self.vocab[i] if 0 <= (i := int(x)) < len(self.vocab) else "<unk>"
                        for x in ids)

    def to_dict(self) -> dict:
        return {"vocab": self.vocab}

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        return cls(d["vocab"])


class NGramModel:
    """Count-based n-gram model with add-alpha smoothing and recursive
    shorter-context fallback for unseen contexts."""

    def __init__(self, order: int, vocab_size: int, smoothing_alpha: float = 0.01):
        if order < 1:
            raise ValueError("order must be >= 1")
        if smoothing_alpha <= 0:
            raise ValueError("smoothing_alpha must be > 0")
        self.order = int(order)
        self.vocab_size = int(vocab_size)
        self.smoothing_alpha = float(smoothing_alpha)
        # one table per context length 0..order-1
        self.tables: list[dict[tuple, Counter]] = [dict() for _ in range(self.order)]

    def add_sequence(self, tokens):
        toks = [int(t) for t in tokens]
        for L in range(self.order):
            table = self.tables[L]
            for i in range(L, len(toks)):
                ctx = tuple(toks[i - L:i])
                bucket = table.get(ctx)
                if bucket is None:
                    bucket = Counter()
                    table[ctx] = bucket
                bucket[toks[i]] += 1

    def probs(self, context) -> np.ndarray:
        ctx = tuple(int(t) for t in context)
        for L in range(min(self.order - 1, len(ctx)), -1, -1):
            key = ctx[len(ctx) - L:]
            bucket = self.tables[L].get(key)
            if bucket is not None:
                return self._smooth(bucket)
        # empty corpus slice: uniform via pure smoothing
        return np.full(self.vocab_size, 1.0 / self.vocab_size)

    def _smooth(self, bucket: Counter) -> np.ndarray:
        alpha = self.smoothing_alpha
        counts = np.zeros(self.vocab_size, dtype=np.float64)
        for tok, c in bucket.items():
            counts[tok] = c
        total = counts.sum()
        return (counts + alpha) / (total + alpha * self.vocab_size)

    def sample_sequence(self, length: int, rng: np.random.Generator,
                        start=()) -> list[int]:
        out = [int(t) for t in start]
        cum_cache: dict[tuple, np.ndarray] = {}
        for _ in range(length):
            ctx = tuple(out[-(self.order - 1):]) if self.order > 1 else ()
            cum = cum_cache.get(ctx)
            if cum is None:
                cum = np.cumsum(self.probs(ctx))
                cum_cache[ctx] = cum
            draw = int(np.searchsorted(cum, rng.random(), side="right"))
            out.append(min(draw, self.vocab_size - 1))
        return out[len(start):] if start else out

    def to_dict(self) -> dict:
        ser = []
        for L, table in enumerate(self.tables):
            rows = [[list(ctx), sorted(bucket.items())] for ctx, bucket in table.items()]
            ser.append(rows)
        return {
            "order": self.order,
            "vocab_size": self.vocab_size,
            "smoothing_alpha": self.smoothing_alpha,
            "tables": ser,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NGramModel":
        model = cls(d["order"], d["vocab_size"], d["smoothing_alpha"])
        for L, rows in enumerate(d["tables"]):
            for ctx, items in rows:
                model.tables[L][tuple(ctx)] = Counter({int(t): int(c) for t, c in items})
        return model


def ngram_train(corpus_sequences, order: int, vocab_size: int,
                smoothing_alpha: float = 0.01) -> NGramModel:
    """Count all contexts up to the given order over the corpus."""
    sequences = list(corpus_sequences)
    if not sequences:
        raise ValueError("corpus must be non-empty")
    model = NGramModel(order, vocab_size, smoothing_alpha)
    for seq in sequences:
        model.add_sequence(seq)
    return model


class NGramProvider(LogitProvider):
    def __init__(self, model: NGramModel, provider_id: str | None = None,
                 tokenizer: Tokenizer | None = None):
        self.model = model
        self.tokenizer = tokenizer
        self.descriptor = ProviderDescriptor(
            provider_id=provider_id or f"ngram-o{model.order}-v{model.vocab_size}",
            vocab_size=model.vocab_size,
            context_order=model.order - 1,
        )
        self._cache: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    def logits(self, context) -> np.ndarray:
        sig = self.context_signature(context)
        cached = self._cache.get(sig)
        if cached is None:
            cached = np.log(self.model.probs(sig))
            with self._lock:
                if len(self._cache) > 200_000:
                    self._cache.clear()
                self._cache[sig] = cached
        return cached.copy()


def bundled_corpus_text() -> str:
    return resources.files("credmark.data").joinpath("corpus.txt").read_text()


def bundled_ngram(order: int = 3, vocab_size: int = 1024,
                  smoothing_alpha: float = 0.01) -> tuple[NGramProvider, Tokenizer]:
    """Train the realism-test n-gram stack on the bundled corpus."""
    text = bundled_corpus_text()
    tok = Tokenizer.train(text, vocab_size)
    ids = tok.encode(text)
    model = ngram_train([ids], order, vocab_size, smoothing_alpha)
    return NGramProvider(model, tokenizer=tok), tok


# ---------------------------------------------------------------------------
# external provider client (newline-delimited JSON over TCP or stdio)

class ProviderError(RuntimeError):
    pass


class TransportError(ProviderError):
    pass


class MalformedFrameError(ProviderError):
    pass


class LengthMismatchError(ProviderError):
    pass


class ProviderTimeoutError(ProviderError):
    pass


class RemoteError(ProviderError):
    """The remote answered ok=false."""


class _LineChannel:
    """One request per line; responses in order."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.timeout = timeout
        self._proc = None
        self._sock = None
        if endpoint.startswith("stdio:"):
            cmd = endpoint[len("stdio:"):]
            self._proc = subprocess.Popen(
                cmd, shell=True, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
            )
        else:
            host, _, port = endpoint.rpartition(":")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=timeout)
            except (OSError, ValueError) as exc:
                raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
            self._reader = self._sock.makefile("r", encoding="utf-8")
            self._writer = self._sock.makefile("w", encoding="utf-8")
        self._lock = threading.Lock()

    def request(self, frame: dict) -> dict:
        line = json.dumps(frame, separators=(",", ":"))
        with self._lock:
            try:
                if self._proc is not None:
                    self._proc.stdin.write(line + "\n")
                    self._proc.stdin.flush()
                    reply = self._proc.stdout.readline()
                else:
                    self._writer.write(line + "\n")
                    self._writer.flush()
                    reply = self._reader.readline()
            except socket.timeout as exc:
                raise ProviderTimeoutError(str(exc)) from exc
            except (OSError, BrokenPipeError) as exc:
                raise TransportError(str(exc)) from exc
        if not reply:
            raise TransportError("connection closed by remote")
        try:
            obj = json.loads(reply)
        except json.JSONDecodeError as exc:
            raise MalformedFrameError(f"non-JSON line from remote: {reply[:80]!r}") from exc
        if not isinstance(obj, dict):
            raise MalformedFrameError("frame is not a JSON object")
        if not obj.get("ok", False):
            raise RemoteError(str(obj.get("error", "unspecified remote error")))
        return obj

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.terminate()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass


class ExternalProvider(LogitProvider):
    """Client for the provider wire protocol (hello / logits / tokenize)."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self._chan = _LineChannel(endpoint, timeout=timeout)
        hello = self._chan.request({"op": "hello"})
        try:
            self.descriptor = ProviderDescriptor(
                provider_id=str(hello["provider_id"]),
                vocab_size=int(hello["vocab_size"]),
                context_order=int(hello.get("context_order", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFrameError(f"bad hello frame: {hello}") from exc

    def logits(self, context) -> np.ndarray:
        reply = self._chan.request({"op": "logits", "context": [int(t) for t in context]})
        values = reply.get("logits")
        if not isinstance(values, list):
            raise MalformedFrameError("logits frame missing 'logits' list")
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (self.descriptor.vocab_size,):
            raise LengthMismatchError(
                f"expected {self.descriptor.vocab_size} logits, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise MalformedFrameError("non-finite logits from remote")
        return arr

    def tokenize(self, text: str) -> list[int]:
        reply = self._chan.request({"op": "tokenize", "text": text})
        toks = reply.get("tokens")
        if not isinstance(toks, list):
            raise MalformedFrameError("tokenize frame missing 'tokens' list")
        return [int(t) for t in toks]

    def close(self):
        self._chan.close()


def parse_provider_spec(spec: str) -> LogitProvider:
    """Build a provider from a CLI spec string.

    synthetic[:vocab=1024,seed=0,zipf=1.0,scale=0.933911]
    ngram[:order=3,vocab=1024,alpha=0.01]      (bundled corpus)
    ngram-file:PATH                            (serialized model JSON)
    external:HOST:PORT | external:stdio:CMD
    """
    kind, _, rest = spec.partition(":")
    if kind == "synthetic":
        kw = _parse_kv(rest, {"vocab": 1024, "seed": 0, "zipf": 1.0, "scale": DEFAULT_ENTROPY_SCALE})
        return SyntheticProvider(int(kw["vocab"]), int(kw["seed"]),
                                 float(kw["zipf"]), float(kw["scale"]))
    if kind == "ngram":
        kw = _parse_kv(rest, {"order": 3, "vocab": 1024, "alpha": 0.01})
        provider, _ = bundled_ngram(int(kw["order"]), int(kw["vocab"]), float(kw["alpha"]))
        return provider
    if kind == "ngram-file":
        with open(rest) as fh:
            d = json.load(fh)
        tok = Tokenizer.from_dict(d["tokenizer"]) if "tokenizer" in d else None
        return NGramProvider(NGramModel.from_dict(d["model"]), tokenizer=tok)
    if kind == "external":
        return ExternalProvider(rest)
    raise ValueError(f"unknown provider spec {spec!r}")


def _parse_kv(rest: str, defaults: dict) -> dict:
    out = dict(defaults)
    if rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            if k not in out:
                raise ValueError(f"unknown provider option {k!r}")
            out[k] = v
    return out
