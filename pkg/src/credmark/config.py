"""Scheme hyperparameters and decoding settings."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .hashing import MAX_MESSAGE_BITS, ConfigurationError

BIAS_SIDES = ("tail", "head")


@dataclass(frozen=True)
class WatermarkConfig:
    """All knobs of the watermarking scheme.

    delta        additive logit bias applied to the biased token set
    theta        entropy gate (nats): positions with H <= theta carry no mark
    tau          temperature of the message-margin diagnostic (never alters
                 sampling; kept as a score knob only)
    sigma        probability-mass threshold of the shuffled-order partition
    bits         message width b; the extraction table enumerates 2^b seeds
    bias_side    which side of the sigma cut receives the bias:
                 "tail" biases the tokens from the crossing token onward in
                 shuffle order (the low cumulative-mass remainder, so a small,
                 randomly varying set that occasionally contains high-logit
                 tokens); "head" biases the sigma-mass prefix itself.
    confidence_beta   sharpness of the softmax posterior over candidate seeds
    pvalue_threshold  detection threshold on the (multiplicity-corrected)
                      max-count tail probability
    """

    delta: float = 1.5
    theta: float = 1.2
    tau: float = 0.8
    sigma: float = 0.9
    bits: int = 20
    bias_side: str = "tail"
    confidence_beta: float = 1.0
    pvalue_threshold: float = 1e-4

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigurationError("delta must be >= 0")
        if self.theta < 0:
            raise ConfigurationError("theta must be >= 0")
        if not 0 < self.tau <= 1:
            raise ConfigurationError("tau must be in (0, 1]")
        if not 0 < self.sigma <= 1:
            raise ConfigurationError("sigma must be in (0, 1]")
        if not 1 <= self.bits <= MAX_MESSAGE_BITS:
            raise ConfigurationError(
                f"bits must be in [1, {MAX_MESSAGE_BITS}] so the 2^b seed table stays enumerable"
            )
        if self.bias_side not in BIAS_SIDES:
            raise ConfigurationError(f"bias_side must be one of {BIAS_SIDES}")
        if self.confidence_beta <= 0:
            raise ConfigurationError("confidence_beta must be > 0")
        if not 0 < self.pvalue_threshold < 1:
            raise ConfigurationError("pvalue_threshold must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WatermarkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DecodingSpec:
    """How the next token is selected from the (biased) distribution.

    top_k=None disables top-k truncation; top_p=1.0 disables nucleus
    truncation. All strategies are deterministic given rng_seed.
    """

    strategy: str = "sampling"
    temperature: float = 1.0
    top_k: int | None = None
    top_p: float = 1.0
    num_beams: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "sampling", "beam"):
            raise ConfigurationError(f"unknown decoding strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ConfigurationError("top_p must be in (0, 1]")
        if self.num_beams < 1:
            raise ConfigurationError("num_beams must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecodingSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown decoding keys: {sorted(unknown)}")
        return cls(**d)
