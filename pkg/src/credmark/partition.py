"""Per-step vocabulary partition and logit biasing.

At each generation step the original next-token distribution is examined:
if its entropy clears the gate, the vocabulary is walked in a keyed shuffle
order, accumulating model probability until the running mass reaches sigma.
The walk fixes a cut; the "head" of the cut is the minimal shuffled prefix
holding at least sigma of the mass (crossing token included), the "tail" is
everything from the crossing token onward. Which side receives the logit
bias is a config choice (default: tail).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import WatermarkConfig
from .hashing import shuffled_cut


class UngatedStepError(ValueError):
    """Operation needs a gated partition but the step carried no mark."""


def validate_logits(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("logits must be a non-empty 1-D array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits must be finite")
    return arr


def softmax(logits) -> np.ndarray:
    arr = validate_logits(logits)
    shifted = arr - arr.max()
    expd = np.exp(shifted)
    return expd / expd.sum()


def entropy(probs) -> float:
    """Shannon entropy in nats with 0*log(0) := 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class StepPartition:
    """Result of one gating + shuffle walk.

    members holds the sigma-mass shuffled prefix (crossing token included);
    cut is the index of the crossing token within permutation. Ungated steps
    have empty members and cut = -1.
    """

    entropy: float
    gated: bool
    members: np.ndarray
    permutation: np.ndarray
    cut: int

    def bias_members(self, side: str) -> np.ndarray:
        """Token ids receiving the bias for the given side of the cut.

        "head" is the members prefix itself; "tail" starts at the crossing
        token, so the two sides overlap in exactly that one token.
        """
        if not self.gated:
            return np.empty(0, dtype=np.int64)
        if side == "head":
            return self.members
        if side == "tail":
            return self.permutation[self.cut:]
        raise ValueError(f"unknown bias side {side!r}")


def build_partition(logits, key: bytes, config: WatermarkConfig) -> StepPartition:
    """Gate on distribution entropy, then take the minimal shuffled prefix
    whose cumulative original-model mass reaches sigma (inclusive)."""
    arr = validate_logits(logits)
    probs = softmax(arr)
    h = entropy(probs)
    if h <= config.theta:
        return StepPartition(
            entropy=h,
            gated=False,
            members=np.empty(0, dtype=np.int64),
            permutation=np.empty(0, dtype=np.int64),
            cut=-1,
        )
    perm, cut = shuffled_cut(probs, key, config.sigma)
    return StepPartition(
        entropy=h,
        gated=True,
        members=perm[: cut + 1].copy(),
        permutation=perm,
        cut=cut,
    )


def biased_logits(logits: np.ndarray, member_ids: np.ndarray, delta: float) -> np.ndarray:
    out = np.array(logits, dtype=np.float64, copy=True)
    if len(member_ids):
        out[member_ids] += delta
    return out


def apply_bias(logits, partition: StepPartition, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Add delta to the partition members and return (final logits, softmax).

    Ungated steps pass the logits through unchanged.
    """
    arr = validate_logits(logits)
    if not partition.gated:
        return arr.copy(), softmax(arr)
    final = biased_logits(arr, partition.members, delta)
    return final, softmax(final)


def channel_from_ids(vocab_size: int, member_ids: np.ndarray, delta: float) -> np.ndarray:
    """Model-independent per-token emission probability of the mark itself:
    exp(delta * membership), normalized over the vocabulary."""
    weights = np.ones(vocab_size, dtype=np.float64)
    if len(member_ids):
        weights[member_ids] = np.exp(delta)
    return weights / weights.sum()


def watermark_channel_prob(partition: StepPartition, delta: float) -> np.ndarray:
    """The watermark channel of a gated step over the member set."""
    if not partition.gated:
        raise UngatedStepError("watermark channel is undefined on an ungated step")
    return channel_from_ids(len(partition.permutation), partition.members, delta)


def message_margin_score(logits_per_message, true_index: int, tau: float) -> float:
    """Margin of the true message against a tempered logsumexp of the rest.

    Diagnostic only; tau shapes how sharply the competitors are aggregated.
    """
    arr = np.asarray(logits_per_message, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("need logits for at least two messages")
    if not 0 <= true_index < arr.size:
        raise ValueError("true_index out of range")
    others = np.delete(arr, true_index)
    scaled = others / tau
    m = scaled.max()
    lse = m + np.log(np.exp(scaled - m).sum())
    return float(arr[true_index] - tau * lse)
