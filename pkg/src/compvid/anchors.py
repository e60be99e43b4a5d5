"""Subject anchor disambiguation for contextual prompt embeddings.

Contextual encoders let tokens interfere, so two subjects in one prompt can
end up with confusingly similar embeddings. This module measures that
confusion per subject, derives a separating direction from the isolated
anchor embeddings, and nudges each subject's token rows along its direction.
The nudge decays linearly over the sampling trajectory, so early steps get
maximally separated semantics and late steps recover the original context.

Confusion scale for subject k over anchors A_1..A_M, with temperature tau:

    s_k = sum_{i != k} exp(cos(P_k, A_i)/tau) / sum_i exp(cos(P_k, A_i)/tau)

Separating direction for subject k:

    delta_k = sum_i (A_k - A_i) = M * A_k - sum_i A_i

Per-step update of subject k's token rows, with strength omega = 1 - step/T:

    P*_k = P_k + omega * s_k * delta_k
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError
from .kernel import softmax_rows

DEFAULT_TAU = 0.2


@dataclass(frozen=True)
class SadConfig:
    """Disambiguation settings: softmax temperature and step budget."""

    tau: float = DEFAULT_TAU
    total_steps: int = 50
    enabled: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")


@dataclass
class SadState:
    """Per-prompt cache: confusion scales and separating directions.

    Computed once from the clean encodings and reused at every sampling step;
    only the time attenuation varies.
    """

    confusion: np.ndarray   # (M,)
    directions: np.ndarray  # (M, d)

    @classmethod
    def from_pooled(cls, pooled_prompt: np.ndarray, pooled_anchors: np.ndarray,
                    tau: float = DEFAULT_TAU) -> "SadState":
        return cls(
            confusion=confusion_scale(pooled_prompt, pooled_anchors, tau),
            directions=directional_vectors(pooled_anchors),
        )


def _cosine_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    rn = np.linalg.norm(rows, axis=1)
    cn = np.linalg.norm(cols, axis=1)
    if (rn == 0).any() or (cn == 0).any():
        raise DegenerateVectorError("zero-norm pooled embedding")
    return np.clip((rows @ cols.T) / np.outer(rn, cn), -1.0, 1.0)


def confusion_scale(pooled_prompt: np.ndarray, pooled_anchors: np.ndarray,
                    tau: float = DEFAULT_TAU) -> np.ndarray:
    """Per-subject confusion scales, each in [0, 1).

    For a single subject the scale is exactly 0; otherwise it is the softmax
    mass (temperature tau) that subject k's contextual embedding places on
    the other subjects' anchors.
    """
    pooled_prompt = np.asarray(pooled_prompt, dtype=np.float64)
    pooled_anchors = np.asarray(pooled_anchors, dtype=np.float64)
    if pooled_prompt.shape != pooled_anchors.shape:
        raise ValueError("pooled prompt/anchor shapes differ")
    if pooled_prompt.ndim != 2 or pooled_prompt.shape[0] < 1:
        raise ValueError("expected (M, d) pooled embeddings with M >= 1")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    cos = _cosine_matrix(pooled_prompt, pooled_anchors)
    weights = softmax_rows(cos / tau)
    return 1.0 - np.diag(weights)


def directional_vectors(pooled_anchors: np.ndarray) -> np.ndarray:
    """Summed displacement from every anchor toward each subject's own."""
    pooled_anchors = np.asarray(pooled_anchors, dtype=np.float64)
    if pooled_anchors.ndim != 2 or pooled_anchors.shape[0] < 1:
        raise ValueError("expected (M, d) pooled anchors with M >= 1")
    m = pooled_anchors.shape[0]
    return m * pooled_anchors - pooled_anchors.sum(axis=0, keepdims=True)


def attenuation(step: int, total_steps: int) -> float:
    """Linear decay 1 -> 0 of the disambiguation strength over the run."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return 1.0 - step / total_steps


def interpolate(prompt: np.ndarray, spans, confusion: np.ndarray,
                directions: np.ndarray, omega: float) -> np.ndarray:
    """Shift each subject's token rows by omega * s_k * delta_k.

    Rows outside every span are returned bit-identical; the input array is
    never mutated. A zero effective strength for a subject skips the
    floating-point add entirely so the identity cases are exact.
    """
    prompt = np.asarray(prompt, dtype=np.float64)
    confusion = np.asarray(confusion, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    if directions.shape != (confusion.shape[0], prompt.shape[1]):
        raise ValueError("directions shape inconsistent with confusion scales and prompt")
    if len(spans) != confusion.shape[0]:
        raise ValueError(f"{len(spans)} spans for {confusion.shape[0]} subjects")
    out = prompt.copy()
    for k, span in enumerate(spans):
        start, end = (span.start, span.end) if hasattr(span, "start") else span
        if not 0 <= start < end <= prompt.shape[0]:
            raise ValueError(f"invalid span [{start}, {end})")
        strength = omega * confusion[k]
        if strength != 0.0:
            out[start:end] += strength * directions[k]
    return out
