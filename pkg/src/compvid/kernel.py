"""Dense numeric substrate: softmax, cosine, order statistics, seeded streams.

Everything here is a pure function of its inputs. Random draws come from
counter-based Philox generators keyed by (root_seed, stream_key), so distinct
sub-streams are order-independent and reproducible bit-for-bit regardless of
thread count or call order. All public outputs are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, NumericDomainError


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{name} contains non-finite values")


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-d array, stable under per-row shifts.

    Raises NumericDomainError if the input contains NaN or Inf.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"expected 2-d logits, got shape {logits.shape}")
    _require_finite("logits", logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors, clipped into [-1, 1].

    Raises DegenerateVectorError when either vector has zero norm.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    _require_finite("u", u)
    _require_finite("v", v)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def kth_largest(values: np.ndarray, k: int) -> float:
    """k-th largest element (k=1 is the maximum). Ties resolved by value."""
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} values")
    _require_finite("values", values)
    # partition puts the (n-k)-th order statistic in place without a full sort
    return float(np.partition(values, n - k)[n - k])


@dataclass(frozen=True)
class RngStream:
    """Hierarchically keyed deterministic random stream.

    The pair (root_seed, stream_key) fully determines the sequence; children
    derived with distinct keys are statistically independent Philox streams.
    """

    root_seed: int
    stream_key: tuple[int, ...] = field(default_factory=tuple)

    def child(self, *key_parts: int) -> "RngStream":
        return RngStream(self.root_seed, self.stream_key + tuple(key_parts))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.root_seed, spawn_key=self.stream_key)
        return np.random.Generator(np.random.Philox(seq))

    def normal(self, shape) -> np.ndarray:
        return gaussian_field(self, shape)

    def uniform(self, shape) -> np.ndarray:
        return self.generator().random(shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        return self.generator().integers(low, high, size=shape)


def gaussian_field(stream: RngStream, shape) -> np.ndarray:
    """I.i.d. standard-normal draw, a pure function of (stream, shape)."""
    return stream.generator().standard_normal(size=shape, dtype=np.float64)
