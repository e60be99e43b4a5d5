"""Layout masks over the spatiotemporal video-token grid.

Three mask families per subject, all binary vectors of length F*H*W:

  prior    - rasterized from planner-style boxes with frame ranges
  adaptive - the k most text-correlated video tokens, where k is the size of
             the subject's prior mask (the prior acts as a size reference)
  fused    - elementwise union of the two

Token indexing is row-major over (frame, row, col): p = f*H*W + y*W + x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutFormatError


@dataclass(frozen=True)
class TokenGrid:
    """F x H x W indexing of the latent video tokens."""

    frames: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def n_video(self) -> int:
        return self.frames * self.height * self.width

    def index(self, f: int, y: int, x: int) -> int:
        return f * self.height * self.width + y * self.width + x

    def coords(self, p: int) -> tuple[int, int, int]:
        hw = self.height * self.width
        return p // hw, (p % hw) // self.width, p % self.width


@dataclass(frozen=True)
class BoxSpan:
    """One axis-aligned box active over a half-open frame range.

    The box is normalized: 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1.
    """

    frame_range: tuple[int, int]
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        f0, f1 = self.frame_range
        if f0 >= f1 or f0 < 0:
            raise LayoutFormatError("frame_range", f"degenerate frame range [{f0}, {f1})")
        x0, y0, x1, y1 = self.bbox
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise LayoutFormatError("bbox", f"degenerate or out-of-range box {self.bbox}")


def rasterize_prior(boxes_per_subject, grid: TokenGrid) -> np.ndarray:
    """Rasterize per-subject box lists into binary (M, n_video) masks.

    A token is covered when its frame lies in the box's frame range and the
    cell center ((x+0.5)/W, (y+0.5)/H) falls inside the half-open box
    [x0, x1) x [y0, y1). A subject's mask is the union over its boxes; an
    empty box list gives an all-zeros mask.
    """
    cx = (np.arange(grid.width) + 0.5) / grid.width
    cy = (np.arange(grid.height) + 0.5) / grid.height
    masks = np.zeros((len(boxes_per_subject), grid.n_video), dtype=bool)
    for i, boxes in enumerate(boxes_per_subject):
        per_frame = np.zeros((grid.frames, grid.height, grid.width), dtype=bool)
        for box in boxes:
            f0, f1 = box.frame_range
            if f1 > grid.frames:
                raise LayoutFormatError("frame_range", f"[{f0}, {f1}) exceeds {grid.frames} frames")
            x0, y0, x1, y1 = box.bbox
            cell = np.outer((y0 <= cy) & (cy < y1), (x0 <= cx) & (cx < x1))
            per_frame[f0:f1] |= cell
        masks[i] = per_frame.reshape(-1)
    return masks


def correlation(pooled_query: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Raw dot-product correlation of one pooled query against every key row.

    No softmax and no 1/sqrt(d) scaling: the downstream top-k threshold is
    invariant under any strictly increasing transform, so scaling is
    immaterial.
    """
    pooled_query = np.asarray(pooled_query, dtype=np.float64).ravel()
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[1] != pooled_query.shape[0]:
        raise ValueError(f"key shape {keys.shape} incompatible with query dim {pooled_query.shape[0]}")
    return keys @ pooled_query


def adaptive_mask(corr: np.ndarray, k: int, strict: bool = False) -> np.ndarray:
    """Select the k most correlated tokens as a binary mask.

    Default semantics: exactly min(k, n) ones, ranking by descending value
    with ascending-index tie-break, i.e. tokens with corr >= (k-th largest)
    capped at k. With ``strict=True`` the literal rule corr > (k-th largest)
    is used instead, which drops ties and selects k-1 tokens when values are
    distinct. k=0 yields an all-zeros mask.
    """
    corr = np.asarray(corr, dtype=np.float64).ravel()
    n = corr.size
    if k < 0 or k > n:
        raise ValueError(f"k={k} out of range for {n} tokens")
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return mask
    if strict:
        delta = np.partition(corr, n - k)[n - k]
        return corr > delta
    # stable argsort on negated values: descending value, ascending index on ties
    order = np.argsort(-corr, kind="stable")
    mask[order[:k]] = True
    return mask


def fuse(prior: np.ndarray, adaptive: np.ndarray) -> np.ndarray:
    """Elementwise union of two binary masks."""
    prior = np.asarray(prior).astype(bool)
    adaptive = np.asarray(adaptive).astype(bool)
    if prior.shape != adaptive.shape:
        raise ValueError(f"mask length mismatch: {prior.shape} vs {adaptive.shape}")
    return prior | adaptive


@dataclass
class LayoutSet:
    """Prior, adaptive and fused masks for all subjects on one grid."""

    prior: np.ndarray     # (M, n_video) bool
    adaptive: np.ndarray  # (M, n_video) bool
    fused: np.ndarray     # (M, n_video) bool

    def __post_init__(self):
        if not (self.prior.shape == self.adaptive.shape == self.fused.shape):
            raise ValueError("mask family shapes differ")
        if not ((self.fused | self.prior) == self.fused).all():
            raise ValueError("fused mask does not contain prior mask")
        if not ((self.fused | self.adaptive) == self.fused).all():
            raise ValueError("fused mask does not contain adaptive mask")

    @classmethod
    def from_correlations(cls, prior: np.ndarray, corrs: np.ndarray,
                          strict: bool = False) -> "LayoutSet":
        """Derive adaptive + fused masks from per-subject correlation rows.

        k for each subject is the population count of its prior mask.
        """
        prior = np.asarray(prior).astype(bool)
        adaptive = np.stack(
            [adaptive_mask(corrs[i], int(prior[i].sum()), strict=strict)
             for i in range(prior.shape[0])]
        ) if prior.shape[0] else np.zeros_like(prior)
        fused = prior | adaptive
        return cls(prior=prior, adaptive=adaptive, fused=fused)
