"""Small diagnostic scores for the toy sandbox."""

from __future__ import annotations

import numpy as np

from .maskattn import JointAttentionMask


def region_color_score(video: np.ndarray, mask: np.ndarray,
                       target_color: np.ndarray) -> float:
    """Mean cosine between region pixels and a target color, mapped to [0, 1].

    ``video`` is any (..., 3) float array in [-1, 1] range whose leading axes
    flatten to the mask length. 1.0 means the region is exactly the target
    color direction, 0.0 the opposite color; random content sits near 0.5.
    """
    pixels = np.asarray(video, dtype=np.float64).reshape(-1, 3)
    mask = np.asarray(mask).astype(bool).ravel()
    if mask.shape[0] != pixels.shape[0]:
        raise ValueError(f"mask length {mask.shape[0]} != {pixels.shape[0]} pixels")
    if not mask.any():
        raise ValueError("empty region mask")
    target = np.asarray(target_color, dtype=np.float64).ravel()
    tn = np.linalg.norm(target)
    if tn == 0:
        raise ValueError("target color must be nonzero")
    region = pixels[mask]
    norms = np.linalg.norm(region, axis=1)
    safe = norms > 1e-12
    cos = np.zeros(region.shape[0])
    cos[safe] = (region[safe] @ target) / (norms[safe] * tn)
    return float((cos.mean() + 1.0) / 2.0)


def attention_leakage(weights: np.ndarray, mask: JointAttentionMask,
                      fused_masks: np.ndarray, text_masks: np.ndarray) -> float:
    """Worst-case attention mass crossing subject boundaries.

    ``weights`` is an (n, n) row-stochastic attention matrix over the joint
    sequence. For every subject i, sums the mass that video tokens outside
    its fused region place on its text tokens, and the mass its region
    tokens place on other subjects' text. Returns the maximum single-row
    leak, which additive masking should hold near zero.
    """
    fused_masks = np.asarray(fused_masks).astype(bool)
    text_masks = np.asarray(text_masks).astype(bool)
    nv = mask.n_video
    worst = 0.0
    for i in range(fused_masks.shape[0]):
        outside = ~fused_masks[i]
        text_cols = nv + np.flatnonzero(text_masks[i])
        if outside.any() and text_cols.size:
            worst = max(worst, float(weights[np.flatnonzero(outside)[:, None], text_cols].sum(axis=1).max()))
        others = text_masks[np.arange(text_masks.shape[0]) != i].any(axis=0) & ~text_masks[i]
        other_cols = nv + np.flatnonzero(others)
        inside = np.flatnonzero(fused_masks[i])
        if inside.size and other_cols.size:
            worst = max(worst, float(weights[inside[:, None], other_cols].sum(axis=1).max()))
    return worst
