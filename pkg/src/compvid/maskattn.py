"""Subject-aware attention masks over a joint [video; text] token sequence.

The joint mask is an n x n binary matrix, n = n_video + n_text, with the
video block leading. It is the union of two parts:

  subject part - for each subject i with video region L_i and text tokens
      T_i, the four blocks are outer products summed over subjects and
      clamped to {0, 1}:

          vv = sum_i L_i (x) L_i      vt = sum_i L_i (x) T_i
          tv = sum_i T_i (x) L_i      tt = sum_i T_i (x) T_i

      so bit (p, q) is set iff some subject contains both endpoints.

  context part - rows of tokens belonging to no subject are fully open, so
      background video tokens and non-subject text tokens keep unrestricted
      attention. Optionally the corresponding columns open too
      (``context_symmetric``), making context tokens visible to everyone.

Two evaluation semantics are provided. The default replaces disallowed
logits with a large negative sentinel before the softmax, which makes the
restriction exact. The multiplicative mode zeroes disallowed logits instead
(elementwise product with the binary mask); it is kept for fidelity
experiments but note exp(0) = 1 still leaks probability mass to masked
pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericDomainError
from .kernel import softmax_rows
from .layout import TokenGrid

NEG_SENTINEL = -1e30

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"


@dataclass(frozen=True)
class MaskSemantics:
    """How the binary mask enters the attention logits."""

    mode: str = ADDITIVE
    context_symmetric: bool = False

    def __post_init__(self):
        if self.mode not in (ADDITIVE, MULTIPLICATIVE):
            raise ValueError(f"unknown mask mode {self.mode!r}")


@dataclass
class JointAttentionMask:
    """Binary attention mask over the joint sequence, video block first."""

    n_video: int
    n_text: int
    bits: np.ndarray  # (n, n) bool

    def __post_init__(self):
        n = self.n_video + self.n_text
        if self.bits.shape != (n, n):
            raise ValueError(f"bits shape {self.bits.shape} != ({n}, {n})")
        if self.bits.dtype != np.bool_:
            self.bits = self.bits.astype(bool)

    @property
    def n(self) -> int:
        return self.n_video + self.n_text

    @property
    def vv(self) -> np.ndarray:
        return self.bits[: self.n_video, : self.n_video]

    @property
    def vt(self) -> np.ndarray:
        return self.bits[: self.n_video, self.n_video :]

    @property
    def tv(self) -> np.ndarray:
        return self.bits[self.n_video :, : self.n_video]

    @property
    def tt(self) -> np.ndarray:
        return self.bits[self.n_video :, self.n_video :]


def subject_mask(video_masks, text_masks) -> JointAttentionMask:
    """Subject part of the joint mask from per-subject region/token masks."""
    video_masks = np.asarray(video_masks).astype(bool)
    text_masks = np.asarray(text_masks).astype(bool)
    if video_masks.ndim != 2 or text_masks.ndim != 2:
        raise ValueError("expected (M, n_video) and (M, n_text) masks")
    if video_masks.shape[0] != text_masks.shape[0]:
        raise ValueError("subject count differs between video and text masks")
    n_video, n_text = video_masks.shape[1], text_masks.shape[1]
    n = n_video + n_text
    bits = np.zeros((n, n), dtype=bool)
    joint = np.concatenate([video_masks, text_masks], axis=1)  # (M, n)
    for row in joint:
        bits |= np.outer(row, row)
    return JointAttentionMask(n_video=n_video, n_text=n_text, bits=bits)


def context_mask(video_masks, text_masks, context_symmetric: bool = False) -> JointAttentionMask:
    """Context part: full rows for tokens belonging to no subject."""
    video_masks = np.asarray(video_masks).astype(bool)
    text_masks = np.asarray(text_masks).astype(bool)
    if video_masks.ndim != 2 or text_masks.ndim != 2:
        raise ValueError("expected (M, n_video) and (M, n_text) masks")
    n_video, n_text = video_masks.shape[1], text_masks.shape[1]
    n = n_video + n_text
    is_context = np.concatenate([~video_masks.any(axis=0), ~text_masks.any(axis=0)])
    bits = np.zeros((n, n), dtype=bool)
    bits[is_context, :] = True
    if context_symmetric:
        bits[:, is_context] = True
    return JointAttentionMask(n_video=n_video, n_text=n_text, bits=bits)


def fuse_masks(subject: JointAttentionMask, context: JointAttentionMask) -> JointAttentionMask:
    """Binarized sum (elementwise OR) of subject and context parts."""
    if (subject.n_video, subject.n_text) != (context.n_video, context.n_text):
        raise ValueError("mask shapes differ")
    return JointAttentionMask(
        n_video=subject.n_video, n_text=subject.n_text, bits=subject.bits | context.bits
    )


def build_fused_mask(video_masks, text_masks, semantics: MaskSemantics) -> JointAttentionMask:
    """Subject part OR context part in one call."""
    return fuse_masks(
        subject_mask(video_masks, text_masks),
        context_mask(video_masks, text_masks, semantics.context_symmetric),
    )


def apply_mask_to_logits(logits: np.ndarray, bits: np.ndarray, mode: str) -> np.ndarray:
    """Inject a binary mask into attention logits under the given semantics.

    Square-mask rows with no allowed entry fall back to self-attention only,
    covering masks where a token's fused layout is empty; for rectangular
    (cross-attention) masks such rows open up fully instead, since there is
    no self entry to keep. ``bits`` may carry leading batch/head axes or
    broadcast against them.
    """
    bits = np.asarray(bits).astype(bool)
    empty_rows = ~bits.any(axis=-1)
    if empty_rows.any():
        bits = bits.copy()
        if bits.shape[-1] == bits.shape[-2]:
            idx = np.nonzero(empty_rows)
            bits[idx + (idx[-1],)] = True
        else:
            bits[empty_rows, :] = True
    if mode == ADDITIVE:
        return np.where(bits, logits, NEG_SENTINEL)
    if mode == MULTIPLICATIVE:
        return logits * bits
    raise ValueError(f"unknown mask mode {mode!r}")


def masked_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                     mask: JointAttentionMask | np.ndarray,
                     semantics: MaskSemantics = MaskSemantics()) -> np.ndarray:
    """Single-head attention with a binary mask injected into the logits."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape != k.shape or q.shape[0] != v.shape[0]:
        raise ValueError("q/k/v shapes inconsistent")
    for name, arr in (("q", q), ("k", k), ("v", v)):
        if not np.all(np.isfinite(arr)):
            raise NumericDomainError(f"{name} contains non-finite values")
    bits = mask.bits if isinstance(mask, JointAttentionMask) else np.asarray(mask, dtype=bool)
    if bits.shape != (q.shape[0], q.shape[0]):
        raise ValueError(f"mask shape {bits.shape} incompatible with {q.shape[0]} tokens")
    logits = q @ k.T / np.sqrt(q.shape[1])
    weights = softmax_rows(apply_mask_to_logits(logits, bits, semantics.mode))
    return weights @ v


def crossattn_masks(video_masks, text_masks, grid: TokenGrid,
                    context_symmetric: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame self-attention and video-to-text cross-attention masks.

    The per-frame structure of U-Net style backbones: within each frame a
    subject's video tokens attend only to same-region tokens of that frame
    and, in cross-attention, only to that subject's text tokens. Background
    video tokens keep the original unrestricted rules (all-ones rows).

    Returns (self_masks (F, HW, HW), cross_masks (F, HW, n_text)).
    """
    video_masks = np.asarray(video_masks).astype(bool)
    text_masks = np.asarray(text_masks).astype(bool)
    hw = grid.height * grid.width
    if video_masks.ndim != 2 or video_masks.shape[1] != grid.n_video:
        raise ValueError(f"video_masks must be (M, {grid.n_video})")
    m = video_masks.shape[0]
    n_text = text_masks.shape[1]
    per_frame = video_masks.reshape(m, grid.frames, hw) if m else np.zeros((0, grid.frames, hw), dtype=bool)
    self_masks = np.zeros((grid.frames, hw, hw), dtype=bool)
    cross_masks = np.zeros((grid.frames, hw, n_text), dtype=bool)
    for f in range(grid.frames):
        frame_regions = per_frame[:, f, :]  # (M, HW)
        for i in range(m):
            self_masks[f] |= np.outer(frame_regions[i], frame_regions[i])
            cross_masks[f] |= np.outer(frame_regions[i], text_masks[i])
        background = ~frame_regions.any(axis=0) if m else np.ones(hw, dtype=bool)
        self_masks[f, background, :] = True
        cross_masks[f, background, :] = True
        if context_symmetric:
            self_masks[f, :, background] = True
    return self_masks, cross_masks
