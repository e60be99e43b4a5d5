"""Synthetic moving-squares dataset for the toy denoiser.

Each clip is an F x H x W x 3 video of one or two colored squares on a black
background, static or drifting one cell per frame, paired with a fixed-length
token prompt naming each square's color and starting position. Two-square
clips always place the squares in opposite halves, so color-position binding
is the thing a model has to learn (and the thing it confuses when trained
lightly).

Sampling is a pure function of (config, index): sample i is drawn from the
sub-stream (seed, [i]) and never depends on iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import RngStream
from .layout import BoxSpan, TokenGrid
from .textenc import PAD_ID, PromptSpec, SubjectSpan, tokenize

PALETTE = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
    "magenta": (1.0, -1.0, 1.0),
    "cyan": (-1.0, 1.0, 1.0),
}

POSITIONS = ("left", "right", "top", "bottom")

BACKGROUND = -1.0


@dataclass(frozen=True)
class ToyDataConfig:
    """Clip generator settings.

    With ``positional_prompts`` off (the default) prompts name only colors,
    never sides, so the only way to control which square lands where is a
    layout. This is the regime the steering experiments use.
    """

    grid: TokenGrid
    seed: int = 0
    two_square_prob: float = 0.5
    motion_prob: float = 0.5
    pad_len: int = 16
    positional_prompts: bool = False

    def __post_init__(self):
        if self.grid.height < 4 or self.grid.width < 4:
            raise ValueError("grid too small for squares")


@dataclass
class ToyClip:
    video: np.ndarray       # (n_video, 3) float64 in [-1, 1]
    tokens: np.ndarray      # (pad_len,) int64
    text: str
    subjects: list          # (name, start, end) spans into the padded tokens
    colors: list            # color names per subject
    positions: list         # position words per subject
    boxes: list             # per-subject [BoxSpan] covering the square's sweep


def _position_origin(pos: str, h: int, w: int, size: int, rng) -> tuple[int, int]:
    """Top-left corner of a square constrained to one half of the frame."""
    if pos == "left":
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, max(w // 2 - size, 0) + 1))
    elif pos == "right":
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(w // 2, w - size + 1))
    elif pos == "top":
        y = int(rng.integers(0, max(h // 2 - size, 0) + 1))
        x = int(rng.integers(0, w - size + 1))
    else:  # bottom
        y = int(rng.integers(h // 2, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
    return y, x


def _half_box(pos: str) -> tuple[float, float, float, float]:
    return {
        "left": (0.0, 0.0, 0.5, 1.0),
        "right": (0.5, 0.0, 1.0, 1.0),
        "top": (0.0, 0.0, 1.0, 0.5),
        "bottom": (0.0, 0.5, 1.0, 1.0),
    }[pos]


def half_boxes(positions, frames: int) -> list:
    """Prior boxes covering each named half over all frames."""
    return [[BoxSpan((0, frames), _half_box(p))] for p in positions]


def _paint(video, grid: TokenGrid, f, y, x, size, color):
    y = min(max(y, 0), grid.height - size)
    x = min(max(x, 0), grid.width - size)
    video[f, y : y + size, x : x + size] = color


def sample_clip(config: ToyDataConfig, index: int) -> ToyClip:
    """Deterministic clip number ``index``."""
    rng = RngStream(config.seed).child(index).generator()
    grid = config.grid
    n_squares = 2 if rng.random() < config.two_square_prob else 1
    size = 2 if min(grid.height, grid.width) < 6 else int(rng.integers(2, 4))

    if n_squares == 2:
        axis = "horizontal" if rng.random() < 0.5 else "vertical"
        positions = ["left", "right"] if axis == "horizontal" else ["top", "bottom"]
        if rng.random() < 0.5:
            positions.reverse()
    else:
        positions = [POSITIONS[int(rng.integers(len(POSITIONS)))]]
    color_names = list(rng.choice(list(PALETTE), size=n_squares, replace=False))

    video = np.full((grid.frames, grid.height, grid.width, 3), BACKGROUND)
    phrases = []
    for pos, cname in zip(positions, color_names):
        y, x = _position_origin(pos, grid.height, grid.width, size, rng)
        if rng.random() < config.motion_prob and grid.frames > 1:
            # drift along the free axis, one cell per frame
            dy, dx = (1, 0) if pos in ("left", "right") else (0, 1)
            if rng.random() < 0.5:
                dy, dx = -dy, -dx
        else:
            dy = dx = 0
        for f in range(grid.frames):
            _paint(video, grid, f, y + dy * f, x + dx * f, size, PALETTE[cname])
        if config.positional_prompts:
            phrases.append(f"a {cname} square at the {pos}")
        else:
            phrases.append(f"a {cname} square")

    text = " and ".join(phrases)
    tokens = tokenize(text)
    if len(tokens) > config.pad_len:
        raise ValueError("prompt exceeds pad length")
    padded = np.full(config.pad_len, PAD_ID, dtype=np.int64)
    padded[: len(tokens)] = tokens
    # subject span covers "<color> square" inside each phrase; phrases are
    # joined by "and", so consecutive phrase starts differ by len+1 tokens
    phrase_len = 6 if config.positional_prompts else 3
    subjects = []
    for i, (cname, pos) in enumerate(zip(color_names, positions)):
        start = i * (phrase_len + 1) + 1
        subjects.append((f"{cname} square", start, start + 2))
    return ToyClip(
        video=video.reshape(grid.n_video, 3),
        tokens=padded,
        text=text,
        subjects=subjects,
        colors=color_names,
        positions=positions,
        boxes=half_boxes(positions, grid.frames),
    )


def clip_prompt_spec(clip: ToyClip) -> PromptSpec:
    """PromptSpec over the padded token sequence (pads act as context)."""
    return PromptSpec(
        text=clip.text,
        tokens=tuple(clip.tokens),
        subjects=tuple(SubjectSpan(n, s, e) for n, s, e in clip.subjects),
    )
