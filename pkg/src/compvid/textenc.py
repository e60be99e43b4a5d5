"""Toy contextual text encoder with annotated subject spans.

A deliberately small stand-in for a production text encoder: token and
position tables plus two residual multi-head self-attention layers, all
weights drawn from a seeded stream. The residual path dominates, so a token's
contextual embedding stays recognizably close to its isolated encoding while
still absorbing interference from every other token in the prompt. That
interference is the failure mode the anchor-disambiguation stage removes.

Subject "anchors" are obtained by re-encoding a subject's token span alone,
with the same weights, so an anchor is exactly the encoding the span would
get as a standalone prompt.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import VocabularyError
from .kernel import RngStream, softmax_rows

VOCAB_SIZE = 256
PAD_ID = 0
EMBED_DIM = 32
N_HEADS = 4
N_LAYERS = 2
MAX_TOKENS = 64

# Relative strength of the non-residual paths. Position vectors are kept
# small so anchors (always encoded at offset 0) stay aligned with the same
# phrase appearing mid-prompt; the attention scale is the interference knob.
POS_SCALE = 0.15
ATTN_SCALE = 0.45

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[int]:
    """Hash whitespace/punctuation-separated words into ids 1..255.

    Id 0 is reserved for padding.
    """
    ids = []
    for word in _WORD_RE.findall(text.lower()):
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=4).digest()
        ids.append(1 + int.from_bytes(digest, "big") % (VOCAB_SIZE - 1))
    return ids


@dataclass(frozen=True)
class SubjectSpan:
    """Half-open token span [start, end) naming one subject."""

    name: str
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"span for {self.name!r}: start {self.start} >= end {self.end}")
        if self.start < 0:
            raise ValueError(f"span for {self.name!r}: negative start")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class PromptSpec:
    """Prompt text, its token ids, and at least one subject span.

    Spans must lie within the token range and be pairwise disjoint.
    """

    text: str
    tokens: tuple[int, ...]
    subjects: tuple[SubjectSpan, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "subjects", tuple(self.subjects))
        n = len(self.tokens)
        if n == 0:
            raise ValueError("prompt has no tokens")
        if not self.subjects:
            raise ValueError("prompt needs at least one subject span")
        taken = np.zeros(n, dtype=bool)
        for span in self.subjects:
            if span.end > n:
                raise ValueError(f"span for {span.name!r} exceeds token range [0, {n})")
            if taken[span.start : span.end].any():
                raise ValueError(f"span for {span.name!r} overlaps another subject")
            taken[span.start : span.end] = True

    @classmethod
    def from_text(cls, text: str, subjects) -> "PromptSpec":
        """Build from raw text and (name, start, end) triples."""
        spans = tuple(SubjectSpan(*s) if not isinstance(s, SubjectSpan) else s for s in subjects)
        return cls(text=text, tokens=tuple(tokenize(text)), subjects=spans)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def token_masks(self) -> np.ndarray:
        """Binary (M, n_tokens) matrix of per-subject token membership."""
        masks = np.zeros((len(self.subjects), len(self.tokens)), dtype=bool)
        for i, span in enumerate(self.subjects):
            masks[i, span.start : span.end] = True
        return masks


class TextEncoder:
    """Seeded bidirectional self-attention encoder over the toy vocabulary."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        root = RngStream(seed)
        self.token_table = root.child(0).normal((VOCAB_SIZE, EMBED_DIM))
        self.pos_table = POS_SCALE * root.child(1).normal((MAX_TOKENS, EMBED_DIM))
        scale = 1.0 / np.sqrt(EMBED_DIM)
        self.layers = []
        for layer in range(N_LAYERS):
            ws = root.child(2, layer)
            self.layers.append(
                {
                    "wq": scale * ws.child(0).normal((EMBED_DIM, EMBED_DIM)),
                    "wk": scale * ws.child(1).normal((EMBED_DIM, EMBED_DIM)),
                    "wv": scale * ws.child(2).normal((EMBED_DIM, EMBED_DIM)),
                    "wo": scale * ws.child(3).normal((EMBED_DIM, EMBED_DIM)),
                }
            )

    def encode(self, tokens) -> np.ndarray:
        """Contextual embeddings (n, EMBED_DIM) for a token id sequence."""
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("token sequence must be a non-empty 1-d list")
        if ids.size > MAX_TOKENS:
            raise ValueError(f"prompt longer than {MAX_TOKENS} tokens")
        if (ids < 0).any() or (ids >= VOCAB_SIZE).any():
            bad = ids[(ids < 0) | (ids >= VOCAB_SIZE)][0]
            raise VocabularyError(f"token id {bad} outside vocabulary [0, {VOCAB_SIZE})")
        x = self.token_table[ids] + self.pos_table[: ids.size]
        head_dim = EMBED_DIM // N_HEADS
        for layer in self.layers:
            q = x @ layer["wq"]
            k = x @ layer["wk"]
            v = x @ layer["wv"]
            heads = []
            for h in range(N_HEADS):
                sl = slice(h * head_dim, (h + 1) * head_dim)
                attn = softmax_rows(q[:, sl] @ k[:, sl].T / np.sqrt(head_dim))
                heads.append(attn @ v[:, sl])
            x = x + ATTN_SCALE * (np.concatenate(heads, axis=1) @ layer["wo"])
        return x

    def encode_prompt(self, spec: PromptSpec) -> np.ndarray:
        """Embeddings of the full prompt, every token seeing all others."""
        return self.encode(spec.tokens)

    def encode_anchors(self, spec: PromptSpec) -> list[np.ndarray]:
        """Per-subject anchor embeddings, each span encoded in isolation."""
        return [self.encode(spec.tokens[s.start : s.end]) for s in spec.subjects]


def pool_span(emb: np.ndarray, span) -> np.ndarray:
    """Arithmetic mean over the rows of a half-open span."""
    emb = np.asarray(emb, dtype=np.float64)
    if isinstance(span, SubjectSpan):
        start, end = span.start, span.end
    else:
        start, end = span
    if not 0 <= start < end <= emb.shape[0]:
        raise ValueError(f"invalid span [{start}, {end}) for {emb.shape[0]} rows")
    return emb[start:end].mean(axis=0)


@dataclass
class EmbeddingSet:
    """Full-prompt embeddings plus per-subject anchors and pooled views."""

    prompt: np.ndarray          # (n_tokens, d)
    anchors: list               # M arrays (len_i, d)
    pooled_prompt: np.ndarray   # (M, d), contextual subject embeddings
    pooled_anchors: np.ndarray  # (M, d)
    spans: tuple = field(default_factory=tuple)

    def __post_init__(self):
        d = self.prompt.shape[1]
        for a in self.anchors:
            if a.shape[1] != d:
                raise ValueError("anchor dimensionality differs from prompt")
        for i, span in enumerate(self.spans):
            np.testing.assert_allclose(
                self.pooled_prompt[i], pool_span(self.prompt, span), rtol=0, atol=1e-12
            )
            np.testing.assert_allclose(
                self.pooled_anchors[i], self.anchors[i].mean(axis=0), rtol=0, atol=1e-12
            )


def embed_prompt(spec: PromptSpec, encoder: TextEncoder) -> EmbeddingSet:
    """Encode a prompt and its subject anchors into one bundle."""
    prompt = encoder.encode_prompt(spec)
    anchors = encoder.encode_anchors(spec)
    pooled_prompt = np.stack([pool_span(prompt, s) for s in spec.subjects])
    pooled_anchors = np.stack([a.mean(axis=0) for a in anchors])
    return EmbeddingSet(
        prompt=prompt,
        anchors=anchors,
        pooled_prompt=pooled_prompt,
        pooled_anchors=pooled_anchors,
        spans=tuple((s.start, s.end) for s in spec.subjects),
    )
