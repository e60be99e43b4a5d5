"""Noise-prediction training of the toy denoiser on synthetic clips.

Plain Adam on mean-squared error between predicted and true noise, with
classifier-free conditioning dropout. Training always runs the unmasked
joint architecture; the layout machinery is inference-time only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserSpec, backward, forward, init_params
from .errors import SamplerDivergenceError
from .kernel import RngStream
from .sampler import alphabar_schedule
from .textenc import TextEncoder
from .toydata import ToyDataConfig, sample_clip


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 2e-3
    cond_dropout: float = 0.1
    sampler_steps: int = 50     # noise schedule the model is trained against
    seed: int = 0
    log_every: int = 100


class Adam:
    """Standard Adam over a dict of parameter arrays."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1**self.t
        bias2 = 1.0 - self.b2**self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[key] -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def encode_clip_text(encoder: TextEncoder, tokens: np.ndarray) -> np.ndarray:
    return encoder.encode(tokens)


def train_toy(data_cfg: ToyDataConfig, spec: DenoiserSpec, train_cfg: TrainConfig,
              encoder_seed: int = 0, params: dict | None = None):
    """Train the joint-mode denoiser; returns (params, loss_history).

    With ``train_cfg.steps == 0`` the returned weights equal the seeded init.
    Text encodings are cached per distinct token sequence since the toy
    vocabulary of prompts is tiny.
    """
    if params is None:
        params = init_params(spec, channels=3, d_text=32)
    else:
        params = {k: v.copy() for k, v in params.items()}
    encoder = TextEncoder(seed=encoder_seed)
    schedule = alphabar_schedule(train_cfg.sampler_steps)
    root = RngStream(train_cfg.seed)
    opt = Adam(params, lr=train_cfg.lr)
    history = []
    text_cache: dict[bytes, np.ndarray] = {}
    sample_counter = 0

    for it in range(train_cfg.steps):
        step_rng = root.child(1, it).generator()
        latents, texts, fracs, noises = [], [], [], []
        for _ in range(train_cfg.batch_size):
            clip = sample_clip(data_cfg, sample_counter)
            sample_counter += 1
            key = clip.tokens.tobytes()
            if key not in text_cache:
                text_cache[key] = encode_clip_text(encoder, clip.tokens)
            text = text_cache[key]
            if step_rng.random() < train_cfg.cond_dropout:
                text = np.zeros_like(text)
            s = int(step_rng.integers(0, train_cfg.sampler_steps))
            abar = schedule[s]
            noise = step_rng.standard_normal(clip.video.shape)
            latents.append(np.sqrt(abar) * clip.video + np.sqrt(1.0 - abar) * noise)
            texts.append(text)
            fracs.append(s / train_cfg.sampler_steps)
            noises.append(noise)
        latent_b = np.stack(latents)
        text_b = np.stack(texts)
        noise_b = np.stack(noises)
        eps, cache = forward(params, spec, latent_b, text_b, np.array(fracs),
                             data_cfg.grid, want_cache=True)
        resid = eps - noise_b
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise SamplerDivergenceError(f"training loss diverged at step {it}")
        grads = backward(params, spec, cache, (2.0 / resid.size) * resid)
        opt.step(params, grads)
        history.append(loss)
    return params, history


def smoothed(history, window: int = 50) -> float:
    """Mean loss over the trailing window."""
    if not history:
        return float("nan")
    tail = history[-window:]
    return float(np.mean(tail))


def save_params(path, params: dict) -> None:
    np.savez_compressed(path, **params)


def load_params(path) -> dict:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
