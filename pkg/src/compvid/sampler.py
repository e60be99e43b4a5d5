"""Desk-scale latent video sampling with dual-phase compositional control.

The pipeline applies two training-free mechanisms on top of a plain
classifier-free-guidance DDIM loop:

  conditioning phase - subject token rows of the prompt embedding are nudged
      along cached anchor directions, scaled by the per-subject confusion
      and a strength that decays linearly to zero over the run.

  denoising phase - during the leading ``dlfa_fraction`` of steps, every
      attention layer rebuilds the subject layout masks from its own live
      Q/K correlations (sized by the prior masks), fuses them with the
      priors, and runs masked attention. Initial noise is drawn per subject
      region from independent sub-streams in the same window.

With both mechanisms off the loop reduces bit-for-bit to
``baseline_generate``, which is kept as a separate, uninstrumented
reference implementation of the same backbone.

The deterministic update rule is first-order DDIM over a linear
signal-level schedule: abar(s) runs linearly from ABAR_MIN at the pure-noise
end (s=0) to 1 at the final step, and

    x0_hat  = (x - sqrt(1 - abar_s) * eps_hat) / sqrt(abar_s)
    x_next  = sqrt(abar_next) * x0_hat + sqrt(1 - abar_next) * eps_hat
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .anchors import SadConfig, SadState, attenuation, interpolate
from .denoiser import CROSSATTN, JOINT, DenoiserSpec, forward, init_params
from .errors import SamplerDivergenceError
from .kernel import RngStream, cosine, gaussian_field
from .layout import LayoutSet, TokenGrid, correlation, rasterize_prior
from .maskattn import MaskSemantics, build_fused_mask, crossattn_masks
from .textenc import PromptSpec, TextEncoder, embed_prompt, pool_span

ABAR_MIN = 0.01
CHANNELS = 3


@dataclass(frozen=True)
class SamplerConfig:
    """All sampling knobs. Defaults mirror the reference setup."""

    steps: int = 50
    guidance_scale: float = 6.0
    dlfa_fraction: float = 0.10
    grid: TokenGrid = field(default_factory=lambda: TokenGrid(4, 8, 8))
    mode: str = JOINT
    seed: int = 0
    encoder_seed: int = 0
    sad: SadConfig = field(default_factory=SadConfig)
    mask_semantics: MaskSemantics = field(default_factory=MaskSemantics)
    strict_threshold: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.dlfa_fraction <= 1.0:
            raise ValueError(f"dlfa_fraction {self.dlfa_fraction} outside [0, 1]")
        if self.mode not in (JOINT, CROSSATTN):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sad.total_steps != self.steps:
            # the disambiguation strength schedule always spans the whole run
            object.__setattr__(
                self, "sad",
                SadConfig(tau=self.sad.tau, total_steps=self.steps, enabled=self.sad.enabled),
            )

    @property
    def masked_steps(self) -> int:
        """Number of leading steps with masked attention: ceil(fraction * T)."""
        return math.ceil(self.dlfa_fraction * self.steps)


def alphabar_schedule(steps: int) -> np.ndarray:
    """Linear signal-level schedule, abar[0] = ABAR_MIN .. abar[steps] = 1."""
    return ABAR_MIN + (1.0 - ABAR_MIN) * (np.arange(steps + 1) / steps)


def ddim_step(latent: np.ndarray, eps_hat: np.ndarray, step: int,
              schedule: np.ndarray) -> np.ndarray:
    a_s = schedule[step]
    a_next = schedule[step + 1]
    x0 = (latent - np.sqrt(1.0 - a_s) * eps_hat) / np.sqrt(a_s)
    return np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps_hat


def latent_to_frames(latent: np.ndarray, grid: TokenGrid) -> np.ndarray:
    """Map a (n_video, 3) latent to (F, H, W, 3) uint8 frames in [-1, 1] range."""
    video = latent.reshape(grid.frames, grid.height, grid.width, CHANNELS)
    pixels = np.clip((video + 1.0) / 2.0, 0.0, 1.0)
    return np.round(pixels * 255.0).astype(np.uint8)


def init_noise(seed: int, grid: TokenGrid, prior_masks=None, *,
               localized: bool = True, subject_keys=None,
               channels: int = CHANNELS) -> np.ndarray:
    """Initial latent noise, optionally drawn per subject region.

    Background tokens come from sub-stream (seed, [0]); subject i's region is
    then overwritten from (seed, [i+1]) in ascending order, last writer wins
    on overlaps. Every token stays marginally standard normal. Custom
    ``subject_keys`` (tuples) replace the default per-subject key suffixes.
    """
    root = RngStream(seed)
    latent = gaussian_field(root.child(0), (grid.n_video, channels))
    if not localized or prior_masks is None or len(prior_masks) == 0:
        return latent
    prior_masks = np.asarray(prior_masks).astype(bool)
    if subject_keys is None:
        subject_keys = [(i + 1,) for i in range(prior_masks.shape[0])]
    for i, key in enumerate(subject_keys):
        region = gaussian_field(root.child(*key), (grid.n_video, channels))
        latent[prior_masks[i]] = region[prior_masks[i]]
    return latent


@dataclass
class SamplerState:
    """Mutable state threaded through denoise steps, plus instrumentation."""

    latent: np.ndarray
    step: int
    cond_base: np.ndarray            # clean conditional embeddings (n_text, d)
    spans: tuple                     # per-subject (start, end) token spans
    prior_masks: np.ndarray          # (M, n_video) bool
    text_masks: np.ndarray           # (M, n_text) bool
    sad_state: SadState | None
    gating_trace: list = field(default_factory=list)
    layouts: dict = field(default_factory=dict)    # (step, layer) -> LayoutSet
    attn_maps: dict = field(default_factory=dict)  # step -> (M, n_video)
    omega_trace: list = field(default_factory=list)


def _joint_provider(state: SamplerState, config: SamplerConfig):
    # masks derive from the conditional batch row and broadcast over both
    # CFG branches of the batched forward
    nv = config.grid.n_video

    def provider(layer_idx, q_avg, k_avg):
        q = q_avg[0]
        k = k_avg[0]
        corrs = np.stack(
            [correlation(q[nv + s0 : nv + s1].mean(axis=0), k[:nv]) for s0, s1 in state.spans]
        )
        layout = LayoutSet.from_correlations(state.prior_masks, corrs,
                                             strict=config.strict_threshold)
        state.layouts[(state.step, layer_idx)] = layout
        return build_fused_mask(layout.fused, state.text_masks, config.mask_semantics).bits

    return provider


def _crossattn_provider(state: SamplerState, config: SamplerConfig):
    def provider(layer_idx, q_avg_video, k_avg_text):
        q = q_avg_video[0]
        kt = k_avg_text[0]
        corrs = np.stack(
            [correlation(kt[s0:s1].mean(axis=0), q) for s0, s1 in state.spans]
        )
        layout = LayoutSet.from_correlations(state.prior_masks, corrs,
                                             strict=config.strict_threshold)
        state.layouts[(state.step, layer_idx)] = layout
        return crossattn_masks(layout.fused, state.text_masks, config.grid,
                               config.mask_semantics.context_symmetric)

    return provider


class _AttnCollector:
    """Reduces captured attention probabilities to per-subject video maps."""

    def __init__(self, state: SamplerState, config: SamplerConfig):
        self.state = state
        self.config = config
        self.maps = []

    def __call__(self, layer_idx, probs):
        probs = probs[0].mean(axis=0)  # conditional batch row, averaged over heads
        nv = self.config.grid.n_video
        rows = []
        if self.config.mode == JOINT:
            for s0, s1 in self.state.spans:
                rows.append(probs[nv + s0 : nv + s1, :nv].mean(axis=0))
        else:
            for s0, s1 in self.state.spans:
                rows.append(probs[:, s0:s1].mean(axis=1))
        self.maps.append(np.stack(rows))

    def flush(self):
        if self.maps:
            self.state.attn_maps[self.state.step] = np.mean(self.maps, axis=0)
            self.maps = []


def denoise_step(state: SamplerState, config: SamplerConfig, spec: DenoiserSpec,
                 params: dict, schedule: np.ndarray, *,
                 collect_attn: bool = False) -> SamplerState:
    """Advance the latent by one step; mutates and returns ``state``."""
    if state.step >= config.steps:
        raise ValueError("sampler already finished")

    # conditioning: anchor-based disambiguation with decaying strength
    if config.sad.enabled and state.sad_state is not None:
        omega = attenuation(state.step, config.steps)
        cond = interpolate(state.cond_base, state.spans, state.sad_state.confusion,
                           state.sad_state.directions, omega)
        state.omega_trace.append(omega)
    else:
        cond = state.cond_base

    masked = state.step < config.masked_steps
    provider = None
    if masked:
        state.gating_trace.append(state.step)
        provider = (_joint_provider if config.mode == JOINT else _crossattn_provider)(
            state, config
        )
    collector = _AttnCollector(state, config) if collect_attn else None

    # conditional and unconditional branches share one batched forward; the
    # mask is built from the conditional row and applies to both branches
    step_frac = state.step / config.steps
    latent_b = np.broadcast_to(state.latent, (2,) + state.latent.shape)
    text_b = np.stack([cond, np.zeros_like(cond)])
    eps = forward(params, spec, latent_b, text_b, step_frac, config.grid,
                  mode=config.mode, mask_provider=provider,
                  semantics=config.mask_semantics, capture=collector)
    eps_c, eps_u = eps[0], eps[1]
    eps_hat = eps_u + config.guidance_scale * (eps_c - eps_u)

    state.latent = ddim_step(state.latent, eps_hat, state.step, schedule)
    if not np.isfinite(state.latent).all():
        raise SamplerDivergenceError(f"latent diverged at step {state.step}")
    if collector is not None:
        collector.flush()
    state.step += 1
    return state


@dataclass
class RunResult:
    """Everything a run produces, ready for dumping or inspection."""

    frames: np.ndarray               # (F, H, W, 3) uint8
    latent: np.ndarray               # (n_video, 3) float64
    gating_trace: list
    omega_trace: list
    layouts: dict
    attn_maps: dict
    prior_masks: np.ndarray
    text_masks: np.ndarray
    subjects: list
    sad_diagnostics: dict
    timings: dict


def _sad_diagnostics(emb, sad_state, spans, enabled: bool) -> dict:
    """Cosine tables before/after full-strength disambiguation."""
    m = emb.pooled_prompt.shape[0]
    if enabled and sad_state is not None:
        star = interpolate(emb.prompt, spans, sad_state.confusion,
                           sad_state.directions, omega=1.0)
        pooled_after = np.stack([pool_span(star, s) for s in spans])
        confusion = sad_state.confusion.tolist()
        delta_norms = np.linalg.norm(sad_state.directions, axis=1).tolist()
    else:
        pooled_after = emb.pooled_prompt
        confusion = [0.0] * m
        delta_norms = [0.0] * m
    pair = lambda mat: [[cosine(mat[i], mat[j]) for j in range(m)] for i in range(m)]
    return {
        "confusion": confusion,
        "delta_norms": delta_norms,
        "inter_subject_cosine_before": pair(emb.pooled_prompt),
        "inter_subject_cosine_after": pair(pooled_after),
        "anchor_cosine": pair(emb.pooled_anchors),
    }


def generate(prompt: PromptSpec, boxes_per_subject, config: SamplerConfig,
             denoiser_spec: DenoiserSpec | None = None, params: dict | None = None,
             *, collect_attn: bool = True) -> RunResult:
    """Run the full dual-phase pipeline and collect artifacts.

    Fully deterministic given (config.seed, config.encoder_seed, weight seed).
    Localized per-region noise is part of the masked-attention mechanism and
    is active only when ``dlfa_fraction > 0``.
    """
    t0 = time.perf_counter()
    spec = denoiser_spec or DenoiserSpec()
    if params is None:
        params = init_params(spec, mode=config.mode, channels=CHANNELS)
    encoder = TextEncoder(seed=config.encoder_seed)
    emb = embed_prompt(prompt, encoder)
    sad_state = (
        SadState.from_pooled(emb.pooled_prompt, emb.pooled_anchors, config.sad.tau)
        if config.sad.enabled else None
    )
    prior = rasterize_prior(boxes_per_subject, config.grid)
    dlfa_on = config.dlfa_fraction > 0.0
    latent = init_noise(config.seed, config.grid, prior, localized=dlfa_on)
    state = SamplerState(
        latent=latent,
        step=0,
        cond_base=emb.prompt,
        spans=tuple((s.start, s.end) for s in prompt.subjects),
        prior_masks=prior,
        text_masks=prompt.token_masks(),
        sad_state=sad_state,
    )
    t1 = time.perf_counter()

    schedule = alphabar_schedule(config.steps)
    for _ in range(config.steps):
        want_maps = collect_attn and (state.step < config.masked_steps or state.step == 0)
        denoise_step(state, config, spec, params, schedule, collect_attn=want_maps)
    t2 = time.perf_counter()

    return RunResult(
        frames=latent_to_frames(state.latent, config.grid),
        latent=state.latent,
        gating_trace=state.gating_trace,
        omega_trace=state.omega_trace,
        layouts=state.layouts,
        attn_maps=state.attn_maps,
        prior_masks=prior,
        text_masks=state.text_masks,
        subjects=[s.name for s in prompt.subjects],
        sad_diagnostics=_sad_diagnostics(
            emb, sad_state, state.spans, config.sad.enabled
        ),
        timings={"conditioning": t1 - t0, "sampling": t2 - t1, "total": t2 - t0},
    )


def baseline_generate(prompt: PromptSpec, config: SamplerConfig,
                      denoiser_spec: DenoiserSpec | None = None,
                      params: dict | None = None) -> RunResult:
    """Plain CFG + DDIM reference loop: no disambiguation, no masking,
    global noise init. The backbone that the pipeline must reduce to."""
    t0 = time.perf_counter()
    spec = denoiser_spec or DenoiserSpec()
    if params is None:
        params = init_params(spec, mode=config.mode, channels=CHANNELS)
    encoder = TextEncoder(seed=config.encoder_seed)
    cond = encoder.encode_prompt(prompt)
    latent = gaussian_field(RngStream(config.seed).child(0), (config.grid.n_video, CHANNELS))
    schedule = alphabar_schedule(config.steps)
    for step in range(config.steps):
        step_frac = step / config.steps
        latent_b = np.broadcast_to(latent, (2,) + latent.shape)
        text_b = np.stack([cond, np.zeros_like(cond)])
        eps = forward(params, spec, latent_b, text_b, step_frac, config.grid,
                      mode=config.mode)
        eps_hat = eps[1] + config.guidance_scale * (eps[0] - eps[1])
        latent = ddim_step(latent, eps_hat, step, schedule)
        if not np.isfinite(latent).all():
            raise SamplerDivergenceError(f"latent diverged at step {step}")
    t1 = time.perf_counter()
    return RunResult(
        frames=latent_to_frames(latent, config.grid),
        latent=latent,
        gating_trace=[],
        omega_trace=[],
        layouts={},
        attn_maps={},
        prior_masks=np.zeros((prompt.n_subjects, config.grid.n_video), dtype=bool),
        text_masks=prompt.token_masks(),
        subjects=[s.name for s in prompt.subjects],
        sad_diagnostics={},
        timings={"conditioning": 0.0, "sampling": t1 - t0, "total": t1 - t0},
    )
