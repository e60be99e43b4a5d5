"""Tiny noise-prediction transformer over joint [video; text] token sequences.

Two architectures share one weight format:

  joint     - every block runs multi-head self-attention over the whole
              [video; text] sequence (the layout-fusion mask plugs straight
              into these logits).
  crossattn - per-frame video self-attention followed by video-to-text
              cross-attention, text acting as a fixed memory.

The forward pass accepts a ``mask_provider`` callback so a caller can build
attention masks from the live, pre-masking Q/K of each block (that is how
the adaptive layout masks stay adaptive). Training runs unmasked; the
backward pass is hand-written and only supports the joint architecture.

Positions and the step index enter through fixed random-Fourier features
drawn from the weight seed; they are not trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .kernel import RngStream
from .layout import TokenGrid
from .maskattn import ADDITIVE, MaskSemantics, apply_mask_to_logits

LN_EPS = 1e-5

JOINT = "joint"
CROSSATTN = "crossattn"


@dataclass(frozen=True)
class DenoiserSpec:
    """Architecture knobs for the toy denoiser."""

    layers: int = 4
    d_model: int = 64
    heads: int = 4
    weight_seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even (paired sin/cos features)")
        if self.layers < 1:
            raise ValueError("need at least one layer")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


# ---------------------------------------------------------------------------
# parameters

def init_params(spec: DenoiserSpec, mode: str = JOINT, channels: int = 3,
                d_text: int = 32) -> dict:
    """Seeded random weights; the same (spec, mode) always yields the same dict."""
    if mode not in (JOINT, CROSSATTN):
        raise ValueError(f"unknown denoiser mode {mode!r}")
    root = RngStream(spec.weight_seed)
    d = spec.d_model

    def mat(stream, rows, cols):
        return stream.normal((rows, cols)) / np.sqrt(rows)

    params = {
        "vid_in.w": mat(root.child(0), channels, d),
        "vid_in.b": np.zeros(d),
        "txt_in.w": mat(root.child(1), d_text, d),
        "txt_in.b": np.zeros(d),
        "time.w": mat(root.child(2), d, d),
        "time.b": np.zeros(d),
        "final.g": np.ones(d),
        "final.b": np.zeros(d),
        "out.w": mat(root.child(3), d, channels),
        "out.b": np.zeros(channels),
    }
    for i in range(spec.layers):
        blk = root.child(10 + i)
        params[f"blk{i}.ln1.g"] = np.ones(d)
        params[f"blk{i}.ln1.b"] = np.zeros(d)
        for j, name in enumerate(("wq", "wk", "wv", "wo")):
            params[f"blk{i}.{name}"] = mat(blk.child(j), d, d)
            params[f"blk{i}.b{name[1]}"] = np.zeros(d)
        if mode == CROSSATTN:
            params[f"blk{i}.lnc.g"] = np.ones(d)
            params[f"blk{i}.lnc.b"] = np.zeros(d)
            for j, name in enumerate(("cq", "ck", "cv", "co")):
                params[f"blk{i}.{name}"] = mat(blk.child(4 + j), d, d)
                params[f"blk{i}.b{name}"] = np.zeros(d)
        params[f"blk{i}.ln2.g"] = np.ones(d)
        params[f"blk{i}.ln2.b"] = np.zeros(d)
        params[f"blk{i}.mlp.w1"] = mat(blk.child(8), d, 4 * d)
        params[f"blk{i}.mlp.b1"] = np.zeros(4 * d)
        params[f"blk{i}.mlp.w2"] = mat(blk.child(9), 4 * d, d)
        params[f"blk{i}.mlp.b2"] = np.zeros(d)
    return params


def _fourier(coords: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Paired sin/cos features of (n, a) coordinates under (a, d/2) frequencies."""
    phase = 2.0 * np.pi * coords @ freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def video_positions(spec: DenoiserSpec, grid: TokenGrid) -> np.ndarray:
    """Fixed positional features (n_video, d_model) for a token grid."""
    f, y, x = np.meshgrid(
        np.arange(grid.frames), np.arange(grid.height), np.arange(grid.width), indexing="ij"
    )
    coords = np.stack(
        [f.ravel() / grid.frames, y.ravel() / grid.height, x.ravel() / grid.width], axis=1
    )
    freqs = RngStream(spec.weight_seed).child(100).normal((3, spec.d_model // 2))
    return _fourier(coords, freqs)


def text_positions(spec: DenoiserSpec, n_text: int) -> np.ndarray:
    coords = (np.arange(n_text) / 64.0)[:, None]
    freqs = RngStream(spec.weight_seed).child(101).normal((1, spec.d_model // 2))
    return _fourier(coords, freqs)


def time_features(spec: DenoiserSpec, step_frac: np.ndarray) -> np.ndarray:
    """(B, d_model) features of the normalized step position."""
    coords = np.atleast_1d(np.asarray(step_frac, dtype=np.float64))[:, None]
    freqs = RngStream(spec.weight_seed).child(102).normal((1, spec.d_model // 2))
    return _fourier(coords, freqs)


# ---------------------------------------------------------------------------
# primitive layers (forward + backward)

def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_bwd(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_bwd(x):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def _softmax_last(x):
    # x is always a freshly built logits array, safe to consume in place
    x -= x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def _split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _attention(h, params, prefix, heads, layer_idx=None, mask_provider=None,
               mask_mode=ADDITIVE, capture=None, kv=None):
    """Multi-head attention sublayer; ``kv`` switches to cross-attention."""
    source = h if kv is None else kv
    q = _split_heads(h @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"], heads)
    k = _split_heads(source @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"], heads)
    v = _split_heads(source @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"], heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = (q @ k.transpose(0, 1, 3, 2)) * scale
    bits = None
    if mask_provider is not None:
        bits = mask_provider(layer_idx, q.mean(axis=1), k.mean(axis=1))
    if bits is not None:
        logits = apply_mask_to_logits(logits, bits, mask_mode)
    probs = _softmax_last(logits)
    if capture is not None:
        capture(layer_idx, probs)
    out = _merge_heads(probs @ v) @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]
    return out, (h, source, q, k, v, probs)


def _attention_bwd(dout, params, prefix, cache, grads):
    h, source, q, k, v, probs = cache
    heads, dh = q.shape[1], q.shape[3]
    merged = _merge_heads(probs @ v)
    d2 = merged.reshape(-1, merged.shape[-1])
    grads[f"{prefix}.wo"] += d2.T @ dout.reshape(-1, dout.shape[-1])
    grads[f"{prefix}.bo"] += dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    dmerged = dout @ params[f"{prefix}.wo"].T
    dctx = _split_heads(dmerged, heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    scale = 1.0 / np.sqrt(dh)
    dq = (dlogits @ k) * scale
    dk = (dlogits.transpose(0, 1, 3, 2) @ q) * scale
    dh_total = np.zeros_like(h)
    dsource = np.zeros_like(source)
    for name, dproj, target in (("wq", dq, "h"), ("wk", dk, "s"), ("wv", dv, "s")):
        flat = _merge_heads(dproj)
        inp = h if target == "h" else source
        grads[f"{prefix}.{name}"] += inp.reshape(-1, inp.shape[-1]).T @ flat.reshape(-1, flat.shape[-1])
        grads[f"{prefix}.b{name[1]}"] += flat.reshape(-1, flat.shape[-1]).sum(axis=0)
        contribution = flat @ params[f"{prefix}.{name}"].T
        if target == "h":
            dh_total += contribution
        else:
            dsource += contribution
    return dh_total, dsource


# ---------------------------------------------------------------------------
# full model

def forward(params: dict, spec: DenoiserSpec, latent: np.ndarray, text: np.ndarray,
            step_frac, grid: TokenGrid, *, mode: str = JOINT,
            mask_provider=None, semantics: MaskSemantics | None = None,
            capture=None, want_cache: bool = False):
    """Predict per-video-token noise.

    latent: (B, n_video, C); text: (B, n_text, d_text); step_frac: scalar or
    (B,) normalized step position. Returns (B, n_video, C), plus the
    activation cache when ``want_cache`` (joint mode, unmasked only).
    """
    if mode == CROSSATTN:
        if want_cache:
            raise ValueError("training cache is only supported for the joint mode")
        return _forward_crossattn(params, spec, latent, text, step_frac, grid,
                                  mask_provider=mask_provider, semantics=semantics,
                                  capture=capture)
    if want_cache and mask_provider is not None:
        raise ValueError("masked attention has no backward pass")
    mask_mode = (semantics or MaskSemantics()).mode
    b, n_video, _ = latent.shape
    n_text = text.shape[1]
    step_frac = np.broadcast_to(np.atleast_1d(np.asarray(step_frac, dtype=np.float64)), (b,))

    xv = latent @ params["vid_in.w"] + params["vid_in.b"] + video_positions(spec, grid)
    xt = text @ params["txt_in.w"] + params["txt_in.b"] + text_positions(spec, n_text)
    tfeat = time_features(spec, step_frac)
    tvec = tfeat @ params["time.w"] + params["time.b"]
    x = np.concatenate([xv, xt], axis=1) + tvec[:, None, :]

    cache = {"latent": latent, "text": text, "tfeat": tfeat, "blocks": [],
             "n_video": n_video} if want_cache else None
    for i in range(spec.layers):
        h, ln1c = _layer_norm(x, params[f"blk{i}.ln1.g"], params[f"blk{i}.ln1.b"])
        attn, attnc = _attention(h, params, f"blk{i}", spec.heads, layer_idx=i,
                                 mask_provider=mask_provider, mask_mode=mask_mode,
                                 capture=capture)
        x1 = x + attn
        h2, ln2c = _layer_norm(x1, params[f"blk{i}.ln2.g"], params[f"blk{i}.ln2.b"])
        pre = h2 @ params[f"blk{i}.mlp.w1"] + params[f"blk{i}.mlp.b1"]
        act = _gelu(pre)
        mlp = act @ params[f"blk{i}.mlp.w2"] + params[f"blk{i}.mlp.b2"]
        x2 = x1 + mlp
        if want_cache:
            cache["blocks"].append((x, ln1c, attnc, x1, ln2c, h2, pre, act, x2))
        x = x2

    y, lnfc = _layer_norm(x, params["final.g"], params["final.b"])
    eps = y[:, :n_video, :] @ params["out.w"] + params["out.b"]
    if want_cache:
        cache["final"] = (x, lnfc, y)
        return eps, cache
    return eps


def _forward_crossattn(params, spec, latent, text, step_frac, grid, *,
                       mask_provider=None, semantics=None, capture=None):
    """Per-frame self-attention + video-to-text cross-attention variant.

    ``mask_provider(layer, q_avg_video, k_avg_text)`` may return a pair
    (self_bits (F, HW, HW), cross_bits (F, HW, n_text)); the layout is
    derived once per block from the block input's cross projections.
    """
    mask_mode = (semantics or MaskSemantics()).mode
    b, n_video, _ = latent.shape
    n_text = text.shape[1]
    hw = grid.height * grid.width
    step_frac = np.broadcast_to(np.atleast_1d(np.asarray(step_frac, dtype=np.float64)), (b,))

    x = latent @ params["vid_in.w"] + params["vid_in.b"] + video_positions(spec, grid)
    mem = text @ params["txt_in.w"] + params["txt_in.b"] + text_positions(spec, n_text)
    tvec = time_features(spec, step_frac) @ params["time.w"] + params["time.b"]
    x = x + tvec[:, None, :]

    for i in range(spec.layers):
        bits = None
        if mask_provider is not None:
            hq, _ = _layer_norm(x, params[f"blk{i}.lnc.g"], params[f"blk{i}.lnc.b"])
            q_avg = _split_heads(hq @ params[f"blk{i}.cq"] + params[f"blk{i}.bcq"], spec.heads).mean(axis=1)
            k_avg = _split_heads(mem @ params[f"blk{i}.ck"] + params[f"blk{i}.bck"], spec.heads).mean(axis=1)
            bits = mask_provider(i, q_avg, k_avg)
        self_bits, cross_bits = bits if bits is not None else (None, None)

        # per-frame self-attention: fold frames into the batch axis
        h, _ = _layer_norm(x, params[f"blk{i}.ln1.g"], params[f"blk{i}.ln1.b"])
        hf = h.reshape(b * grid.frames, hw, spec.d_model)
        provider = None
        if self_bits is not None:
            # (B*F, 1, HW, HW): broadcast the per-frame masks over heads
            frame_bits = np.tile(self_bits, (b, 1, 1))[:, None, :, :]
            provider = lambda _l, _q, _k, fb=frame_bits: fb
        attn, _ = _attention(hf, params, f"blk{i}", spec.heads, layer_idx=i,
                             mask_provider=provider, mask_mode=mask_mode)
        x = x + attn.reshape(b, n_video, spec.d_model)

        # cross-attention into the text memory
        hc, _ = _layer_norm(x, params[f"blk{i}.lnc.g"], params[f"blk{i}.lnc.b"])
        q = _split_heads(hc @ params[f"blk{i}.cq"] + params[f"blk{i}.bcq"], spec.heads)
        k = _split_heads(mem @ params[f"blk{i}.ck"] + params[f"blk{i}.bck"], spec.heads)
        v = _split_heads(mem @ params[f"blk{i}.cv"] + params[f"blk{i}.bcv"], spec.heads)
        logits = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(spec.d_head)
        if cross_bits is not None:
            flat_bits = cross_bits.reshape(n_video, n_text)
            logits = apply_mask_to_logits(logits, flat_bits, mask_mode)
        probs = _softmax_last(logits)
        if capture is not None:
            capture(i, probs)
        out = _merge_heads(probs @ v) @ params[f"blk{i}.co"] + params[f"blk{i}.bco"]
        x = x + out

        h2, _ = _layer_norm(x, params[f"blk{i}.ln2.g"], params[f"blk{i}.ln2.b"])
        x = x + _gelu(h2 @ params[f"blk{i}.mlp.w1"] + params[f"blk{i}.mlp.b1"]) @ params[f"blk{i}.mlp.w2"] + params[f"blk{i}.mlp.b2"]

    y, _ = _layer_norm(x, params["final.g"], params["final.b"])
    return y @ params["out.w"] + params["out.b"]


def backward(params: dict, spec: DenoiserSpec, cache: dict, d_eps: np.ndarray) -> dict:
    """Gradients of all trained parameters for the joint-mode forward."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    n_video = cache["n_video"]
    x_final, lnfc, y = cache["final"]

    dy = np.zeros_like(y)
    dy[:, :n_video, :] = d_eps @ params["out.w"].T
    yv = y[:, :n_video, :].reshape(-1, spec.d_model)
    grads["out.w"] += yv.T @ d_eps.reshape(-1, d_eps.shape[-1])
    grads["out.b"] += d_eps.reshape(-1, d_eps.shape[-1]).sum(axis=0)
    dx, dg, db = _layer_norm_bwd(dy, params["final.g"], lnfc)
    grads["final.g"] += dg
    grads["final.b"] += db

    for i in reversed(range(spec.layers)):
        x_in, ln1c, attnc, x1, ln2c, h2, pre, act, _ = cache["blocks"][i]
        # mlp branch
        dmlp = dx
        flat_act = act.reshape(-1, act.shape[-1])
        grads[f"blk{i}.mlp.w2"] += flat_act.T @ dmlp.reshape(-1, spec.d_model)
        grads[f"blk{i}.mlp.b2"] += dmlp.reshape(-1, spec.d_model).sum(axis=0)
        dact = dmlp @ params[f"blk{i}.mlp.w2"].T
        dpre = dact * _gelu_bwd(pre)
        flat_h2 = h2.reshape(-1, spec.d_model)
        grads[f"blk{i}.mlp.w1"] += flat_h2.T @ dpre.reshape(-1, dpre.shape[-1])
        grads[f"blk{i}.mlp.b1"] += dpre.reshape(-1, dpre.shape[-1]).sum(axis=0)
        dh2 = dpre @ params[f"blk{i}.mlp.w1"].T
        dx1_from_ln, dg2, db2 = _layer_norm_bwd(dh2, params[f"blk{i}.ln2.g"], ln2c)
        grads[f"blk{i}.ln2.g"] += dg2
        grads[f"blk{i}.ln2.b"] += db2
        dx1 = dx + dx1_from_ln
        # attention branch
        dh_attn, dsource = _attention_bwd(dx1, params, f"blk{i}", attnc, grads)
        dh = dh_attn + dsource  # self-attention: h and source coincide
        dx_from_ln, dg1, db1 = _layer_norm_bwd(dh, params[f"blk{i}.ln1.g"], ln1c)
        grads[f"blk{i}.ln1.g"] += dg1
        grads[f"blk{i}.ln1.b"] += db1
        dx = dx1 + dx_from_ln

    # input projections and time conditioning
    dtvec = dx.sum(axis=1)
    grads["time.w"] += cache["tfeat"].T @ dtvec
    grads["time.b"] += dtvec.sum(axis=0)
    dxv = dx[:, :n_video, :]
    dxt = dx[:, n_video:, :]
    latent, text = cache["latent"], cache["text"]
    grads["vid_in.w"] += latent.reshape(-1, latent.shape[-1]).T @ dxv.reshape(-1, spec.d_model)
    grads["vid_in.b"] += dxv.reshape(-1, spec.d_model).sum(axis=0)
    grads["txt_in.w"] += text.reshape(-1, text.shape[-1]).T @ dxt.reshape(-1, spec.d_model)
    grads["txt_in.b"] += dxt.reshape(-1, spec.d_model).sum(axis=0)
    return grads
