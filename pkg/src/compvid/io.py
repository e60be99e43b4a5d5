"""File formats: layout/config JSON, binary dumps, frames, run manifests.

Structured data is JSON with sorted keys so artifact bytes are reproducible;
bulk payloads (masks, attention maps) are raw binary files next to a JSON
sidecar header describing shape and packing. Frames are binary PPM (P6),
grayscale maps PGM (P5). Every writer here has a matching reader and all
round-trips are lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anchors import SadConfig
from .denoiser import JOINT, DenoiserSpec
from .errors import ArtifactError, ConfigError, LayoutFormatError
from .layout import BoxSpan, TokenGrid
from .maskattn import ADDITIVE, JointAttentionMask, MaskSemantics, MULTIPLICATIVE
from .sampler import SamplerConfig
from .textenc import PromptSpec, SubjectSpan, tokenize

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# layout files

@dataclass
class LayoutFile:
    """Parsed prompt + subject spans + prior boxes + token grid."""

    prompt: str
    grid: TokenGrid
    subjects: list  # dicts: {name, token_span, boxes: [BoxSpan]}

    def prompt_spec(self) -> PromptSpec:
        return PromptSpec(
            text=self.prompt,
            tokens=tuple(tokenize(self.prompt)),
            subjects=tuple(
                SubjectSpan(s["name"], s["token_span"][0], s["token_span"][1])
                for s in self.subjects
            ),
        )

    def boxes_per_subject(self) -> list:
        return [s["boxes"] for s in self.subjects]


def _expect(cond, path, reason):
    if not cond:
        raise LayoutFormatError(path, reason)


def parse_layout(data) -> LayoutFile:
    """Parse and validate a layout document (bytes, str, or parsed JSON).

    Every violation reports the JSON path of the offending field.
    """
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise LayoutFormatError("$", f"malformed JSON: {exc}") from None
    _expect(isinstance(data, dict), "$", "top level must be an object")
    _expect(isinstance(data.get("prompt"), str) and data["prompt"].strip(), "prompt",
            "missing or empty prompt string")
    grid_obj = data.get("grid")
    _expect(isinstance(grid_obj, dict), "grid", "missing grid object")
    for axis in ("F", "H", "W"):
        _expect(isinstance(grid_obj.get(axis), int) and grid_obj[axis] >= 1,
                f"grid.{axis}", "must be a positive integer")
    grid = TokenGrid(grid_obj["F"], grid_obj["H"], grid_obj["W"])

    n_tokens = len(tokenize(data["prompt"]))
    subjects_obj = data.get("subjects")
    _expect(isinstance(subjects_obj, list) and subjects_obj, "subjects",
            "need at least one subject")
    names = set()
    taken = np.zeros(n_tokens, dtype=bool)
    subjects = []
    for i, sub in enumerate(subjects_obj):
        loc = f"subjects[{i}]"
        _expect(isinstance(sub, dict), loc, "subject must be an object")
        name = sub.get("name")
        _expect(isinstance(name, str) and name, f"{loc}.name", "missing subject name")
        _expect(name not in names, f"{loc}.name", f"duplicate subject name {name!r}")
        names.add(name)
        span = sub.get("token_span")
        _expect(isinstance(span, list) and len(span) == 2
                and all(isinstance(v, int) for v in span), f"{loc}.token_span",
                "token_span must be [start, end]")
        start, end = span
        _expect(0 <= start < end <= n_tokens, f"{loc}.token_span",
                f"span [{start}, {end}) outside prompt token range [0, {n_tokens})")
        _expect(not taken[start:end].any(), f"{loc}.token_span",
                "overlaps another subject's span")
        taken[start:end] = True
        boxes_obj = sub.get("boxes", [])
        _expect(isinstance(boxes_obj, list), f"{loc}.boxes", "boxes must be a list")
        boxes = []
        for j, box in enumerate(boxes_obj):
            bloc = f"{loc}.boxes[{j}]"
            _expect(isinstance(box, dict), bloc, "box must be an object")
            fr = box.get("frame_range")
            _expect(isinstance(fr, list) and len(fr) == 2
                    and all(isinstance(v, int) for v in fr), f"{bloc}.frame_range",
                    "frame_range must be [f0, f1]")
            _expect(0 <= fr[0] < fr[1] <= grid.frames, f"{bloc}.frame_range",
                    f"frame range [{fr[0]}, {fr[1]}) outside [0, {grid.frames})")
            bb = box.get("bbox")
            _expect(isinstance(bb, list) and len(bb) == 4
                    and all(isinstance(v, (int, float)) for v in bb), f"{bloc}.bbox",
                    "bbox must be [x0, y0, x1, y1]")
            x0, y0, x1, y1 = (float(v) for v in bb)
            _expect(0.0 <= x0 < x1 <= 1.0, f"{bloc}.bbox",
                    f"degenerate or out-of-range x extent [{x0}, {x1}]")
            _expect(0.0 <= y0 < y1 <= 1.0, f"{bloc}.bbox",
                    f"degenerate or out-of-range y extent [{y0}, {y1}]")
            boxes.append(BoxSpan((fr[0], fr[1]), (x0, y0, x1, y1)))
        subjects.append({"name": name, "token_span": (start, end), "boxes": boxes})
    return LayoutFile(prompt=data["prompt"], grid=grid, subjects=subjects)


def serialize_layout(layout: LayoutFile) -> str:
    doc = {
        "prompt": layout.prompt,
        "grid": {"F": layout.grid.frames, "H": layout.grid.height, "W": layout.grid.width},
        "subjects": [
            {
                "name": s["name"],
                "token_span": list(s["token_span"]),
                "boxes": [
                    {"frame_range": list(b.frame_range), "bbox": list(b.bbox)}
                    for b in s["boxes"]
                ],
            }
            for s in layout.subjects
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    """SamplerConfig plus denoiser spec, output location and dump toggles."""

    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    out_dir: str = "out"
    dump_frames: bool = True
    dump_masks: bool = True
    dump_attention: bool = True
    weights_path: str | None = None


def config_to_dict(cfg: RunConfig) -> dict:
    s = cfg.sampler
    return {
        "steps": s.steps,
        "guidance_scale": s.guidance_scale,
        "dlfa_fraction": s.dlfa_fraction,
        "grid": {"F": s.grid.frames, "H": s.grid.height, "W": s.grid.width},
        "mode": s.mode,
        "seed": s.seed,
        "encoder_seed": s.encoder_seed,
        "sad": {"tau": s.sad.tau, "total_steps": s.sad.total_steps, "enabled": s.sad.enabled},
        "mask_semantics": s.mask_semantics.mode,
        "context_symmetric": s.mask_semantics.context_symmetric,
        "strict_threshold": s.strict_threshold,
        "denoiser": {
            "layers": cfg.denoiser.layers,
            "d_model": cfg.denoiser.d_model,
            "heads": cfg.denoiser.heads,
            "weight_seed": cfg.denoiser.weight_seed,
        },
        "dump": {
            "frames": cfg.dump_frames,
            "masks": cfg.dump_masks,
            "attention": cfg.dump_attention,
        },
        "weights_path": cfg.weights_path,
    }


def config_from_dict(doc: dict, out_dir: str = "out") -> RunConfig:
    """Build a validated RunConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    try:
        grid_obj = doc.get("grid", {})
        grid = TokenGrid(grid_obj.get("F", 4), grid_obj.get("H", 8), grid_obj.get("W", 8))
        sad_obj = doc.get("sad", {})
        sad = SadConfig(
            tau=sad_obj.get("tau", 0.2),
            total_steps=doc.get("steps", 50),
            enabled=sad_obj.get("enabled", True),
        )
        mode_name = doc.get("mask_semantics", ADDITIVE)
        if mode_name in ("mult", "multiplicative"):
            mode_name = MULTIPLICATIVE
        semantics = MaskSemantics(
            mode=mode_name,
            context_symmetric=doc.get("context_symmetric", False),
        )
        sampler = SamplerConfig(
            steps=doc.get("steps", 50),
            guidance_scale=doc.get("guidance_scale", 6.0),
            dlfa_fraction=doc.get("dlfa_fraction", 0.10),
            grid=grid,
            mode=doc.get("mode", JOINT),
            seed=doc.get("seed", 0),
            encoder_seed=doc.get("encoder_seed", 0),
            sad=sad,
            mask_semantics=semantics,
            strict_threshold=doc.get("strict_threshold", False),
        )
        denoiser_obj = doc.get("denoiser", {})
        denoiser = DenoiserSpec(
            layers=denoiser_obj.get("layers", 4),
            d_model=denoiser_obj.get("d_model", 64),
            heads=denoiser_obj.get("heads", 4),
            weight_seed=denoiser_obj.get("weight_seed", 0),
        )
        dump = doc.get("dump", {})
        return RunConfig(
            sampler=sampler,
            denoiser=denoiser,
            out_dir=out_dir,
            dump_frames=dump.get("frames", True),
            dump_masks=dump.get("masks", True),
            dump_attention=dump.get("attention", True),
            weights_path=doc.get("weights_path"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path, out_dir: str = "out") -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON: {exc}") from None
    return config_from_dict(doc, out_dir=out_dir)


# ---------------------------------------------------------------------------
# binary dumps with JSON sidecar headers

def _write_sidecar(base: Path, header: dict, payload: bytes) -> None:
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True, indent=2))
    base.with_suffix(".bin").write_bytes(payload)


def _read_sidecar(base: Path) -> tuple[dict, bytes]:
    header_path = base.with_suffix(".json")
    payload_path = base.with_suffix(".bin")
    if not header_path.exists() or not payload_path.exists():
        raise ArtifactError(f"missing dump files for {base}")
    return json.loads(header_path.read_text()), payload_path.read_bytes()


def write_mask_set(base, grid: TokenGrid, subjects, masks) -> None:
    """Per-subject layout masks: one 0/1 byte per token, subject-major."""
    masks = np.asarray(masks).astype(bool)
    header = {
        "kind": "layout_masks",
        "version": FORMAT_VERSION,
        "grid": {"F": grid.frames, "H": grid.height, "W": grid.width},
        "subjects": list(subjects),
    }
    _write_sidecar(Path(base), header, masks.astype(np.uint8).tobytes())


def read_mask_set(base) -> tuple[TokenGrid, list, np.ndarray]:
    header, payload = _read_sidecar(Path(base))
    if header.get("kind") != "layout_masks":
        raise ArtifactError(f"{base}: not a layout mask dump")
    g = header["grid"]
    grid = TokenGrid(g["F"], g["H"], g["W"])
    subjects = header["subjects"]
    masks = np.frombuffer(payload, dtype=np.uint8).reshape(len(subjects), grid.n_video)
    return grid, subjects, masks.astype(bool)


def write_joint_mask(base, mask: JointAttentionMask) -> None:
    """n x n joint mask, row-major bits packed big-endian within bytes."""
    header = {
        "kind": "joint_mask",
        "version": FORMAT_VERSION,
        "n_video": mask.n_video,
        "n_text": mask.n_text,
        "packing": "row-major, bitorder=big",
    }
    _write_sidecar(Path(base), header, np.packbits(mask.bits, bitorder="big").tobytes())


def read_joint_mask(base) -> JointAttentionMask:
    header, payload = _read_sidecar(Path(base))
    if header.get("kind") != "joint_mask":
        raise ArtifactError(f"{base}: not a joint mask dump")
    n = header["n_video"] + header["n_text"]
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8),
                         count=n * n, bitorder="big").reshape(n, n).astype(bool)
    return JointAttentionMask(header["n_video"], header["n_text"], bits)


def write_attn_map(base, grid: TokenGrid, subjects, step: int, maps: np.ndarray) -> None:
    """Per-subject attention mass over video tokens, little-endian float64."""
    maps = np.ascontiguousarray(np.asarray(maps, dtype="<f8"))
    header = {
        "kind": "attention_map",
        "version": FORMAT_VERSION,
        "grid": {"F": grid.frames, "H": grid.height, "W": grid.width},
        "subjects": list(subjects),
        "step": step,
        "dtype": "<f8",
        "shape": list(maps.shape),
    }
    _write_sidecar(Path(base), header, maps.tobytes())


def read_attn_map(base) -> tuple[dict, np.ndarray]:
    header, payload = _read_sidecar(Path(base))
    if header.get("kind") != "attention_map":
        raise ArtifactError(f"{base}: not an attention map dump")
    maps = np.frombuffer(payload, dtype=header["dtype"]).reshape(header["shape"])
    return header, maps


# ---------------------------------------------------------------------------
# images: portable pixmap / graymap

def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) from an (H, W, 3) uint8 array."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8 image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + image.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise ArtifactError(f"{path}: not a binary PPM")
    fields, idx = [], 2
    while len(fields) < 3:
        while idx < len(raw) and raw[idx : idx + 1].isspace():
            idx += 1
        start = idx
        while idx < len(raw) and not raw[idx : idx + 1].isspace():
            idx += 1
        fields.append(int(raw[start:idx]))
    idx += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ArtifactError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(raw[idx : idx + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5) from an (H, W) uint8 array."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("expected (H, W) uint8 image")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ArtifactError(f"{path}: not a binary PGM")
    fields, idx = [], 2
    while len(fields) < 3:
        while idx < len(raw) and raw[idx : idx + 1].isspace():
            idx += 1
        start = idx
        while idx < len(raw) and not raw[idx : idx + 1].isspace():
            idx += 1
        fields.append(int(raw[start:idx]))
    idx += 1
    w, h, _ = fields
    return np.frombuffer(raw[idx : idx + w * h], dtype=np.uint8).reshape(h, w).copy()


def upscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upscaling for human-viewable dumps."""
    return np.repeat(np.repeat(image, factor, axis=0), factor, axis=1)


# ---------------------------------------------------------------------------
# run directory and manifest

def write_run_artifacts(out_dir, layout: LayoutFile, run_cfg: RunConfig, result) -> Path:
    """Write frames, mask/attention dumps, diagnostics and the manifest.

    The manifest embeds the layout and full config, so a rerun needs nothing
    but the manifest file itself. Wall-times live under "timings" and are the
    only non-reproducible bytes in the directory.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame_files = []
    if run_cfg.dump_frames:
        for f in range(result.frames.shape[0]):
            name = f"frames/frame_{f:03d}.ppm"
            write_ppm(out / name, result.frames[f])
            frame_files.append(name)
    grid = run_cfg.sampler.grid
    if run_cfg.dump_masks:
        write_mask_set(out / "masks/prior", grid, result.subjects, result.prior_masks)
        if result.layouts:
            last_key = max(result.layouts)
            layout_set = result.layouts[last_key]
            write_mask_set(out / "masks/adaptive", grid, result.subjects, layout_set.adaptive)
            write_mask_set(out / "masks/fused", grid, result.subjects, layout_set.fused)
            (out / "masks/source.json").write_text(json.dumps(
                {"step": last_key[0], "layer": last_key[1]}, sort_keys=True))
    if run_cfg.dump_attention:
        for step, maps in sorted(result.attn_maps.items()):
            write_attn_map(out / f"attn/step_{step:03d}", grid, result.subjects, step, maps)
    (out / "diagnostics.json").write_text(json.dumps({
        "sad": result.sad_diagnostics,
        "omega_trace": result.omega_trace,
        "gating_trace": result.gating_trace,
        "subjects": result.subjects,
    }, sort_keys=True, indent=2))
    manifest = {
        "version": FORMAT_VERSION,
        "layout": json.loads(serialize_layout(layout)),
        "config": config_to_dict(run_cfg),
        "gating_trace": result.gating_trace,
        "frames": frame_files,
        "timings": result.timings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return out


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ArtifactError(f"no manifest.json under {run_dir}")
    return json.loads(path.read_text())
