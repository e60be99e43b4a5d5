"""Command-line surface: ``compvid run`` and ``compvid inspect``.

Exit codes:
  0 success
  2 usage or invalid configuration
  3 layout/format validation error
  4 runtime numeric failure (sampler divergence, non-finite values)
  5 missing run artifacts

Errors print a single machine-parseable line to stderr: ``error[tag]: message``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .anchors import SadConfig
from .denoiser import CROSSATTN, JOINT
from .errors import (
    ArtifactError,
    ConfigError,
    LayoutFormatError,
    NumericDomainError,
    SamplerDivergenceError,
)
from .io import (
    LayoutFile,
    RunConfig,
    config_from_dict,
    parse_layout,
    read_attn_map,
    read_manifest,
    read_mask_set,
    upscale,
    write_pgm,
    write_ppm,
    write_run_artifacts,
)
from .maskattn import ADDITIVE, MULTIPLICATIVE, MaskSemantics
from .sampler import generate
from .training import load_params

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_RUNTIME = 4
EXIT_MISSING = 5


def _fail(tag: str, message: str, code: int) -> int:
    print(f"error[{tag}]: {message}", file=sys.stderr)
    return code


def _apply_overrides(cfg: RunConfig, args, layout: LayoutFile) -> RunConfig:
    sampler = cfg.sampler
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.no_sad:
        changes["sad"] = SadConfig(tau=sampler.sad.tau, total_steps=sampler.steps, enabled=False)
    if args.dlfa_fraction is not None:
        changes["dlfa_fraction"] = args.dlfa_fraction
    if args.mode is not None:
        changes["mode"] = args.mode
    if args.mask_semantics is not None or args.context_symmetric:
        mode = sampler.mask_semantics.mode
        if args.mask_semantics is not None:
            mode = MULTIPLICATIVE if args.mask_semantics == "mult" else ADDITIVE
        changes["mask_semantics"] = MaskSemantics(
            mode=mode,
            context_symmetric=args.context_symmetric or sampler.mask_semantics.context_symmetric,
        )
    if args.strict_threshold:
        changes["strict_threshold"] = True
    sampler = dataclasses.replace(sampler, **changes)
    return dataclasses.replace(cfg, sampler=sampler,
                               weights_path=args.weights or cfg.weights_path)


def cmd_run(args) -> int:
    try:
        if args.from_manifest:
            manifest = read_manifest(Path(args.from_manifest).parent
                                     if Path(args.from_manifest).is_file()
                                     else args.from_manifest)
            layout = parse_layout(json.dumps(manifest["layout"]))
            cfg = config_from_dict(manifest["config"], out_dir=args.out)
        else:
            if not args.layout:
                return _fail("usage", "--layout is required unless --from-manifest is given",
                             EXIT_USAGE)
            layout = parse_layout(Path(args.layout).read_bytes())
            doc = json.loads(Path(args.config).read_text()) if args.config else {}
            if "grid" in doc:
                got = (doc["grid"].get("F"), doc["grid"].get("H"), doc["grid"].get("W"))
                want = (layout.grid.frames, layout.grid.height, layout.grid.width)
                if got != want:
                    raise ConfigError(f"config grid {got} != layout grid {want}")
            # the layout file owns the token grid
            doc["grid"] = {"F": layout.grid.frames, "H": layout.grid.height,
                           "W": layout.grid.width}
            cfg = config_from_dict(doc, out_dir=args.out)
            cfg = _apply_overrides(cfg, args, layout)
        if cfg.sampler.grid != layout.grid:
            raise ConfigError(
                f"config grid {cfg.sampler.grid} != layout grid {layout.grid}")
    except FileNotFoundError as exc:
        return _fail("missing", str(exc), EXIT_MISSING)
    except json.JSONDecodeError as exc:
        return _fail("config", f"malformed config JSON: {exc}", EXIT_USAGE)
    except LayoutFormatError as exc:
        return _fail("layout", str(exc), EXIT_FORMAT)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_USAGE)

    try:
        params = load_params(cfg.weights_path) if cfg.weights_path else None
        result = generate(layout.prompt_spec(), layout.boxes_per_subject(),
                          cfg.sampler, cfg.denoiser, params)
        out = write_run_artifacts(args.out, layout, cfg, result)
    except (SamplerDivergenceError, NumericDomainError) as exc:
        return _fail("runtime", str(exc), EXIT_RUNTIME)
    except FileNotFoundError as exc:
        return _fail("missing", str(exc), EXIT_MISSING)
    print(f"run complete: {out}")
    return EXIT_OK


def _overlay_images(out: Path, run_dir: Path, scale: int) -> None:
    """RGB overlays per subject/frame: prior=red, adaptive=green, fused=blue."""
    grid, subjects, prior = read_mask_set(run_dir / "masks/prior")
    try:
        _, _, adaptive = read_mask_set(run_dir / "masks/adaptive")
        _, _, fused = read_mask_set(run_dir / "masks/fused")
    except ArtifactError:
        adaptive = np.zeros_like(prior)
        fused = prior
    for i, name in enumerate(subjects):
        stack = np.stack([prior[i], adaptive[i], fused[i]], axis=-1).astype(np.uint8) * 255
        cube = stack.reshape(grid.frames, grid.height, grid.width, 3)
        for f in range(grid.frames):
            write_ppm(out / f"overlay_s{i}_f{f}.ppm", upscale(cube[f], scale))


def _attention_images(out: Path, run_dir: Path, scale: int) -> None:
    attn_dir = run_dir / "attn"
    if not attn_dir.exists():
        return
    for header_path in sorted(attn_dir.glob("*.json")):
        header, maps = read_attn_map(header_path.with_suffix(""))
        g = header["grid"]
        cube = maps.reshape(len(header["subjects"]), g["F"], g["H"], g["W"])
        peak = cube.max() or 1.0
        for i in range(cube.shape[0]):
            for f in range(g["F"]):
                img = np.round(255.0 * cube[i, f] / peak).astype(np.uint8)
                write_pgm(out / f"attn_step{header['step']:03d}_s{i}_f{f}.pgm",
                          upscale(img, scale))


def cmd_inspect(args) -> int:
    run_dir = Path(args.run)
    try:
        manifest = read_manifest(run_dir)
        diag_path = run_dir / "diagnostics.json"
        if not diag_path.exists():
            raise ArtifactError(f"no diagnostics.json under {run_dir}")
        diagnostics = json.loads(diag_path.read_text())
        out = Path(args.out) if args.out else run_dir / "inspect"
        out.mkdir(parents=True, exist_ok=True)

        sad = diagnostics.get("sad", {})
        subjects = diagnostics.get("subjects", [])
        table_lines = ["subject pair similarity (before -> after disambiguation)"]
        before = sad.get("inter_subject_cosine_before", [])
        after = sad.get("inter_subject_cosine_after", [])
        for i in range(len(subjects)):
            for j in range(i + 1, len(subjects)):
                table_lines.append(
                    f"  {subjects[i]} / {subjects[j]}: "
                    f"{before[i][j]:+.4f} -> {after[i][j]:+.4f}"
                )
        (out / "similarity.txt").write_text("\n".join(table_lines) + "\n")
        (out / "similarity.json").write_text(json.dumps(sad, sort_keys=True, indent=2))
        if (run_dir / "masks/prior.json").exists():
            _overlay_images(out, run_dir, args.scale)
        _attention_images(out, run_dir, args.scale)
    except ArtifactError as exc:
        return _fail("missing", str(exc), EXIT_MISSING)
    print(f"inspection written to {out}")
    print("\n".join(table_lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compvid",
        description="Compositional conditioning sandbox for toy video diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="generate a video from a layout file")
    run.add_argument("--layout", help="layout JSON path")
    run.add_argument("--config", help="run config JSON path")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--no-sad", action="store_true",
                     help="disable anchor disambiguation")
    run.add_argument("--dlfa-fraction", type=float, default=None,
                     help="leading fraction of steps with masked attention")
    run.add_argument("--mode", choices=[JOINT, CROSSATTN], default=None)
    run.add_argument("--mask-semantics", choices=["additive", "mult"], default=None)
    run.add_argument("--context-symmetric", action="store_true",
                     help="open mask columns of context tokens too")
    run.add_argument("--strict-threshold", action="store_true",
                     help="literal strict top-k threshold (drops ties)")
    run.add_argument("--weights", help="trained denoiser weights (.npz)")
    run.add_argument("--from-manifest", help="rerun from a manifest.json (or its run dir)")
    run.set_defaults(func=cmd_run)

    inspect = sub.add_parser("inspect", help="render diagnostics of a finished run")
    inspect.add_argument("--run", required=True, help="run directory")
    inspect.add_argument("--out", help="where to write inspection images")
    inspect.add_argument("--scale", type=int, default=16,
                         help="nearest-neighbor upscale factor for images")
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        return _fail("config", str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
