"""Batch command-line interface.

Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure (solver
divergence, failed gradient check).

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (``#`` starts a comment), then command-line flags.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from depthfuse.core import CameraIntrinsics, DepthMap, RgbImage, Scale, to_linear
from depthfuse.errors import DepthFuseError, SolverDiverged, UnfillableWarning
from depthfuse.fusion import IrlsConfig, fuse
from depthfuse.imaging import BilateralParams, cross_bilateral_fill, upsample_bilinear
from depthfuse.losses import (
    GRADCHECK_TOL,
    ImageSetBatch,
    check_loss_gradients,
    loss_combined,
    loss_set,
    loss_single,
    set_regularizer,
)
from depthfuse.metrics import CSV_HEADER, MetricsAccumulator, evaluate, finalize, pixel_terms
from depthfuse.projection import backproject, write_ply
from depthfuse.raster_io import (
    import_pfm,
    read_depth,
    read_gradients,
    read_rgb,
    write_depth,
    write_gradients,
    write_mask,
)
from depthfuse.synth import NoiseSpec, SceneKind, SceneSpec, corrupt, generate, random_scene
from depthfuse.transforms import AugTransform

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class ConfigError(DepthFuseError, ValueError):
    pass


class UsageError(DepthFuseError, ValueError):
    pass


def _scale(text: str) -> Scale:
    try:
        return Scale(text.strip().lower())
    except ValueError:
        raise ValueError(f"expected 'log' or 'linear', got {text!r}") from None


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _rect(text: str) -> Optional[tuple[int, ...]]:
    if text.strip().lower() in ("", "auto", "none"):
        return None
    parts = tuple(int(v) for v in text.replace(",", " ").split())
    if len(parts) != 4:
        raise ValueError("rect needs four integers x0,y0,x1,y1")
    return parts


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: object
    help: str


# Every key here can appear in a config file and as --flag (underscores become dashes).
CONFIG_KEYS: dict[str, Key] = {
    "omega": Key(float, 10.0, "weight of the gradient term in fusion"),
    "lambda": Key(float, 1.0, "weight of the set regularizer"),
    "epsilon": Key(float, 1e-4, "robust penalty sqrt(x^2 + epsilon)"),
    "fusion_domain": Key(_scale, Scale.LOG, "fuse in 'log' or 'linear' depth"),
    "max_outer_iters": Key(int, 50, "IRLS outer iterations"),
    "outer_tol": Key(float, 1e-6, "IRLS relative objective change for convergence"),
    "grad_tol": Key(float, 1e-5, "IRLS max objective-gradient for convergence"),
    "cg_tol": Key(float, 1e-8, "conjugate-gradient relative residual"),
    "cg_max_iters": Key(int, 0, "conjugate-gradient iterations per solve (0 = 10 x unknowns)"),
    "spatial_kernel": Key(int, 10, "bilateral window size in pixels (even sizes round up)"),
    "spatial_sigma": Key(float, 5.0, "bilateral spatial sigma in pixels"),
    "range_sigma": Key(float, 0.1, "bilateral range sigma in meters"),
    "color_sigma": Key(float, 0.1, "cross-bilateral guide colour sigma"),
    "fx": Key(_optional_float, None, "focal length x in pixels (auto = synthetic camera)"),
    "fy": Key(_optional_float, None, "focal length y in pixels (auto = synthetic camera)"),
    "cx": Key(_optional_float, None, "principal point x (auto = image centre)"),
    "cy": Key(_optional_float, None, "principal point y (auto = image centre)"),
    "upsample_factor": Key(int, 4, "pipeline bilinear upsampling factor"),
    # synthetic scenes
    "scene": Key(lambda s: SceneKind(s.strip().lower()), SceneKind.BOX,
                 "synthetic scene: plane, ramp, box or staircase"),
    "height": Key(int, 64, "synthetic scene height"),
    "width": Key(int, 64, "synthetic scene width"),
    "seed": Key(int, 0, "synthetic scene seed"),
    "randomize": Key(lambda s: s.strip().lower() in ("1", "true", "yes"), False,
                     "draw scene parameters from the seed"),
    "depth": Key(float, 2.0, "plane depth (m)"),
    "near": Key(float, 1.0, "ramp/staircase near depth (m)"),
    "far": Key(float, 3.0, "ramp/staircase far depth (m)"),
    "bg_depth": Key(float, 3.0, "box background depth (m)"),
    "box_depth": Key(float, 1.5, "box depth (m)"),
    "rect": Key(_rect, None, "box rectangle x0,y0,x1,y1 (auto = centred half-size box)"),
    "levels": Key(int, 4, "staircase levels"),
    "depth_sigma": Key(float, 0.0, "depth noise sigma"),
    "gradient_sigma": Key(float, 0.0, "gradient noise sigma"),
    "hole_fraction": Key(float, 0.0, "fraction of depth pixels to invalidate"),
    "noise_seed": Key(int, 0, "noise seed"),
}

FUSION_KEYS = ("omega", "epsilon", "fusion_domain", "max_outer_iters", "outer_tol",
               "grad_tol", "cg_tol", "cg_max_iters")
FILTER_KEYS = ("spatial_kernel", "spatial_sigma", "range_sigma", "color_sigma")
CAMERA_KEYS = ("fx", "fy", "cx", "cy")
SYNTH_KEYS = ("scene", "height", "width", "seed", "randomize", "depth", "near", "far",
              "bg_depth", "box_depth", "rect", "levels", "depth_sigma", "gradient_sigma",
              "hole_fraction", "noise_seed")


def parse_config(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse ``key = value`` lines.  Errors name the file, line and key."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}, line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}, line {lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}, line {lineno}: bad value for key {key!r}: {exc}") from None
    return out


def _settings(args: argparse.Namespace, keys: Sequence[str]) -> dict[str, object]:
    settings = {k: CONFIG_KEYS[k].default for k in keys}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
        settings.update({k: v for k, v in parse_config(text, str(path)).items() if k in settings})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def _add_keys(parser: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value settings file")
    for k in keys:
        spec = CONFIG_KEYS[k]
        default = spec.default.value if hasattr(spec.default, "value") else spec.default
        shown = "auto" if default is None else default

        def parse(text, spec=spec, k=k):
            try:
                return spec.parse(text)
            except ValueError as exc:
                raise argparse.ArgumentTypeError(f"--{k.replace('_', '-')}: {exc}")

        parser.add_argument(f"--{k.replace('_', '-')}", dest=k, type=parse, default=None,
                            metavar="V", help=f"{spec.help} (default: {shown})")


def _irls(s) -> IrlsConfig:
    return IrlsConfig(s["max_outer_iters"], s["outer_tol"], s["cg_tol"],
                      s["cg_max_iters"] or None, s["grad_tol"])


def _bilateral(s) -> BilateralParams:
    return BilateralParams(s["spatial_kernel"], s["spatial_sigma"], s["range_sigma"],
                           s["color_sigma"])


def _intrinsics(s, height: int, width: int) -> CameraIntrinsics:
    base = CameraIntrinsics.synthetic(height, width)
    vals = [base.fx, base.fy, base.cx, base.cy]
    for i, k in enumerate(CAMERA_KEYS):
        if s[k] is not None:
            vals[i] = s[k]
    return CameraIntrinsics(*vals)


def _notice(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_depth(path) -> DepthMap:
    path = Path(path)
    try:
        if path.suffix.lower() == ".pfm":
            return import_pfm(path)
        return read_depth(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_gradients(gx_path, gy_path):
    for p in (gx_path, gy_path):
        if not Path(p).is_file():
            raise UsageError(f"no such file: {p}")
    return read_gradients(gx_path, gy_path)


def _load_rgb(path) -> RgbImage:
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return read_rgb(path)


# -- commands ------------------------------------------------------------------

def _run_fusion(depth: DepthMap, grads, s, depth_name: str, gx_name: str):
    if depth.shape != grads.shape:
        raise UsageError(f"{gx_name}: gradient shape {grads.shape} does not match "
                         f"{depth_name} shape {depth.shape}")
    domain = s["fusion_domain"]
    if grads.scale is not domain:
        raise UsageError(f"{gx_name}: gradients are {grads.scale.value}-scale but the fusion "
                         f"domain is {domain.value}; pass --fusion-domain {grads.scale.value}")
    return fuse(depth, grads, s["omega"], s["epsilon"], domain, _irls(s))


def _fusion_report(result) -> str:
    lines = [f"iterations={result.outer_iters}",
             f"converged={'true' if result.converged else 'false'}",
             f"objective={result.objective_trace[-1]:.12g}",
             "trace=" + ",".join(f"{v:.12g}" for v in result.objective_trace)]
    return "\n".join(lines) + "\n"


def cmd_fuse(args) -> int:
    s = _settings(args, FUSION_KEYS)
    depth = _load_depth(args.depth)
    grads = _load_gradients(args.gx, args.gy)
    result = _run_fusion(depth, grads, s, args.depth, args.gx)
    write_depth(args.output, result.d_star)
    report = _fusion_report(result)
    print(report, end="")
    if args.report:
        Path(args.report).write_text(report)
    if not result.converged:
        _notice("warning: IRLS stopped at max_outer_iters before converging")
    return EXIT_OK


def _raster_files(directory: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix.lower() in (".gfr", ".pfm")}


def _as_linear(d: DepthMap) -> DepthMap:
    return to_linear(d) if d.scale is Scale.LOG else d


def cmd_eval(args) -> int:
    gt_dir, pred_dir = Path(args.gt_dir), Path(args.pred_dir)
    for d in (gt_dir, pred_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    gts, preds = _raster_files(gt_dir), _raster_files(pred_dir)
    names = sorted(set(gts) & set(preds))
    for name in sorted(set(gts) ^ set(preds)):
        where = gt_dir if name in gts else pred_dir
        _notice(f"unpaired: {where / name}")
    if not names:
        raise UsageError("no pairs found")
    acc = MetricsAccumulator()
    rows = []
    for name in names:
        gt, pred = _as_linear(_load_depth(gts[name])), _as_linear(_load_depth(preds[name]))
        if gt.shape != pred.shape:
            raise UsageError(f"{name}: shape {pred.shape} in {pred_dir} != {gt.shape} in {gt_dir}")
        terms = pixel_terms(gt, pred)
        acc = acc.merge(terms)
        if args.per_image and terms.total:
            rows.append((name, finalize(terms)))
    report = finalize(acc)
    print(report.as_text())
    print(CSV_HEADER)
    print(report.as_csv_row())
    if args.per_image:
        print("name," + CSV_HEADER)
        for name, r in rows:
            print(f"{name},{r.as_csv_row()}")
    return EXIT_OK


def cmd_project(args) -> int:
    s = _settings(args, CAMERA_KEYS)
    depth = _load_depth(args.depth)
    if depth.scale is Scale.LOG:
        _notice(f"notice: {args.depth} is log-scale; converting to meters")
        depth = to_linear(depth)
    rgb = _load_rgb(args.rgb) if args.rgb else None
    cloud = backproject(depth, _intrinsics(s, *depth.shape), rgb)
    write_ply(args.output, cloud)
    print(f"vertices={len(cloud)}")
    return EXIT_OK


def cmd_synth(args) -> int:
    s = _settings(args, SYNTH_KEYS)
    if s["randomize"]:
        spec = random_scene(s["scene"], s["height"], s["width"], s["seed"])
    else:
        spec = SceneSpec(s["scene"], s["height"], s["width"], s["seed"], s["depth"], s["near"],
                         s["far"], s["bg_depth"], s["box_depth"], s["rect"], s["levels"])
    noise = NoiseSpec(s["depth_sigma"], s["gradient_sigma"], s["hole_fraction"], s["noise_seed"])
    gt, g = generate(spec)
    est, g_est = corrupt(gt, g, noise)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_depth(out / "gt_depth.gfr", gt)
    write_gradients(out / "gt_gx.gfr", out / "gt_gy.gfr", g)
    write_depth(out / "est_depth.gfr", est)
    write_gradients(out / "est_gx.gfr", out / "est_gy.gfr", g_est)
    write_mask(out / "est_mask.gfr", est.mask)
    print(f"wrote {spec.kind.value} scene {spec.height}x{spec.width} to {out}")
    return EXIT_OK


def parse_transforms(text: str, source: str = "<transforms>") -> list[AugTransform]:
    """One transform per line: ``identity``, ``flip`` or
    ``colour BRIGHTNESS CONTRAST GAMMA_R GAMMA_G GAMMA_B``."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        name = parts[0].lower()
        try:
            if name == "identity" and len(parts) == 1:
                out.append(AugTransform.identity())
            elif name == "flip" and len(parts) == 1:
                out.append(AugTransform.flip())
            elif name in ("colour", "color") and len(parts) == 6:
                b, c, *gamma = (float(v) for v in parts[1:])
                out.append(AugTransform.colour(b, c, gamma))
            else:
                raise ValueError(f"cannot parse {raw.strip()!r}")
        except ValueError as exc:
            raise ConfigError(f"{source}, line {lineno}: {exc}") from None
    return out


def cmd_losscheck(args) -> int:
    s = _settings(args, ("lambda",))
    lam = s["lambda"]
    batch_dir = Path(args.batch_dir)
    try:
        transforms = parse_transforms(Path(args.transforms).read_text(), args.transforms)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.transforms}") from None
    n = len(transforms)
    if n == 0:
        raise UsageError(f"{args.transforms}: no transforms listed")
    ests = [_load_depth(batch_dir / f"est_{i}.gfr") for i in range(n)]
    gts = [_load_depth(batch_dir / f"gt_{i}.gfr") for i in range(n)]
    batch = ImageSetBatch(ests, gts, transforms)
    have_grads = all((batch_dir / f"gx_{i}.gfr").is_file() for i in range(n))
    grads = None
    if have_grads:
        grads = [_load_gradients(batch_dir / f"gx_{i}.gfr", batch_dir / f"gy_{i}.gfr")
                 for i in range(n)]

    print(f"N={n}")
    print(f"L_single={loss_single(batch).value:.12g}")
    if n >= 2:
        print(f"Omega_set={set_regularizer(batch).value:.12g}")
    print(f"L_set={loss_set(batch, lam).value:.12g}")
    if grads is not None:
        print(f"L_comb={loss_combined(batch, grads, lam).value:.12g}")

    errors = check_loss_gradients(batch, grads, lam)
    ok = all(e < GRADCHECK_TOL for e in errors.values())
    for name, err in errors.items():
        print(f"gradcheck {name}: max_rel_err={err:.3e} {'PASS' if err < GRADCHECK_TOL else 'FAIL'}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_pipeline(args) -> int:
    s = _settings(args, FUSION_KEYS + FILTER_KEYS + CAMERA_KEYS + ("upsample_factor",))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    depth = _load_depth(args.depth)
    grads = _load_gradients(args.gx, args.gy)
    result = _run_fusion(depth, grads, s, args.depth, args.gx)
    fused = _as_linear(result.d_star)
    (out / "fusion_report.txt").write_text(_fusion_report(result))
    if args.dump:
        write_depth(out / "fused.gfr", fused)

    factor = s["upsample_factor"]
    h, w = fused.shape
    fill_shape = (h * factor, w * factor) if args.order == "upsample-fill" else (h, w)
    if args.rgb:
        guide = _load_rgb(args.rgb)
        if guide.shape != fill_shape:
            raise UsageError(f"{args.rgb}: guide is {guide.shape}, filling happens at {fill_shape}")
    else:
        guide = RgbImage(np.full(fill_shape + (3,), 0.5))

    params = _bilateral(s)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnfillableWarning)
        if args.order == "upsample-fill":
            up = upsample_bilinear(fused, factor)
            if args.dump:
                write_depth(out / "upsampled.gfr", up)
            final = cross_bilateral_fill(up, guide, params)
        else:
            filled = cross_bilateral_fill(fused, guide, params)
            if args.dump:
                write_depth(out / "filled.gfr", filled)
            final = upsample_bilinear(filled, factor)
    for w_ in caught:
        _notice(f"warning: {w_.message}")
    write_depth(out / "final_depth.gfr", final)

    if args.gt:
        gt = _as_linear(_load_depth(args.gt))
        if gt.shape != final.shape:
            raise UsageError(f"{args.gt}: shape {gt.shape} != pipeline output {final.shape}")
        report = evaluate(gt, final)
        text = report.as_text() + "\n" + CSV_HEADER + "\n" + report.as_csv_row() + "\n"
        (out / "metrics.txt").write_text(text)
        print(text, end="")

    color_img = guide if (args.rgb and guide.shape == final.shape) else None
    cloud = backproject(final, _intrinsics(s, *final.shape), color_img)
    write_ply(out / "cloud.ply", cloud)
    print(f"converged={'true' if result.converged else 'false'} vertices={len(cloud)}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse a depth raster with gradient rasters")
    p.add_argument("depth")
    p.add_argument("gx")
    p.add_argument("gy")
    p.add_argument("-o", "--output", required=True, help="fused depth raster")
    p.add_argument("--report", help="also write the text report here")
    _add_keys(p, FUSION_KEYS)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="pixel-pooled metrics over matching files")
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("--per-image", action="store_true", help="also print one row per image")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="backproject a depth raster to an ASCII PLY")
    p.add_argument("depth")
    p.add_argument("-o", "--output", required=True, help="PLY file")
    p.add_argument("--rgb", help="RGB raster for vertex colours")
    _add_keys(p, CAMERA_KEYS)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth", help="write a synthetic scene and a corrupted estimate")
    p.add_argument("--out-dir", required=True)
    _add_keys(p, SYNTH_KEYS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("losscheck", help="evaluate set losses and check their gradients")
    p.add_argument("batch_dir", help="directory with est_i.gfr, gt_i.gfr [, gx_i.gfr, gy_i.gfr]")
    p.add_argument("transforms", help="file with one transform per line")
    _add_keys(p, ("lambda",))
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("pipeline", help="fuse, upsample, fill, evaluate and project")
    p.add_argument("depth")
    p.add_argument("gx")
    p.add_argument("gy")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rgb", help="guide image for hole filling")
    p.add_argument("--gt", help="ground-truth depth at output resolution")
    p.add_argument("--order", choices=("upsample-fill", "fill-upsample"), default="upsample-fill",
                   help="post-processing order (default: upsample-fill)")
    p.add_argument("--dump", action="store_true", help="write intermediate rasters")
    _add_keys(p, FUSION_KEYS + FILTER_KEYS + CAMERA_KEYS + ("upsample_factor",))
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except SolverDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DepthFuseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
