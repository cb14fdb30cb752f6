"""Command-line entry point: ``mmreg register | evaluate | phantom | config``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RegistrationConfig, dumps_config, load_config
from .errors import DegenerateWeightsError, FormatError, InvalidArgumentError, NumericalError
from .io import read_field, read_volume, write_field, write_json, write_volume
from .metrics import as_mask, dice, jacobian_stats, warp_mask
from .optim import coarse_register, deformable_register
from .phantom import BumpSpec, PhantomSpec, generate_pair
from .transform import AffineParams, affine_matrix, compose_multires, volume_center, warp_affine, warp_composed
from .volume import Volume, crop_or_pad, normalize_intensity, resample

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mmreg")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for bad data here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _triple(kind):
    def parse(text: str):
        parts = text.replace(",", " ").split()
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected 3 values, got {text!r}")
        return tuple(kind(p) for p in parts)
    return parse


# -- register ---------------------------------------------------------------


def _prepare_image(vol: Volume, cfg: RegistrationConfig) -> Volume:
    if cfg.preprocess:
        vol = crop_or_pad(resample(vol, cfg.target_spacing), cfg.target_dims)
    return normalize_intensity(vol)


def _prepare_mask(vol: Volume, cfg: RegistrationConfig) -> Volume:
    if cfg.preprocess:
        vol = crop_or_pad(resample(vol, cfg.target_spacing), cfg.target_dims)
    return as_mask(vol)


def affine_to_json(p: AffineParams, dims, spacing) -> dict:
    center = volume_center(dims, spacing)
    return {
        "rotation_rad": list(p.rot),
        "translation_mm": list(p.trans),
        "scale": list(p.scale),
        "center_mm": [float(c) for c in center],
        "matrix": affine_matrix(p, center).tolist(),
    }


def affine_from_json(d: dict) -> AffineParams:
    try:
        return AffineParams(tuple(d["rotation_rad"]), tuple(d["translation_mm"]), tuple(d["scale"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"affine JSON lacks rotation_rad/translation_mm/scale: {exc}") from None


def write_trace(trace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "iter", "loss"])
        for stage, it, loss in trace:
            w.writerow([stage, it, repr(float(loss))])


def cmd_register(args) -> int:
    cfg = load_config(args.config) if args.config else RegistrationConfig()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    fixed = _prepare_image(read_volume(args.fixed), cfg)
    moving = _prepare_image(read_volume(args.moving), cfg)
    if fixed.dims != moving.dims:
        raise FormatError(f"fixed dims {fixed.dims} and moving dims {moving.dims} differ; enable preprocess or resample first")
    masks = None
    if args.fixed_mask or args.moving_mask:
        if not (args.fixed_mask and args.moving_mask):
            raise InvalidArgumentError("--fixed-mask and --moving-mask must be given together")
        masks = (_prepare_mask(read_volume(args.fixed_mask), cfg), _prepare_mask(read_volume(args.moving_mask), cfg))
        if masks[0].dims != fixed.dims or masks[1].dims != fixed.dims:
            raise FormatError(f"mask dims {masks[0].dims}/{masks[1].dims} do not match image dims {fixed.dims}")

    trace: list = []
    started = time.perf_counter()
    log.info("coarse stage on %s grid", fixed.dims)
    p = coarse_register(fixed, moving, cfg, trace)
    write_json(affine_to_json(p, fixed.dims, fixed.spacing), out / "affine.json")
    warped = warp_affine(moving, p)

    field = None
    if not args.skip_deformable:
        log.info("deformable stage, %d levels", cfg.levels)
        field = compose_multires(deformable_register(fixed, moving, cfg, trace, affine=p))
        warped = warp_composed(moving, p, field)
        write_field(field, out / "field")
    write_volume(warped, out / "warped")
    elapsed = time.perf_counter() - started

    if masks is not None:
        chain = [p] if field is None else [p, field]
        metrics = {
            "dsc_initial": dice(masks[0], masks[1]),
            "dsc_coarse": dice(masks[0], warp_mask(masks[1], p)),
            "dsc": dice(masks[0], warp_mask(masks[1], chain)),
        }
        if field is not None:
            folding, sigma = jacobian_stats(field)
            metrics.update(folding_percent=folding, sigma_log_j=sigma)
        # wall time breaks bit-for-bit reproducibility, so it is opt-in
        metrics["runtime_seconds"] = elapsed if args.timing else None
        write_json(metrics, out / "metrics.json")
        log.info("dsc %.4f -> %.4f", metrics["dsc_initial"], metrics["dsc"])
    if args.trace:
        write_trace(trace, out / "trace.csv")
    if args.figures:
        from .report import render_figures

        render_figures(out, trace, fixed, warped)
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------


def cmd_evaluate(args) -> int:
    result = {}
    field = read_field(args.field) if args.field else None
    if args.fixed_mask or args.moving_mask:
        if not (args.fixed_mask and args.moving_mask):
            raise InvalidArgumentError("--fixed-mask and --moving-mask must be given together")
        a, b = as_mask(read_volume(args.fixed_mask)), as_mask(read_volume(args.moving_mask))
        if a.dims != b.dims:
            raise FormatError(f"mask dims differ: {a.dims} vs {b.dims}")
        chain = []
        if args.affine:
            chain.append(affine_from_json(json.loads(Path(args.affine).read_text())))
        if field is not None:
            if field.dims != a.dims:
                raise FormatError(f"field dims {field.dims} do not match mask dims {a.dims}")
            chain.append(field)
        result["dsc"] = dice(a, warp_mask(b, chain) if chain else b)
    if field is not None:
        folding, sigma = jacobian_stats(field)
        result.update(folding_percent=folding, sigma_log_j=sigma)
    if not result:
        raise InvalidArgumentError("nothing to evaluate: supply masks and/or --field")
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        write_json(result, args.out)
    return EXIT_OK


# -- phantom ----------------------------------------------------------------


def spec_from_args(args) -> PhantomSpec:
    bump = None
    if args.bump_peak is not None:
        center = args.bump_center or tuple((n - 1) / 2 for n in args.dims)
        bump = BumpSpec(center, args.bump_radius, args.bump_peak)
    transform = AffineParams(tuple(np.deg2rad(args.rot_deg)), args.trans, args.scale)
    return PhantomSpec(
        dims=args.dims, spacing=args.spacing, seed=args.seed, n_blobs=args.n_blobs,
        modality_remap=args.remap, gamma=args.gamma, transform=transform, bump=bump,
        noise=args.noise, noise_smoothing=args.noise_smoothing,
    )


def cmd_phantom(args) -> int:
    spec = spec_from_args(args)
    pair = generate_pair(spec)
    out = Path(args.out_dir)
    write_volume(pair.fixed, out / "fixed")
    write_volume(pair.moving, out / "moving")
    write_volume(pair.fixed_mask, out / "fixed_mask")
    write_volume(pair.moving_mask, out / "moving_mask")
    if pair.bump_field is not None:
        write_field(pair.bump_field, out / "bump_field")
    write_json({"spec": spec.to_dict()}, out / "ground_truth.json")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(dumps_config(RegistrationConfig()))
    return EXIT_OK


# -- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmreg", description="Two-stage multi-modal 3-D registration.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    reg = sub.add_parser("register", help="coarse affine + deformable registration")
    reg.add_argument("--fixed", required=True)
    reg.add_argument("--moving", required=True)
    reg.add_argument("--fixed-mask")
    reg.add_argument("--moving-mask")
    reg.add_argument("--config", help="key = value file; see `mmreg config`")
    reg.add_argument("--out-dir", required=True)
    reg.add_argument("--skip-deformable", action="store_true")
    reg.add_argument("--trace", action="store_true", help="write trace.csv (stage,iter,loss)")
    reg.add_argument("--figures", action="store_true", help="render trace.png and overlay.png")
    reg.add_argument("--timing", action="store_true", help="record wall time in metrics.json")
    reg.set_defaults(func=cmd_register)

    ev = sub.add_parser("evaluate", help="Dice and Jacobian statistics")
    ev.add_argument("--fixed-mask")
    ev.add_argument("--moving-mask")
    ev.add_argument("--affine", help="affine.json applied to the moving mask")
    ev.add_argument("--field", help="displacement field applied after the affine")
    ev.add_argument("--out", help="also write the metrics JSON here")
    ev.set_defaults(func=cmd_evaluate)

    ph = sub.add_parser("phantom", help="write a synthetic pair with known ground truth")
    ph.add_argument("--out-dir", required=True)
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--dims", type=_triple(int), default=(64, 64, 32))
    ph.add_argument("--spacing", type=_triple(float), default=(1.0, 1.0, 1.0))
    ph.add_argument("--n-blobs", type=int, default=4)
    ph.add_argument("--remap", default="identity", choices=["identity", "inverse", "gamma", "sigmoid-bands"])
    ph.add_argument("--gamma", type=float, default=2.0)
    ph.add_argument("--rot-deg", type=_triple(float), default=(0.0, 0.0, 0.0))
    ph.add_argument("--trans", type=_triple(float), default=(0.0, 0.0, 0.0), help="mm")
    ph.add_argument("--scale", type=_triple(float), default=(1.0, 1.0, 1.0))
    ph.add_argument("--bump-center", type=_triple(float), help="voxels; defaults to the grid center")
    ph.add_argument("--bump-radius", type=float, default=6.0)
    ph.add_argument("--bump-peak", type=_triple(float), help="peak displacement in voxels; enables the bump")
    ph.add_argument("--noise", type=float, default=0.02)
    ph.add_argument("--noise-smoothing", type=float, default=1.0)
    ph.set_defaults(func=cmd_phantom)

    cf = sub.add_parser("config", help="print the default configuration")
    cf.set_defaults(func=cmd_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"mmreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DegenerateWeightsError, OSError) as exc:
        print(f"mmreg: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgumentError as exc:
        print(f"mmreg: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
