"""Command-line surface: gen-data, train, restore, eval, plot.

Exit codes: 0 on success, 1 on validation problems (bad flags, missing or
malformed files), 2 on unexpected runtime failures. Diagnostics are a
single line on stderr. VTCD_NUM_THREADS caps torch's internal parallelism.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import (
    DegeneracyError,
    DimensionError,
    FormatError,
    PlacementError,
    TrainingAborted,
    ValidationError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_size(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValidationError(f"--size expects HxWxC, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_pair(text: str, flag: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValidationError(f"{flag} expects two comma-separated values, got {text!r}")
    return float(parts[0]), float(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vtcd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a phantom dataset with a manifest")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, required=True, help="number of volume pairs")
    g.add_argument("--size", default="32x32x32", help="clean volume dims HxWxC")
    g.add_argument("--cells", type=int, default=4, help="cells per phantom")
    g.add_argument("--radius", default="4,8", help="cell radius range rmin,rmax in voxels")
    g.add_argument("--thickness", type=float, default=1.0, help="membrane thickness in voxels")
    g.add_argument("--scale", type=int, default=4, help="axial downsampling factor")
    g.add_argument("--noise", default="0.05,0.10", help="sigma0,sigma1 noise ramp")
    g.add_argument("--blur", type=float, default=1.0, help="axial blur sigma in voxels")
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="run the progressive training schedule")
    t.add_argument("--data", required=True, help="manifest JSON path")
    t.add_argument("--config", required=True, help="training config JSON path")
    t.add_argument("--out", required=True, help="checkpoint/log directory")

    r = sub.add_parser("restore", help="denoise and super-resolve a volume")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True)
    stage = r.add_mutually_exclusive_group()
    stage.add_argument("--denoise-only", action="store_true")
    stage.add_argument("--sr-only", action="store_true")
    r.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="full-reference metrics for a volume pair")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True, help="output JSON path")
    e.add_argument("--planes", default="", help="comma list from xy,xz,yz")

    p = sub.add_parser("plot", help="render per-volume metrics from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output image path (png)")
    return parser


def _cmd_gen_data(args) -> int:
    from .phantom import DegradationSpec, PhantomSpec, build_dataset

    sigma0, sigma1 = _parse_pair(args.noise, "--noise")
    rmin, rmax = _parse_pair(args.radius, "--radius")
    pspec = PhantomSpec(
        dims=_parse_size(args.size),
        num_cells=args.cells,
        radius_range=(rmin, rmax),
        membrane_thickness=args.thickness,
        seed=args.seed,
    )
    dspec = DegradationSpec(
        sigma0=sigma0,
        sigma1=sigma1,
        axial_factor=args.scale,
        axial_blur_sigma=args.blur,
        seed=args.seed,
    )
    manifest = build_dataset(args.count, pspec, dspec, args.out)
    print(f"wrote {len(manifest.entries)} pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .phantom import load_manifest
    from .trainer import TrainConfig, train

    config = TrainConfig.from_json(args.config)
    manifest = load_manifest(args.data)
    ckpt = train(config, manifest, args.out)
    print(f"finished {ckpt.phase} epoch {ckpt.epoch}; checkpoint in {args.out}")
    return 0


def _cmd_restore(args) -> int:
    from .trainer import load_checkpoint, restore_volume
    from .volume import load_volume, save_volume

    ckpt = load_checkpoint(args.ckpt)
    vol = load_volume(args.input)
    mode = "denoise" if args.denoise_only else "sr" if args.sr_only else "both"
    restored = restore_volume(ckpt, vol, mode=mode, seed=args.seed)
    save_volume(restored, args.out)
    print(f"restored {args.input} -> {args.out} ({mode})")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import MetricsReport, evaluate_volume, write_report
    from .volume import PlaneId, load_volume

    plane_names = [p for p in args.planes.split(",") if p]
    try:
        planes = tuple(PlaneId(p) for p in plane_names)
    except ValueError:
        raise ValidationError(f"--planes entries must be from xy,xz,yz, got {args.planes!r}")
    pred = load_volume(args.pred)
    gt = load_volume(args.gt)
    entry = evaluate_volume(pred, gt, planes=planes, volume_id=Path(args.pred).stem)
    report = MetricsReport(per_volume=[entry])
    write_report(report, args.report)
    print(f"psnr={entry['psnr_db']:.4f} dB ssim={entry['ssim']:.4f} -> {args.report}")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import read_report

    report = read_report(args.report)
    if not report.per_volume:
        raise ValidationError(f"report {args.report} has no per-volume entries")
    ids = [e["id"] for e in report.per_volume]
    psnrs = [e["psnr_db"] for e in report.per_volume]
    ssims = [e["ssim"] for e in report.per_volume]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6, len(ids) * 1.2), 4))
    ax1.bar(range(len(ids)), psnrs, color="#4878cf")
    ax1.set_xticks(range(len(ids)), ids, rotation=45, ha="right", fontsize=7)
    ax1.set_ylabel("PSNR (dB)")
    ax2.plot(range(len(ids)), ssims, "o-", color="#d65f5f")
    ax2.set_xticks(range(len(ids)), ids, rotation=45, ha="right", fontsize=7)
    ax2.set_ylabel("SSIM")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "restore": _cmd_restore,
    "eval": _cmd_eval,
    "plot": _cmd_plot,
}

_VALIDATION_ERRORS = (
    ValidationError,
    FormatError,
    DimensionError,
    DegeneracyError,
    FileNotFoundError,
    ValueError,
)


def main(argv=None) -> int:
    threads = os.environ.get("VTCD_NUM_THREADS")
    if threads:
        try:
            import torch

            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"vtcd: invalid VTCD_NUM_THREADS {threads!r}", file=sys.stderr)
            return 1
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"vtcd: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"vtcd: {exc}", file=sys.stderr)
        return 1
    except (OSError, PlacementError, TrainingAborted, RuntimeError) as exc:
        print(f"vtcd: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
