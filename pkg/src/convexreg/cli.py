"""Command line interface.

Exit codes: 0 success, 2 bad flags, 3 file errors, 4 engine errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .benchmark import make_pair
from .displacement import warp
from .errors import EngineError, VolumeFormatError
from .features import FeatureProviderConfig, extract
from .formats import read_nifti, read_volume, write_json, write_nifti, write_volume
from .instance import InstanceOptConfig
from .landscape import rotation_landscape, write_landscape_csv
from .metrics import dice, mean_dice, sd_log_j
from .pyramid import PyramidConfig, effective_capture_radius, register
from .solver import DEFAULT_SCHEDULE, SolverConfig
from .volume import Volume

EXIT_FLAGS, EXIT_IO, EXIT_ENGINE = 2, 3, 4


def _is_nifti(path):
    return str(path).endswith(".nii")


def load(path, kind=None) -> Volume:
    """Read a native container, or a ``.nii`` file as ``kind`` (default scalar)."""
    if _is_nifti(path):
        return read_nifti(path, kind or "scalar-image")
    vol = read_volume(path)
    if kind == "label-map" and vol.kind != "label-map":
        vol = Volume(vol.data, vol.spacing, "label-map", vol.meta)
    return vol


def save(path, vol: Volume) -> None:
    if _is_nifti(path):
        write_nifti(path, vol)
    else:
        write_volume(path, vol)


def _on_off(s):
    if s not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return s == "on"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convexreg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="cap on worker threads (default: all available)")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    r = command("register", "register a moving image onto a fixed image")
    r.add_argument("--fixed", required=True)
    r.add_argument("--moving", required=True)
    r.add_argument("--out-field", required=True)
    r.add_argument("--out-warped")
    r.add_argument("--levels", type=int, default=3)
    r.add_argument("--radii", type=int, nargs="+", help="search radii, coarsest level first")
    r.add_argument("--provider", default="ssd-descriptor",
                   choices=["intensity", "ssd-descriptor", "embedded"])
    r.add_argument("--patch-radius", type=int, default=FeatureProviderConfig.patch_radius)
    r.add_argument("--embedding-local", nargs=2, metavar=("FIXED", "MOVING"))
    r.add_argument("--embedding-global", nargs=2, metavar=("FIXED", "MOVING"))
    r.add_argument("--instance-opt", type=_on_off, default=True, metavar="on|off")
    r.add_argument("--lr", type=float, default=InstanceOptConfig.lr)
    r.add_argument("--iters", type=int, default=InstanceOptConfig.iterations)
    r.add_argument("--lambda", dest="lam", type=float, default=InstanceOptConfig.lam)
    r.add_argument("--similarity", choices=["cosine", "dot"],
                   default=InstanceOptConfig.similarity)
    r.add_argument("--schedule", type=float, nargs="+", default=list(DEFAULT_SCHEDULE))
    r.add_argument("--kernel", type=int, default=SolverConfig.kernel)
    r.add_argument("--passes", type=int, default=SolverConfig.passes)
    r.add_argument("--cost-mode", choices=["materialized", "streaming"], default="materialized")
    r.add_argument("--report")

    w = command("warp", "apply a stored displacement field")
    w.add_argument("--in", dest="input", required=True)
    w.add_argument("--field", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--label", action="store_true", help="nearest-neighbour label warp")

    e = command("eval", "Dice and SDlogJ")
    e.add_argument("--labels-a", required=True)
    e.add_argument("--labels-b", required=True)
    e.add_argument("--field", help="warp labels-b by this field first")
    e.add_argument("--labels", type=int, nargs="+",
                   help="labels to score (default: every non-zero label present)")
    e.add_argument("--report")

    s = command("landscape", "rotation similarity landscape")
    s.add_argument("--image", required=True)
    s.add_argument("--provider", default="ssd-descriptor", choices=["intensity", "ssd-descriptor"])
    s.add_argument("--axes", type=int, nargs=2, default=[0, 1])
    s.add_argument("--range", type=float, nargs=2, default=[-60.0, 60.0])
    s.add_argument("--step", type=float, default=5.0)
    s.add_argument("--out-csv", required=True)

    y = command("synth", "write a synthetic phantom pair with its true field")
    y.add_argument("--dims", type=int, nargs=3, default=[96, 96, 96])
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--magnitude", type=float, default=8.0)
    y.add_argument("--sigma", type=float, default=8.0)
    y.add_argument("--out-prefix", required=True)

    f = command("features", "extract and store a feature volume")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--provider", default="ssd-descriptor", choices=["intensity", "ssd-descriptor"])
    f.add_argument("--patch-radius", type=int, default=FeatureProviderConfig.patch_radius)
    f.add_argument("--out", required=True)
    return ap


def _check_flags(ap, args):
    if args.threads is not None and args.threads < 1:
        ap.error("--threads must be at least 1")
    if args.command == "register":
        if args.radii is None:
            args.radii = [2, 3, 3] if args.levels == 3 else [3] * args.levels
        if len(args.radii) != args.levels:
            ap.error(f"--radii needs {args.levels} values for --levels {args.levels}")
        if args.provider == "embedded" and not args.embedding_local:
            ap.error("--provider embedded needs --embedding-local FIXED MOVING")
        if args.provider != "embedded" and (args.embedding_local or args.embedding_global):
            ap.error("--embedding-local/--embedding-global need --provider embedded")
    if args.command == "landscape":
        i, j = args.axes
        if i == j or not {i, j} <= {0, 1, 2}:
            ap.error(f"--axes needs two distinct values in 0 1 2, got {i} {j}")
        if args.step <= 0 or args.range[0] != -args.range[1]:
            ap.error("--range must be symmetric about 0 and --step positive")


def cmd_register(args):
    feats = FeatureProviderConfig(args.provider, args.patch_radius,
                                  local_paths=tuple(args.embedding_local or ()),
                                  global_paths=tuple(args.embedding_global or ()))
    cfg = PyramidConfig(
        levels=args.levels, radii=tuple(args.radii),
        solver=SolverConfig(tuple(args.schedule), args.kernel, args.passes),
        features=feats, instance_opt=args.instance_opt,
        instance=InstanceOptConfig(lr=args.lr, iterations=args.iters, lam=args.lam,
                                   similarity=args.similarity),
        cost_mode=args.cost_mode)
    fixed, moving = load(args.fixed), load(args.moving)
    res = register(fixed, moving, cfg)
    save(args.out_field, res.field)
    if args.out_warped:
        save(args.out_warped, warp(moving, res.field))
    report = res.report(cfg)
    if args.report:
        write_json(args.report, report)
    print(f"registered {args.moving} -> {args.fixed}: levels={cfg.levels} radii={list(cfg.radii)} "
          f"capture={effective_capture_radius(cfg)} max|u|={report['field']['max_abs']:.3f} "
          f"time={res.timings['total_s']:.2f}s")


def cmd_warp(args):
    kind = "label-map" if args.label else None
    vol = load(args.input, kind)
    save(args.out, warp(vol, load(args.field)))
    print(f"wrote {args.out}")


def cmd_eval(args):
    a = load(args.labels_a, "label-map")
    b = load(args.labels_b, "label-map")
    out = {}
    if args.field:
        u = load(args.field)
        b = warp(b, u)
        out["sdlogj"] = sd_log_j(u)
    else:
        out["sdlogj"] = None
    labels = args.labels
    if labels is None:
        labels = sorted(int(v) for v in np.union1d(np.unique(a.data), np.unique(b.data)) if v > 0)
    out["per_label"] = {str(l): dice(a, b, l) for l in labels}
    out["mean_dice"] = mean_dice(a, b, labels)
    text = json.dumps(out, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)


def cmd_landscape(args):
    image = load(args.image)
    angles, scores = rotation_landscape(image, FeatureProviderConfig(args.provider),
                                        tuple(args.axes), tuple(args.range), args.step)
    write_landscape_csv(args.out_csv, angles, scores)
    a, b = np.unravel_index(np.argmax(scores), scores.shape)
    print(f"{scores.size} cells; max {scores[a, b]:.6g} at ({angles[a]:g}, {angles[b]:g})")


def cmd_synth(args):
    pair = make_pair(args.seed, tuple(args.dims), args.magnitude, args.sigma)
    p = args.out_prefix
    Path(p).parent.mkdir(parents=True, exist_ok=True)
    outputs = {"moving": pair.moving, "fixed": pair.fixed, "moving_labels": pair.moving_labels,
               "fixed_labels": pair.fixed_labels, "field": pair.u_true}
    for name, vol in outputs.items():
        write_volume(f"{p}_{name}.cvr", vol)
    norm = float(np.sqrt((pair.u_true.data ** 2).sum(axis=0)).max())
    print(f"wrote {p}_{{{','.join(outputs)}}}.cvr; field max norm {norm:.6g}")


def cmd_features(args):
    f = extract(load(args.input), FeatureProviderConfig(args.provider, args.patch_radius))
    write_volume(args.out, f)
    print(f"wrote {args.out}: {f.channels} channels on {f.dims}")


COMMANDS = {"register": cmd_register, "warp": cmd_warp, "eval": cmd_eval,
            "landscape": cmd_landscape, "synth": cmd_synth, "features": cmd_features}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        _check_flags(ap, args)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_FLAGS
    if args.threads is not None:
        _kernels.set_threads(args.threads)
    try:
        COMMANDS[args.command](args)
    except VolumeFormatError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    return 0


if __name__ == "__main__":
    sys.exit(main())
