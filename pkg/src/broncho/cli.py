"""``broncho`` command-line entry point.

Every subcommand writes its machine-readable result to stdout and
diagnostics to stderr. Exit codes: 0 ok, 2 bad input, 3 shape/format,
4 domain (e.g. empty ground truth), 5 failed internal check.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import diffcore, gradsuite, jcam, metrics, sampling, synth
from .errors import BronchoError, CheckFailure, DomainError, InputError, ShapeMismatchError
from .skeleton import SIZE_BOUNDS, analyze, skeletonize
from .volcore import BinaryMask, Volume3D, largest_component, load, load_mask, save, threshold

log = logging.getLogger("broncho")

DEFAULT_THRESHOLD = 0.5
MASK_SUFFIXES = (".nii", ".raw")


def defaults_snapshot() -> dict:
    """Hyper-parameter defaults as the CLI resolves them."""
    w = jcam.JcamWeights()
    return {
        "omega": metrics.DEFAULT_OMEGA,
        "detection_threshold": metrics.DEFAULT_DETECTION_THRESHOLD,
        "weights": [w.alpha, w.beta, w.phi, w.gamma, w.delta],
        "epsilon": w.epsilon,
        "size_bounds_mm": [SIZE_BOUNDS["TB"], SIZE_BOUNDS["SB"], SIZE_BOUNDS["MB"]],
        "threshold": DEFAULT_THRESHOLD,
        "sps_thresholds": [0.15, 0.10],
        "patch_cap": sampling.DEFAULT_CAP,
        "postprocess": True,
        "prune_below_mm": 0.0,
    }


# ------------------------------------------------------------------ helpers


def _emit(payload, fmt: str = "json") -> None:
    if fmt == "csv" and isinstance(payload, str):
        sys.stdout.write(payload)
    else:
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    sys.stdout.flush()


def _cases(path: Path) -> List[Path]:
    """A single image file, or every image file directly inside a directory (sorted)."""
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in MASK_SUFFIXES)
        if not files:
            raise InputError(f"{path}: no .nii or .raw files found")
        return files
    if not path.exists():
        raise InputError(f"no such file: {path}")
    return [path]


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _prepare_pred(path, t: float, postprocess: bool) -> BinaryMask:
    pred = load_mask(path, t)
    return largest_component(pred) if postprocess else pred


# ------------------------------------------------------------------ evaluate


def _evaluate_one(job) -> Tuple[str, dict]:
    case_id, pred_path, gt_path, t, post, omega, det = job
    pred = _prepare_pred(pred_path, t, post)
    gt = load_mask(gt_path, t)
    report = metrics.evaluate(pred, gt, metrics.CcfConfig(omega, det))
    return case_id, report.csv_row(case_id), report.to_dict()


def cmd_evaluate(args) -> int:
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    if pred_root.is_dir() != gt_root.is_dir():
        raise InputError("pred and gt must both be files or both be directories")
    if gt_root.is_dir():
        gts = _cases(gt_root)
        jobs = []
        for g in gts:
            p = pred_root / g.name
            if not p.exists():
                raise InputError(f"no prediction for case {g.stem}: {p}")
            jobs.append((g.stem, p, g))
    else:
        for p in (pred_root, gt_root):
            if not p.exists():
                raise InputError(f"no such file: {p}")
        jobs = [(args.case_id or gt_root.stem, pred_root, gt_root)]
    jobs = [j + (args.threshold, not args.no_postprocess, args.omega, args.detection_threshold)
            for j in jobs]
    results = _map(_evaluate_one, jobs, args.workers)
    if args.format == "csv":
        _emit(metrics.csv_text([row for _, row, _ in results]), "csv")
    elif len(results) == 1 and not gt_root.is_dir():
        _emit(results[0][2])
    else:
        _emit([{"case_id": cid, **doc} for cid, _, doc in results])
    return 0


# ------------------------------------------------------------------ skeleton


def cmd_skeletonize(args) -> int:
    mask = load_mask(args.mask, args.threshold)
    if not mask.data.any():
        log.warning("%s: empty mask, skeleton is empty", args.mask)
    skel = skeletonize(mask)
    save(skel, args.output)
    _emit({"input": str(args.mask), "output": str(args.output), "voxels": skel.count})
    return 0


def cmd_graph(args) -> int:
    mask = load_mask(args.mask, args.threshold)
    if not mask.data.any():
        log.warning("%s: empty mask, graph is empty", args.mask)
        doc = {"dims": list(mask.dims), "spacing": list(mask.spacing), "nodes": [], "branches": []}
    else:
        _, graph, _ = analyze(mask, prune_below_mm=args.prune_below)
        doc = graph.to_json()
    if args.output:
        Path(args.output).write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    return 0


# ------------------------------------------------------------------ sampling


def _sample_one(job):
    case_id, mask_path, volume_path, plan, t, out_dir = job
    mask = load_mask(mask_path, t)
    specs = sampling.extract(None, mask, plan, case_id)
    if out_dir is not None:
        if volume_path is None:
            raise InputError(f"no image volume for case {case_id}; pass --volumes")
        volume = load(volume_path)
        if isinstance(volume, BinaryMask):
            volume = volume.as_volume()
        sampling.materialize(specs, volume, mask, out_dir)
    return case_id, specs


def _find_volume(root: Optional[Path], stem: str) -> Optional[Path]:
    if root is None:
        return None
    if root.is_file():
        return root
    for suffix in MASK_SUFFIXES:
        p = root / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def cmd_sample(args) -> int:
    mask_paths = [p for m in args.masks for p in _cases(Path(m))]
    stems = [p.stem for p in mask_paths]
    if len(set(stems)) != len(stems):
        raise InputError("case ids (file stems) must be unique")
    if args.patch_dims:
        dims = tuple(args.patch_dims)
    else:
        masks = [load_mask(p, args.threshold) for p in mask_paths]
        dims = sampling.derive_patch_dims(masks, args.patch_rule, args.cap)
    stride = None
    if args.stride:
        stride = tuple(args.stride) * 3 if len(args.stride) == 1 else tuple(args.stride)
        if len(stride) != 3:
            raise InputError("--stride takes one or three integers")
    plan = sampling.SamplingPlan(dims, args.mode, stride, args.centerline_ratio, args.volume_ratio)
    vol_root = Path(args.volumes) if args.volumes else None
    jobs = [(p.stem, p, _find_volume(vol_root, p.stem), plan, args.threshold, args.out_dir)
            for p in mask_paths]
    cases = _map(_sample_one, jobs, args.workers)
    text = sampling.manifest_text(plan, cases)
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------ loss / gradcheck


def cmd_loss(args) -> int:
    pred = load(args.pred)
    X = pred.data.astype(np.float64)
    if X.min() < 0 or X.max() > 1:
        raise DomainError("prediction values must lie in [0, 1]")
    gt = load_mask(args.gt, args.threshold)
    if gt.dims != pred.dims:
        raise ShapeMismatchError(f"prediction {pred.dims} and ground truth {gt.dims} differ in shape")
    cl = load_mask(args.centerline, args.threshold) if args.centerline else skeletonize(gt)
    weights = jcam.JcamWeights(args.alpha, args.beta, args.phi, args.gamma, args.delta, args.epsilon)
    _emit(jcam.jcam_loss(X, gt, cl, weights).to_dict())
    return 0


def cmd_gradcheck(args) -> int:
    def run():
        return gradsuite.run_suite(args.module, args.seed, args.instances)

    if args.inject_fault:
        if args.inject_fault not in diffcore.PRIMITIVES:
            raise InputError(f"unknown primitive {args.inject_fault!r}")
        with diffcore.inject_fault(args.inject_fault):
            results = run()
    else:
        results = run()
    table = gradsuite.summarize(results)
    if args.format == "csv":
        lines = ["check,instances,max_rel_error,passed"]
        lines += [f"{k},{v['instances']},{v['max_rel_error']!r},{v['passed']}" for k, v in table.items()]
        _emit("\n".join(lines) + "\n", "csv")
    else:
        _emit({"tolerance": gradsuite.TOLERANCE, "seed": args.seed, "checks": table})
    failed = [k for k, v in table.items() if not v["passed"]]
    if failed:
        raise CheckFailure(f"gradient check failed for: {', '.join(failed)}")
    return 0


# ------------------------------------------------------------------ synth / convert


def cmd_synth(args) -> int:
    params = synth.TreeParams(
        depth=args.depth,
        children=args.children,
        length_range=(args.length_min, args.length_max),
        root_radius=args.root_radius,
        radius_decay=args.decay,
        angle_range=(args.angle_min, args.angle_max),
        dims=tuple(args.dims),
        spacing=tuple(args.spacing),
        seed=args.seed,
    )
    tree = synth.generate(params)
    out = Path(args.output)
    if out.suffix not in (".nii", ".raw"):
        raise InputError(f"{out}: output must end in .nii or .raw")
    out.parent.mkdir(parents=True, exist_ok=True)
    save(tree.mask, out)
    truth = Path(args.truth) if args.truth else out.with_name(out.stem + "_truth.json")
    truth.write_text(json.dumps(tree.to_json(), indent=2) + "\n")
    _emit({"mask": str(out), "truth": str(truth), "branches": tree.branch_count,
           "voxels": tree.mask.count})
    return 0


def cmd_convert(args) -> int:
    obj = load(args.input)
    if args.mask and isinstance(obj, Volume3D):
        obj = threshold(obj, args.threshold)
    save(obj, args.output)
    _emit({"input": str(args.input), "output": str(args.output), "dims": list(obj.dims)})
    return 0


# ------------------------------------------------------------------ parser


def _unit(name):
    def parse(text):
        v = float(text)
        if not 0.0 <= v <= 1.0:
            raise argparse.ArgumentTypeError(f"{name} must lie in [0, 1]")
        return v
    return parse


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    w = jcam.JcamWeights()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=_positive_int, default=1,
                        help="parallel worker processes (across cases only)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                        help="foreground is value > threshold for non-mask inputs")

    parser = argparse.ArgumentParser(prog="broncho", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="segmentation metrics for pred vs gt")
    p.add_argument("pred", help="prediction file, or directory of predictions")
    p.add_argument("gt", help="ground-truth file, or directory with same file names")
    p.add_argument("--omega", type=_unit("omega"), default=metrics.DEFAULT_OMEGA)
    p.add_argument("--detection-threshold", type=float, default=metrics.DEFAULT_DETECTION_THRESHOLD)
    p.add_argument("--no-postprocess", action="store_true",
                   help="skip largest-connected-component filtering of the prediction")
    p.add_argument("--case-id")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("skeletonize", parents=[common], help="write the curve skeleton of a mask")
    p.add_argument("mask")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_skeletonize)

    p = sub.add_parser("graph", parents=[common], help="centreline graph JSON of a mask")
    p.add_argument("mask")
    p.add_argument("-o", "--output")
    p.add_argument("--prune-below", type=float, default=0.0, metavar="MM",
                   help="drop terminal spurs shorter than MM (default: off)")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("sample", parents=[common], help="patch manifest for one or more cases")
    p.add_argument("masks", nargs="+", help="mask files or directories")
    p.add_argument("--volumes", help="image file or directory (needed with --out-dir)")
    p.add_argument("--mode", choices=sampling.MODES, default="smart")
    p.add_argument("--patch-rule", choices=sampling.PATCH_RULES, default="mean")
    p.add_argument("--patch-dims", type=_positive_int, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--cap", type=_positive_int, default=sampling.DEFAULT_CAP)
    p.add_argument("--stride", type=_positive_int, nargs="+")
    p.add_argument("--centerline-ratio", type=float, default=0.15)
    p.add_argument("--volume-ratio", type=float, default=0.10)
    p.add_argument("-o", "--output", help="also write the manifest here")
    p.add_argument("--out-dir", help="write kept patches as raw+sidecar triples")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("loss", parents=[common], help="composite loss breakdown")
    p.add_argument("pred", help="soft prediction with values in [0, 1]")
    p.add_argument("gt")
    p.add_argument("--centerline", help="centreline mask (default: skeleton of gt)")
    p.add_argument("--alpha", type=float, default=w.alpha)
    p.add_argument("--beta", type=float, default=w.beta)
    p.add_argument("--phi", type=float, default=w.phi)
    p.add_argument("--gamma", type=float, default=w.gamma)
    p.add_argument("--delta", type=float, default=w.delta)
    p.add_argument("--epsilon", type=float, default=w.epsilon)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--module", choices=gradsuite.MODULES, default="all")
    p.add_argument("--instances", type=_positive_int, default=20)
    p.add_argument("--inject-fault", metavar="PRIMITIVE",
                   help="flip one primitive's gradient sign (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    d = synth.TreeParams()
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic tree")
    p.add_argument("-o", "--output", required=True, help="mask path (.nii or .raw)")
    p.add_argument("--truth", help="ground-truth JSON path (default: <stem>_truth.json)")
    p.add_argument("--depth", type=_positive_int, default=d.depth)
    p.add_argument("--children", type=_positive_int, default=d.children)
    p.add_argument("--length-min", type=float, default=d.length_range[0])
    p.add_argument("--length-max", type=float, default=d.length_range[1])
    p.add_argument("--root-radius", type=float, default=d.root_radius)
    p.add_argument("--decay", type=float, default=d.radius_decay)
    p.add_argument("--angle-min", type=float, default=d.angle_range[0])
    p.add_argument("--angle-max", type=float, default=d.angle_range[1])
    p.add_argument("--dims", type=_positive_int, nargs=3, default=list(d.dims))
    p.add_argument("--spacing", type=float, nargs=3, default=list(d.spacing))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", parents=[common], help="convert between .nii and .raw+.json")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mask", action="store_true", help="threshold a scalar volume into a mask")
    p.set_defaults(func=cmd_convert)
    return parser


def _configure_logging():
    level = os.environ.get("BRONCHO_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="broncho: %(levelname)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BronchoError as exc:
        print(f"broncho: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"broncho: error: {exc}", file=sys.stderr)
        return InputError.exit_code
    except OSError as exc:
        print(f"broncho: error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
