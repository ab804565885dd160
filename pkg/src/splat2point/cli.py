"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import loss_check, scene_io
from ._parallel import default_threads
from .augment import augment_cloud
from .boundary import extract_boundaries
from .config import load_config
from .metrics import ConfusionMatrix, load_taxonomy, summarize
from .spatial import build_index
from .synth import SceneSpec, generate_scene
from .types import ValidationError

log = logging.getLogger("splat2point")


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _manifest_path(args) -> Path:
    return Path(args.manifest) if args.manifest else Path(str(args.out) + ".manifest.json")


def cmd_augment(args) -> int:
    cfg = load_config(args.config, k=args.k, r_match=args.r_match, distance_metric=args.metric)
    t0 = time.perf_counter()
    strict = not args.lenient
    p_report, g_report = {}, {}
    cloud = scene_io.load_points(args.points, args.labels, strict=strict, report=p_report)
    gaussians = scene_io.load_splats(args.splats, strict=strict, report=g_report)
    t_load = time.perf_counter()
    index = build_index(gaussians.centroids, cfg.r_match, strict=strict)
    aug, corr = augment_cloud(cloud, gaussians, cfg, index=index, threads=args.threads)
    t_aug = time.perf_counter()
    scene_io.save_augmented(args.out, aug)
    _, degenerate = gaussians.principal_variances(cfg.eps_sigma)
    manifest = {
        "command": "augment",
        "config": cfg.to_dict(),
        "mode": "baseline-euclidean" if cfg.distance_metric == "euclidean" else "mahalanobis",
        "inputs": {"points": str(args.points), "splats": str(args.splats), "labels": args.labels},
        "output": str(args.out),
        "points": len(cloud),
        "gaussians": len(gaussians),
        "fallback_points": int((corr.fallback > 0).sum()),
        "unmatched_points": int((~aug.matched).sum()),
        "degenerate_covariances": int(degenerate.sum()),
        "dropped_points": p_report.get("dropped", []),
        "dropped_gaussians": g_report.get("dropped", []),
        "missing_normals": p_report.get("missing_normals", 0),
        "threads": args.threads,
        "timing_s": {"load": t_load - t0, "augment": t_aug - t_load, "total": time.perf_counter() - t0},
    }
    _write_json(_manifest_path(args), manifest)
    print(json.dumps({k: manifest[k] for k in ("points", "gaussians", "fallback_points", "unmatched_points", "mode")}))
    return 0


def cmd_boundary(args) -> int:
    background = None
    if args.background is not None:
        background = [int(t) for t in args.background.split(",") if t.strip()]
    cfg = load_config(args.config, eta=args.eta, r_sem=args.r_sem, background_ids=background)
    aug, _ = scene_io.load_augmented(args.augmented)
    labels = scene_io.load_labels(args.labels, len(aug)) if args.labels else None
    t0 = time.perf_counter()
    bl = extract_boundaries(aug, cfg.eta, cfg.r_sem, cfg.background_ids, labels=labels, threads=args.threads)
    elapsed = time.perf_counter() - t0
    scene_io.save_boundary_flags(args.out, bl, aug.matched)
    if args.augmented_out:
        if labels is not None:
            aug.cloud.labels = labels
        scene_io.save_augmented(args.augmented_out, aug, bl)
    counts = bl.counts()
    result = {
        "mode": bl.mode,
        "tau": None if np.isnan(bl.tau) else bl.tau,
        "eta": cfg.eta,
        "r_sem": cfg.r_sem,
        "background_ids": sorted(cfg.background_ids),
        "counts": counts,
    }
    manifest = dict(result, command="boundary", input=str(args.augmented), output=str(args.out),
                    threads=args.threads, timing_s=elapsed)
    _write_json(_manifest_path(args), manifest)
    print(json.dumps(result))
    return 0


def _load_ids(path) -> np.ndarray:
    if str(path).endswith(".txt"):
        return np.loadtxt(path, dtype=np.int64, ndmin=1)
    return scene_io.load_labels(path)


def cmd_eval(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    pred, truth = _load_ids(args.pred), _load_ids(args.truth)
    cm = ConfusionMatrix(taxonomy.num_classes).update(pred, truth, args.ignore_id)
    report = summarize(cm, taxonomy)
    if args.out:
        _write_json(args.out, report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_losses_check(args) -> int:
    report = loss_check.run(args.seed, args.trials)
    if args.out:
        _write_json(args.out, report)
    print(json.dumps(report, sort_keys=True))
    return 0 if report["passed"] else 1


def cmd_synth(args) -> int:
    spec = SceneSpec(preset=args.preset, seed=args.seed)
    if args.point_density is not None:
        spec.point_density = args.point_density
    if args.gaussian_density is not None:
        spec.gaussian_density = args.gaussian_density
    scene = generate_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_io.write_points(out / "points.ply", scene.cloud)
    scene_io.save_labels(out / "labels.u16", scene.cloud.labels)
    scene_io.write_splats(out / "splats.ply", scene.gaussians)
    (out / "boundary_gt.u8").write_bytes(scene.boundary.astype(np.uint8).tobytes())
    meta = {
        "preset": spec.preset, "seed": spec.seed, "points": len(scene.cloud), "gaussians": len(scene.gaussians),
        "d_edge": spec.d_edge, "shrink": spec.shrink, "edge_boost": spec.edge_boost,
        "point_density": spec.point_density, "gaussian_density": spec.gaussian_density,
        "background_ids": sorted(scene.background_ids),
    }
    _write_json(out / "scene.json", meta)
    print(json.dumps(meta, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splat2point", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="transfer Gaussian scale/opacity onto a point cloud")
    p.add_argument("--points", required=True)
    p.add_argument("--splats", required=True)
    p.add_argument("--labels", help="sidecar u16 label file")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--k", type=int)
    p.add_argument("--r-match", type=float)
    p.add_argument("--metric", choices=("mahalanobis", "euclidean"))
    p.add_argument("--lenient", action="store_true", help="drop non-finite records instead of failing")
    p.add_argument("--threads", type=int, default=default_threads())
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("boundary", help="extract boundary pseudo-labels from an augmented cloud")
    p.add_argument("--augmented", required=True)
    p.add_argument("--labels", help="sidecar u16 label file (overrides embedded labels)")
    p.add_argument("--config")
    p.add_argument("--eta", type=float)
    p.add_argument("--r-sem", type=float)
    p.add_argument("--background", help="comma-separated background class ids")
    p.add_argument("--out", required=True, help="boundary flag file, one byte per point")
    p.add_argument("--augmented-out", help="also write the augmented cloud with boundary bits set")
    p.add_argument("--manifest")
    p.add_argument("--threads", type=int, default=default_threads())
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("eval", help="segmentation metrics from prediction/truth label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--taxonomy", default="scannet20")
    p.add_argument("--ignore-id", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("losses-check", help="finite-difference and reference checks of the loss kernels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_losses_check)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene")
    p.add_argument("--preset", default="door-on-wall")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--point-density", type=float)
    p.add_argument("--gaussian-density", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
