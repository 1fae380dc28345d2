"""Command-line entry point: every pipeline mechanism as a subcommand.

Exit codes: 0 success, 2 invalid input, 3 numerical degeneracy, 4 I/O or
file-format failure.  `--seed`, `--threads` and `--quiet` are accepted by
every subcommand; FGS_THREADS is the thread-count fallback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .densify import DensifyConfig, base_init, densify_layer
from .errors import (FormatError, InvalidInputError, NumericalDegeneracyError)
from .io import (depth_preview, load_bank, load_points, load_rig, load_scene,
                 load_tensors, load_voxel_grid, save_bank, save_depth_plane,
                 save_plane, save_rig, save_scene, save_voxel_grid)
from .losses import LossComponents, feat_loss, l1_depth, silog, total_loss
from .pipeline import PipelineConfig, bench, run_pipeline
from .raster import render
from .sampling import DecodeHeads, refine_scene
from .synth import SynthSpec, gen_scene, room_spec
from .voxel import (DEFAULT_CUTOFF, GridSpec, TAU_OCC, eval_map, eval_miou,
                    retrieval_scores, voxelize)


def _emit(args, payload: dict) -> None:
    if not args.quiet:
        json.dump(payload, sys.stdout, indent=2, default=_default)
        sys.stdout.write("\n")


def _default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON-serializable: {type(x)}")


def _outdir(path) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FGS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise InvalidInputError(f"bad FGS_THREADS value {env!r}") from e
    return 1


def _load_spec(args) -> SynthSpec:
    spec = SynthSpec.load(args.spec) if args.spec else room_spec(args.seed or 0)
    if args.seed is not None:
        spec.seed = args.seed
    return spec


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = _load_spec(args)
    if args.depth_noise is not None:
        spec.depth_noise = args.depth_noise
    if args.pose_noise is not None:
        spec.pose_noise = args.pose_noise
    result = gen_scene(spec)
    os.makedirs(args.out, exist_ok=True)
    save_scene(os.path.join(args.out, "scene.fgs"), result.scene)
    save_rig(os.path.join(args.out, "rig.json"), result.views)
    save_voxel_grid(os.path.join(args.out, "gt.voxg"), result.gt_grid)
    save_bank(os.path.join(args.out, "bank.json"), result.bank)
    spec.save(os.path.join(args.out, "spec.json"))
    _emit(args, {"out": args.out, "gaussians": len(result.scene),
                 "views": len(result.views),
                 "occupied_voxels": int(result.gt_grid.occupied.sum()),
                 "classes": spec.class_names})
    return 0


def _densify_config(args, views, **over) -> DensifyConfig:
    fdim = 16
    for v in views:
        if v.ref_feature is not None:
            fdim = v.ref_feature.shape[2]
            break
    kw = dict(gamma=args.gamma, select_mode=args.select_mode, feature_dim=fdim)
    kw.update(over)
    return DensifyConfig(**kw)


def cmd_init(args) -> int:
    views = load_rig(args.rig)
    cfg = _densify_config(args, views, base_count=args.count)
    scene = base_init(views, cfg)
    _outdir(args.out)
    save_scene(args.out, scene)
    _emit(args, {"out": args.out, "count": len(scene)})
    return 0


def cmd_densify(args) -> int:
    views = load_rig(args.rig)
    scene = load_scene(args.scene)
    layer = scene.layer_count
    cfg = _densify_config(args, views,
                          layer_budgets=tuple([args.budget] * layer))
    grown, report = densify_layer(scene, views, cfg, layer, with_report=True)
    _outdir(args.out)
    save_scene(args.out, grown)
    _emit(args, {
        "out": args.out, "layer": layer,
        "selected_pixels_per_view": report.selected_per_view,
        "added_count": report.added,
        "residual_before": report.residual_before,
        "residual_after": report.residual_after,
    })
    return 0


def cmd_refine(args) -> int:
    views = load_rig(args.rig)
    scene = load_scene(args.scene)
    heads = None
    if args.heads:
        heads = DecodeHeads.from_tensors(load_tensors(args.heads))
    refined = refine_scene(scene, views, heads=heads, which=args.which,
                           occlusion_margin=args.occlusion_margin)
    _outdir(args.out)
    save_scene(args.out, refined)
    _emit(args, {"out": args.out, "count": len(refined), "which": args.which,
                 "heads": bool(heads)})
    return 0


def cmd_render(args) -> int:
    views = load_rig(args.rig)
    if not 0 <= args.view < len(views):
        raise InvalidInputError(f"view index {args.view} out of range "
                                f"(rig has {len(views)} views)")
    scene = load_scene(args.scene)
    out = render(scene, views[args.view], threads=_threads(args))
    payload = {"view": args.view, "valid_pixels": int(out.valid.sum())}
    if args.out_depth:
        _outdir(args.out_depth)
        save_depth_plane(args.out_depth, out.depth, out.valid)
        payload["depth"] = args.out_depth
    if args.out_feature:
        _outdir(args.out_feature)
        save_plane(args.out_feature, out.feature)
        payload["feature"] = args.out_feature
    if args.preview:
        _outdir(args.preview)
        depth_preview(args.preview, out.depth, out.valid)
        payload["preview"] = args.preview
    _emit(args, payload)
    return 0


def _parse_triple(text, name, cast=float):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise InvalidInputError(f"{name} wants three comma-separated values")
    return tuple(cast(p) for p in parts)


def cmd_voxelize(args) -> int:
    scene = load_scene(args.scene)
    bank = load_bank(args.bank)
    grid = GridSpec(np.array(_parse_triple(args.origin, "--origin")),
                    _parse_triple(args.dims, "--dims", int), args.voxel_size)
    cutoff = None if args.no_cutoff else args.cutoff
    pred = voxelize(scene, bank, grid, tau_occ=args.tau, cutoff=cutoff,
                    reduce=args.reduce)
    _outdir(args.out)
    save_voxel_grid(args.out, pred)
    _emit(args, {"out": args.out, "occupied": int(pred.occupied.sum()),
                 "dims": list(pred.dims)})
    return 0


def cmd_retrieve(args) -> int:
    scene = load_scene(args.scene)
    bank = load_bank(args.bank)
    points = load_points(args.points)
    cutoff = None if args.no_cutoff else args.cutoff
    scores, p_occ = retrieval_scores(scene, bank, points, cutoff=cutoff)
    names = [e.class_name for e in bank.entries]
    best = np.argmax(scores, axis=0)
    payload = {
        "points": points.shape[0],
        "classes": names,
        "best_class": [names[i] for i in best],
        "scores": {n: scores[c].tolist() for c, n in enumerate(names)},
        "occupancy": p_occ.tolist(),
    }
    if args.out:
        _outdir(args.out)
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        _emit(args, {"out": args.out, "points": points.shape[0]})
    else:
        _emit(args, payload)
    return 0


def cmd_loss(args) -> int:
    views = load_rig(args.rig)
    scene = load_scene(args.scene)
    threads = _threads(args)
    l1s, logs, coss, mses = [], [], [], []
    for v in views:
        if v.ref_depth is None:
            continue
        out = render(scene, v, threads=threads)
        ok = out.valid & (np.asarray(v.ref_valid, dtype=bool)
                          if v.ref_valid is not None
                          else np.isfinite(v.ref_depth))
        if not np.any(ok):
            continue
        l1s.append(l1_depth(v.ref_depth, out.depth, ok))
        logs.append(silog(v.ref_depth, out.depth, ok))
        if v.ref_feature is not None:
            c, m = feat_loss(v.ref_feature, out.feature, ok)
            coss.append(c)
            mses.append(m)
    if not l1s:
        raise InvalidInputError("no view overlaps the rendered scene")
    parts = LossComponents(
        l1=float(np.mean(l1s)), silog=float(np.mean(logs)), temporal=0.0,
        cos=float(np.mean(coss)) if coss else 0.0,
        mse=float(np.mean(mses)) if mses else 0.0)
    total, breakdown = total_loss(parts)
    breakdown["views_used"] = len(l1s)
    breakdown["temporal_available"] = False
    _emit(args, breakdown)
    return 0


def cmd_eval_miou(args) -> int:
    pred = load_voxel_grid(args.pred)
    gt = load_voxel_grid(args.gt)
    result = eval_miou(pred, gt)
    _emit(args, {"miou": result.miou,
                 "per_class": {str(c): v for c, v in result.per_class.items()},
                 "evaluated_classes": result.evaluated_classes})
    return 0


def _visible_mask(points, views) -> np.ndarray:
    from .core import Z_NEAR
    vis = np.zeros(points.shape[0], dtype=bool)
    for v in views:
        pc = v.ego_to_cam(points)
        z = pc[:, 2]
        front = z > Z_NEAR
        with np.errstate(divide="ignore", invalid="ignore"):
            u = v.fx * pc[:, 0] / z + v.cx
            w = v.fy * pc[:, 1] / z + v.cy
        vis |= front & (u >= 0) & (u <= v.width - 1) & (w >= 0) & (w <= v.height - 1)
    return vis


def cmd_eval_map(args) -> int:
    scene = load_scene(args.scene)
    bank = load_bank(args.bank)
    gt = load_voxel_grid(args.gt)
    occ = gt.occupied.ravel()
    if not np.any(occ):
        raise InvalidInputError("ground-truth grid has no occupied voxels")
    centers = GridSpec(gt.origin, gt.dims, gt.voxel_size).centers_flat()
    points = centers[occ]
    labels = gt.labels.ravel()[occ]
    scores, _ = retrieval_scores(scene, bank, points, cutoff=args.cutoff)
    material = [c for c in range(bank.num_classes) if c != bank.empty_index]
    rows = np.stack([labels == c for c in material])
    visible = None
    if args.rig:
        visible = _visible_mask(points, load_rig(args.rig))
    result = eval_map(scores[material], rows, visible=visible)
    names = [e.class_name for e in bank.entries]
    _emit(args, {"map": result.map,
                 "per_class": {names[material[q]]: v
                               for q, v in result.per_query.items()},
                 "visible_points": None if visible is None else int(visible.sum()),
                 "points": points.shape[0]})
    return 0


def cmd_bench(args) -> int:
    h, w = _parse_pair(args.image)
    report = bench(n_gaussians=args.n, image=(h, w), k=args.k,
                   threads=_threads(args), seed=args.seed or 0)
    _emit(args, report)
    return 0


def _parse_pair(text):
    parts = [p for p in text.lower().replace("x", " ").split() if p]
    if len(parts) != 2:
        raise InvalidInputError("--image wants HxW, e.g. 180x320")
    return int(parts[0]), int(parts[1])


def cmd_pipeline(args) -> int:
    cfg_dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg_dict = json.load(fh)
    if args.stages:
        cfg_dict["stages"] = [s for s in args.stages.split(",") if s]
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.out:
        cfg_dict["out_dir"] = args.out
    cfg_dict["threads"] = _threads(args)
    config = PipelineConfig.from_dict(cfg_dict)
    report = run_pipeline(config)
    _emit(args, report)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (fixture-determining)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: FGS_THREADS or 1)")
    common.add_argument("--quiet", action="store_true",
                        help="suppress the JSON summary on stdout")

    p = argparse.ArgumentParser(prog="fgs",
                                description="Feature-Gaussian scene toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic fixture directory")
    s.add_argument("--spec", help="fixture spec JSON (default: built-in room)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--depth-noise", type=float, default=None)
    s.add_argument("--pose-noise", type=float, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("init", parents=[common],
                       help="build the base Gaussian layer from a rig")
    s.add_argument("--rig", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=4000)
    s.add_argument("--gamma", type=float, default=0.2)
    s.add_argument("--select-mode", choices=("signed", "absolute"),
                   default="signed")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("densify", parents=[common],
                       help="grow one Gaussian layer where depth disagrees")
    s.add_argument("--rig", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--gamma", type=float, default=0.2)
    s.add_argument("--select-mode", choices=("signed", "absolute"),
                   default="signed")
    s.set_defaults(func=cmd_densify)

    s = sub.add_parser("refine", parents=[common],
                       help="resample plane features into the scene")
    s.add_argument("--rig", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--heads", help="decode-head tensor file (.head)")
    s.add_argument("--which", choices=("all", "newest"), default="all")
    s.add_argument("--occlusion-margin", type=float, default=None)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("render", parents=[common],
                       help="render depth/feature planes for one view")
    s.add_argument("--rig", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--out-depth")
    s.add_argument("--out-feature")
    s.add_argument("--preview", help="grayscale depth preview (PGM)")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("voxelize", parents=[common],
                       help="accumulate the scene into an occupancy grid")
    s.add_argument("--scene", required=True)
    s.add_argument("--bank", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--origin", required=True, help="x,y,z of the low corner")
    s.add_argument("--dims", required=True, help="nx,ny,nz voxel counts")
    s.add_argument("--voxel-size", type=float, default=0.4)
    s.add_argument("--tau", type=float, default=TAU_OCC)
    s.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    s.add_argument("--no-cutoff", action="store_true")
    s.add_argument("--reduce", choices=("max", "mean"), default="max")
    s.set_defaults(func=cmd_voxelize)

    s = sub.add_parser("retrieve", parents=[common],
                       help="score text classes at query points")
    s.add_argument("--scene", required=True)
    s.add_argument("--bank", required=True)
    s.add_argument("--points", required=True, help="PNTS file or x y z text")
    s.add_argument("--out", help="write the score table to this JSON file")
    s.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    s.add_argument("--no-cutoff", action="store_true")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("loss", parents=[common],
                       help="loss breakdown of a scene against its rig")
    s.add_argument("--rig", required=True)
    s.add_argument("--scene", required=True)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("eval-miou", parents=[common],
                       help="mean IoU between two voxel grids")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.set_defaults(func=cmd_eval_miou)

    s = sub.add_parser("eval-map", parents=[common],
                       help="retrieval mean average precision at GT voxels")
    s.add_argument("--scene", required=True)
    s.add_argument("--bank", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--rig", help="restrict to camera-visible points")
    s.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    s.set_defaults(func=cmd_eval_map)

    s = sub.add_parser("bench", parents=[common],
                       help="median-of-k timings for the heavy kernels")
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--image", default="180x320")
    s.add_argument("--k", type=int, default=1)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("pipeline", parents=[common],
                       help="run configured stages end to end")
    s.add_argument("--config", help="PipelineConfig JSON file")
    s.add_argument("--stages", help="comma-separated stage list override")
    s.add_argument("--out", help="artifact directory")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalDegeneracyError as e:
        print(f"fgs: numerical degeneracy: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"fgs: format error: {e}", file=sys.stderr)
        return 4
    except InvalidInputError as e:
        print(f"fgs: invalid input: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"fgs: i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
