"""Command-line pipeline: synth -> train -> render -> segment -> eval -> query.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import render as render_mod
from . import synthetic, training
from .config import load_run_config
from .errors import LangfieldError
from .formats import read_vlft, write_ppm, write_vlft
from .geometry import CameraIntrinsics, Pose, load_dataset
from .segmentation import LabelCatalog, classify_features, compute_metrics, query_heatmap


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE", dest="overrides",
        help="override a config key (repeatable)",
    )


def _threads(args):
    if getattr(args, "threads", None):
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except ImportError:
            pass


def cmd_synth(args):
    if args.scene:
        spec = synthetic.load_scene_spec(args.scene)
    else:
        spec = synthetic.default_scene(feature_dim=args.feature_dim, seed=args.seed or 0)
    if args.seed is not None:
        spec.seed = args.seed
    fov_scale = np.tan(np.radians(args.fov) / 2.0)
    fx = args.width / (2.0 * fov_scale)
    intr = CameraIntrinsics(
        fx=fx, fy=fx, cx=args.width / 2.0, cy=args.height / 2.0,
        width=args.width, height=args.height,
    )
    synthetic.generate_dataset(
        spec, args.train_views, args.test_views, intr, out_dir=args.out
    )
    print(f"wrote dataset under {args.out}", file=sys.stderr)
    return 0


def cmd_train(args):
    cfg = load_run_config(args.config, args.overrides)
    if args.data:
        cfg.set("data.dir", args.data)
    if args.out:
        cfg.set("out.dir", args.out)
    if not cfg["data.dir"] or not cfg["out.dir"]:
        raise LangfieldError("train needs data.dir and out.dir (via --data/--out or config)")
    dataset = load_dataset(cfg["data.dir"])
    field_cfg = cfg.field_config(dataset.scene_bound)
    train_cfg = cfg.train_config()
    near, far = cfg.near_far(dataset)
    state = None
    if args.resume:
        _, state = ckpt_mod.restore_train_state(args.resume, train_cfg, expect_cfg=field_cfg)
    training.train(
        dataset,
        field_cfg,
        train_cfg,
        weights=cfg.loss_weights(),
        near=near,
        far=far,
        out_dir=cfg["out.dir"],
        state=state,
        log_fn=(None if args.quiet else _print_report),
    )
    return 0


def _print_report(report):
    if report.iteration % 50 == 0:
        print(
            f"iter {report.iteration}: l_p={report.l_p:.5f} l_g={report.l_g:.5f} "
            f"l_vl={report.l_vl:.5f} total={report.l_total:.5f}",
            file=sys.stderr,
        )


def _load_poses_file(path):
    poses = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            poses.append(Pose(np.array([float(v) for v in line.split()]).reshape(4, 4)))
    return poses


def _view_context(args):
    """Checkpoint + pose/intrinsics for view-rendering commands."""
    field_cfg, params, _, _ = ckpt_mod.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data) if args.data else None
    if dataset is not None:
        intr = dataset.frames[0].intrinsics
        poses = [f.pose for f in dataset.frames]
        near, far = dataset.near, dataset.far
    elif args.poses and args.intrinsics:
        tokens = Path(args.intrinsics).read_text().split()
        intr = CameraIntrinsics(
            fx=float(tokens[0]), fy=float(tokens[1]), cx=float(tokens[2]),
            cy=float(tokens[3]), width=int(tokens[4]), height=int(tokens[5]),
        )
        poses = _load_poses_file(args.poses)
        near, far = args.near, args.far
        if not far:
            raise LangfieldError("--far is required with --poses")
    else:
        raise LangfieldError("need --data or (--poses and --intrinsics)")
    if args.near:
        near = args.near
    if args.far:
        far = args.far
    return field_cfg, params, intr, poses, near, far


def cmd_render(args):
    cfg = load_run_config(args.config, args.overrides)
    field_cfg, params, intr, poses, near, far = _view_context(args)
    if not 0 <= args.view < len(poses):
        raise LangfieldError(f"view {args.view} out of range [0,{len(poses)})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = render_mod.render_view(
        field_cfg, params, poses[args.view], intr, near, far,
        args.samples, args.seed, deterministic=cfg["train.deterministic"],
    )
    wanted = args.outputs.split(",")
    idx = args.view
    if "rgb" in wanted:
        write_vlft(out / f"rgb_{idx:05d}.vlft", maps["rgb"])
        write_ppm(out / f"rgb_{idx:05d}.ppm", maps["rgb"])
    if "depth" in wanted:
        write_vlft(out / f"depth_{idx:05d}.vlft", maps["plane_depth"])
        write_ppm(out / f"depth_{idx:05d}.ppm", maps["plane_depth"] / far)
    if "feature" in wanted:
        write_vlft(out / f"feature_{idx:05d}.vlft", maps["feature"])
    return 0


def cmd_segment(args):
    cfg = load_run_config(args.config, args.overrides)
    field_cfg, params, intr, poses, near, far = _view_context(args)
    catalog = LabelCatalog.load(args.labels)
    if catalog.dim != field_cfg.mlp.feature_dim:
        raise LangfieldError(
            f"label dimension {catalog.dim} != field feature dimension "
            f"{field_cfg.mlp.feature_dim}"
        )
    views = range(len(poses)) if args.views == "all" else [int(v) for v in args.views.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for v in views:
        if not 0 <= v < len(poses):
            raise LangfieldError(f"view {v} out of range [0,{len(poses)})")
        maps = render_mod.render_view(
            field_cfg, params, poses[v], intr, near, far, args.samples, args.seed,
            deterministic=cfg["train.deterministic"],
        )
        cls = classify_features(maps["feature"], catalog)
        write_vlft(out / f"class_{v:05d}.vlft", cls.astype(np.float32))
    return 0


def cmd_eval(args):
    catalog = LabelCatalog.load(args.labels)
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    names = sorted(p.name for p in pred_dir.glob("class_*.vlft"))
    if not names:
        raise LangfieldError(f"no class_*.vlft files under {pred_dir}")
    preds, truths = [], []
    for name in names:
        tpath = truth_dir / name
        if not tpath.is_file():
            raise LangfieldError(f"missing ground truth for {name}")
        preds.append(read_vlft(pred_dir / name))
        truths.append(read_vlft(tpath))
    metrics = compute_metrics(preds, truths, len(catalog.names))
    print("metric\tvalue")
    for i, label in enumerate(catalog.names):
        iou = metrics.iou_per_class[i]
        print(f"iou.{label}\t{'nan' if np.isnan(iou) else f'{iou:.6f}'}")
    print(f"miou_class_mean\t{metrics.miou_class_mean:.6f}")
    print(f"miou_freq_weighted\t{metrics.miou_freq_weighted:.6f}")
    print(f"pixel_accuracy\t{metrics.pixel_accuracy:.6f}")
    return 0


def cmd_query(args):
    cfg = load_run_config(args.config, args.overrides)
    field_cfg, params, intr, poses, near, far = _view_context(args)
    if args.label:
        if not args.labels:
            raise LangfieldError("--label requires --labels")
        catalog = LabelCatalog.load(args.labels)
        if args.label not in catalog.names:
            raise LangfieldError(f"label {args.label!r} not in {args.labels}")
        emb = catalog.embeddings[catalog.names.index(args.label)]
        tag = args.label
    elif args.embedding:
        emb = np.array([float(v) for v in Path(args.embedding).read_text().split()])
        tag = Path(args.embedding).stem
    else:
        raise LangfieldError("query needs --label or --embedding")
    if not 0 <= args.view < len(poses):
        raise LangfieldError(f"view {args.view} out of range [0,{len(poses)})")
    maps = render_mod.render_view(
        field_cfg, params, poses[args.view], intr, near, far, args.samples, args.seed,
        deterministic=cfg["train.deterministic"],
    )
    heat, flat = query_heatmap(maps["feature"], emb)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_vlft(out / f"heat_{tag}_{args.view:05d}.vlft", heat.astype(np.float32))
    write_ppm(out / f"heat_{tag}_{args.view:05d}.ppm", heat)
    if flat:
        print("warning: constant score map (zero range), heatmap all zeros", file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    from .field import FieldConfig, MlpConfig
    from .hashgrid import HashGridConfig

    spec = synthetic.default_scene(feature_dim=args.feature_dim, seed=args.seed)
    intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
    dataset, _, _, _, _ = synthetic.generate_dataset(spec, 3, 0, intr)
    field_cfg = FieldConfig(
        grid=HashGridConfig(
            bound=dataset.scene_bound, levels=2, features=2, table_log2=8,
            base_res=4, finest_res=8,
        ),
        mlp=MlpConfig(trunk_layers=2, trunk_width=16, feature_dim=args.feature_dim),
    )
    train_cfg = training.TrainConfig(
        rays_per_iter=args.rays, iterations=1, samples_per_ray=args.samples,
        seed=args.seed,
    )
    report = training.grad_check(dataset, field_cfg, train_cfg, tolerance=args.tolerance)
    for name, err in report.items():
        if name in ("max", "pass"):
            continue
        print(f"{name}\t{err:.3e}")
    print(f"max\t{report['max']:.3e}")
    print(f"pass\t{report['pass']}")
    return 0 if report["pass"] else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="langfield",
        description="Language-feature neural field: synthesize, train, render, segment, query.",
    )
    parser.add_argument("--threads", type=int, help="cap compiled-kernel thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--scene", help="scene spec file (default: built-in 5-class scene)")
    p.add_argument("--out", required=True)
    p.add_argument("--train-views", type=int, default=60)
    p.add_argument("--test-views", type=int, default=12)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--fov", type=float, default=70.0, help="horizontal field of view, degrees")
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a field on a dataset directory")
    _add_config_args(p)
    p.add_argument("--data", help="dataset directory (sets data.dir)")
    p.add_argument("--out", help="output directory (sets out.dir)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    def add_view_args(p, multi=False):
        _add_config_args(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="dataset directory for poses/intrinsics/bounds")
        p.add_argument("--poses", help="poses.txt-style file (alternative to --data)")
        p.add_argument("--intrinsics", help="intrinsics.txt (with --poses)")
        p.add_argument("--near", type=float, default=0.0)
        p.add_argument("--far", type=float, default=0.0)
        p.add_argument("--samples", type=int, default=128)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        if multi:
            p.add_argument("--views", default="all", help="'all' or comma-separated indices")
        else:
            p.add_argument("--view", type=int, required=True)

    p = sub.add_parser("render", help="render rgb/depth/feature maps for one view")
    add_view_args(p)
    p.add_argument("--outputs", default="rgb,depth,feature")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("segment", help="write class maps for views")
    add_view_args(p, multi=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="compare class maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("query", help="heatmap of one embedding over a view")
    add_view_args(p)
    p.add_argument("--labels", help="labels.tsv for --label lookup")
    p.add_argument("--label", help="query by catalog label name")
    p.add_argument("--embedding", help="text file of D floats")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full gradient chain")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rays", type=int, default=10)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--feature-dim", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _threads(args)
    try:
        code = args.func(args)
    except (LangfieldError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
