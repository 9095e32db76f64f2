"""Command-line entry point for the full pipeline.

Subcommands: reconstruct, extract-mesh, align, articulate, compose,
evaluate, replay-analyze, metrics, dataset, serve, plus `fixtures` for
the bundled synthetic inputs. Progress goes to stderr as `key=value`
lines; exit codes: 0 success, 1 module error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _progress(stage: str, **kv) -> None:
    print(f"progress stage={stage} " + " ".join(f"{k}={v}" for k, v in kv.items()), file=sys.stderr, flush=True)


def _load_views(images_dir, poses_path):
    from PIL import Image

    from .splat_io import load_cameras

    cameras = load_cameras(poses_path)
    views = []
    for cam_id, cam in sorted(cameras.items()):
        img_path = Path(images_dir) / f"{cam_id}.png"
        if not img_path.exists():
            raise FileNotFoundError(f"no image for camera {cam_id!r}: {img_path}")
        img = np.asarray(Image.open(img_path).convert("RGB")).astype(float) / 255.0
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"{img_path}: image is {img.shape[:2]}, camera says {(cam.height, cam.width)}")
        views.append((img, cam))
    return views, cameras


def cmd_reconstruct(args) -> int:
    from .geometry import quat_normalize
    from .objective import ReconConfig
    from .optimize import optimize_scene
    from .splats import SplatScene
    from .splat_io import load_splats_file, save_splats_file

    views, cameras = _load_views(args.images, args.poses)
    if args.init_scene:
        init = load_splats_file(args.init_scene)
    else:
        rng = np.random.default_rng(args.seed)
        centers = np.stack([c.center() for c in cameras.values()])
        mid = centers.mean(axis=0)
        span = np.maximum(centers.max(axis=0) - centers.min(axis=0), 0.2)
        lo, hi = mid - 0.35 * span, mid + 0.35 * span
        n = args.init_splats
        init = SplatScene(
            rng.uniform(lo, hi, (n, 3)),
            quat_normalize(rng.normal(size=(n, 4))),
            rng.uniform(0.02, 0.08, (n, 2)),
            rng.uniform(0.2, 0.8, (n, 3)),
            rng.uniform(0.5, 0.9, n),
            "world",
        )
    config = ReconConfig(
        iterations=args.iters, lambda_dist=args.lambda_dist, lambda_norm=args.lambda_norm, seed=args.seed
    )
    _progress("reconstruct", views=len(views), splats=len(init), iters=args.iters)
    scene, history = optimize_scene(views, init, config)
    save_splats_file(scene, args.out)
    _progress(
        "reconstruct", done=1,
        initial_photometric=f"{history[0].photometric:.6g}", final_photometric=f"{history[-1].photometric:.6g}",
    )
    return 0


def cmd_extract_mesh(args) -> int:
    from .meshing import extract_mesh, save_obj, save_ply
    from .splat_io import load_cameras, load_splats_file
    from .tsdf import fuse_tsdf

    scene = load_splats_file(args.scene)
    cameras = list(load_cameras(args.poses).values())
    if args.bounds:
        vals = [float(v) for v in args.bounds]
        lo, hi = np.array(vals[:3]), np.array(vals[3:])
    else:
        lo = scene.means.min(axis=0) - 3 * args.tau
        hi = scene.means.max(axis=0) + 3 * args.tau
    _progress("extract-mesh", cameras=len(cameras), voxel=args.voxel, tau=args.tau)
    volume = fuse_tsdf(scene, cameras, args.tau, args.voxel, lo, hi)
    if args.dump_tsdf:
        volume.save_debug_dump(args.dump_tsdf)
    mesh = extract_mesh(volume)
    out = Path(args.out)
    if out.suffix == ".ply":
        save_ply(mesh, out)
    else:
        save_obj(mesh, out)
    _progress("extract-mesh", done=1, vertices=len(mesh.vertices), triangles=len(mesh.triangles))
    return 0


def cmd_align(args) -> int:
    from .align import apply_sim3_scene, estimate_sim3
    from .splat_io import (
        correspondences_from_cameras,
        load_board_coords,
        load_cameras,
        load_splats_file,
        save_splats_file,
    )

    cameras = load_cameras(args.poses)
    board = load_board_coords(args.board_coords)
    corr, used = correspondences_from_cameras(cameras, board)
    transform, residual = estimate_sim3(corr)
    scene = load_splats_file(args.scene)
    save_splats_file(apply_sim3_scene(scene, transform), args.out)
    _progress(
        "align", frames=len(used), scale=f"{transform.scale:.6g}", rms_residual=f"{residual:.6g}"
    )
    print(json.dumps({"scale": transform.scale, "rms_residual": residual, "frames": used}))
    return 0


def cmd_articulate(args) -> int:
    from .articulate import assign_splats_to_links, save_bundle
    from .meshing import load_obj
    from .robot import JointConfig, parse_robot_model
    from .splat_io import load_splats_file

    xml = Path(args.robot).read_bytes()
    model = parse_robot_model(xml)
    splats = load_splats_file(args.splats)
    q_scan = JointConfig(np.loadtxt(args.qscan, ndmin=1))
    meshes = {}
    for name, link in model.links.items():
        if link.mesh_path:
            meshes[name] = load_obj(Path(args.robot).parent / link.mesh_path)
    art = assign_splats_to_links(splats, model, q_scan, link_meshes=meshes or None, cutoff=args.cutoff)
    save_bundle(art, args.out, xml)
    _progress("articulate", dropped=art.report.dropped, links=len(art.links_with_splats()))
    print(json.dumps({"dropped": art.report.dropped, "counts": art.report.counts}))
    return 0


def cmd_compose(args) -> int:
    from .scene import load_scene

    if not args.validate:
        print("compose: only --validate mode is supported from the CLI; "
              "author descriptors via the composer UI or `fixtures`", file=sys.stderr)
        return 1
    scene = load_scene(args.spec)
    flat = scene.flatten(scene.initial_q(), scene.nominal_poses())
    print(
        json.dumps(
            {
                "valid": True,
                "instances": scene.instance_ids(),
                "render_set_size": len(flat),
                "rubric_steps": len(scene.rubric.steps),
                "content_hash": scene.content_hash,
            }
        )
    )
    return 0


def cmd_evaluate(args) -> int:
    from .episode import run_episode, save_episode_record
    from .scene import load_scene
    from .world import WorldConfig

    scene = load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = WorldConfig()
    scores = []
    failures = 0
    env_name = scene.rubric.task
    for i in range(args.episodes):
        seed = args.seed + i
        rec = run_episode(
            scene, args.policy, seed, max_steps=args.max_steps, world_config=config,
            replan_interval=args.replan_interval, policy_timeout=args.timeout,
            render_dir=(out / f"episode_{i:04d}" / "renders") if args.save_renders else None,
        )
        save_episode_record(rec, out / f"episode_{i:04d}")
        if rec.failed_infrastructure:
            failures += 1
        else:
            scores.append(rec.final_score)
        _progress("evaluate", episode=i, score=rec.final_score, termination=rec.termination)
    mean = float(np.mean(scores)) if scores else float("nan")
    summary = {
        "policy": args.policy_name or args.policy,
        "environment": env_name,
        "episodes": len(scores),
        "infrastructure_failures": failures,
        "mean_score": mean,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    with open(out / "scores.csv", "w") as fh:
        fh.write("policy,environment,source,score,episodes\n")
        fh.write(f"{summary['policy']},{env_name},sim,{mean},{len(scores)}\n")
    print(json.dumps(summary))
    return 0 if failures == 0 else 1


def cmd_replay_analyze(args) -> int:
    from .episode import replay_error_analysis, save_error_curve

    table = np.loadtxt(args.recording, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] % 2 != 0:
        print(f"recording must have paired cmd/ach columns, got {table.shape[1]}", file=sys.stderr)
        return 1
    dof = table.shape[1] // 2
    commanded, achieved = table[:, :dof], table[:, dof:]
    times, err = replay_error_analysis(
        commanded, achieved, args.mode, dt=args.dt, v_max=args.v_max,
        disturbance_scale=args.disturbance, seed=args.seed,
    )
    save_error_curve(times, err, args.out)
    _progress("replay-analyze", mode=args.mode, steps=len(times), final_mean_abs=f"{np.mean(err[-1]):.6g}")
    return 0


def cmd_metrics(args) -> int:
    from .metrics import build_report, ingest_scores, write_report

    table = ingest_scores(args.scores)
    report = build_report(table, bootstrap_samples=args.bootstrap, seed=args.seed)
    if args.out:
        write_report(report, table, args.out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_dataset(args) -> int:
    from .dataset import EpisodeDataset, MixtureSpec, StepData, mixed_sampler, mixture_stats

    if args.dataset_cmd == "write":
        ds = EpisodeDataset(args.root, source=args.source)
        if args.from_run:
            run_dir = Path(args.from_run)
            count = 0
            for ep_dir in sorted(run_dir.glob("episode_*")):
                rows = np.loadtxt(ep_dir / "steps.csv", delimiter=",", skiprows=1, usecols=None, dtype=str, ndmin=2)
                header = (ep_dir / "steps.csv").read_text().splitlines()[0].split(",")
                a_cols = [i for i, h in enumerate(header) if h.startswith("a") and h[1:].isdigit()]
                q_cols = [i for i, h in enumerate(header) if h.startswith("q") and h[1:].isdigit()]
                w_col = header.index("gripper_width")
                steps = []
                for row in rows:
                    action = np.array([float(row[i]) for i in a_cols])
                    proprio = np.concatenate([[float(row[i]) for i in q_cols], [float(row[w_col])]])
                    steps.append(StepData(action=action, proprio=proprio))
                manifest = json.loads((ep_dir / "manifest.json").read_text())
                ds.write_episode(steps, instruction=f"run {manifest.get('episode_seed')}")
                count += 1
            _progress("dataset-write", episodes=count)
        elif args.synthetic:
            rng = np.random.default_rng(args.seed)
            for _ in range(args.synthetic):
                steps = [
                    StepData(action=rng.uniform(-1, 1, 8), proprio=rng.uniform(-1, 1, 8))
                    for _ in range(args.steps)
                ]
                ds.write_episode(steps, instruction="synthetic")
            _progress("dataset-write", episodes=args.synthetic, synthetic=1)
        else:
            print("dataset write needs --from-run or --synthetic", file=sys.stderr)
            return 1
        return 0
    if args.dataset_cmd == "inspect":
        ds = EpisodeDataset(args.root, source=args.source)
        metas = ds.episodes()
        print(
            json.dumps(
                {
                    "episodes": len(metas),
                    "steps": sum(m.steps for m in metas),
                    "sources": sorted({m.source for m in metas}),
                }
            )
        )
        return 0
    if args.dataset_cmd == "sample":
        pre = EpisodeDataset(args.pre, source="pretrain")
        sim = EpisodeDataset(args.sim, source="sim")
        spec = MixtureSpec(args.mix_lambda, args.batch, args.seed)
        stats = mixture_stats(mixed_sampler(pre, sim, spec), args.n)
        print(
            json.dumps(
                {
                    "elements": stats.elements,
                    "sim_fraction": stats.sim_fraction,
                    "source_counts": stats.source_counts,
                    "episodes_covered": len(stats.episode_counts),
                }
            )
        )
        return 0
    print(f"unknown dataset command {args.dataset_cmd!r}", file=sys.stderr)
    return 2


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(asset_roots=[Path(p) for p in args.assets], scene_root=Path(args.scene_root))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_fixtures(args) -> int:
    from .scene import Randomization
    from .synthetic import write_pickplace_fixture, write_recon_fixture

    out = Path(args.out)
    if args.kind == "recon":
        write_recon_fixture(out, seed=args.seed)
    elif args.kind == "pickplace":
        r = args.randomization
        rand = Randomization(x=(-r, r), y=(-r, r)) if r > 0 else None
        write_pickplace_fixture(out, randomization=rand, seed=args.seed)
    _progress("fixtures", kind=args.kind, out=str(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splateval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="fit a splat scene to posed images")
    p.add_argument("--images", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lambda-dist", type=float, default=1e-3)
    p.add_argument("--lambda-norm", type=float, default=1e-4)
    p.add_argument("--init-splats", type=int, default=400)
    p.add_argument("--init-scene")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("extract-mesh", help="fuse rendered depth into a TSDF and mesh it")
    p.add_argument("--scene", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--voxel", type=float, default=0.005)
    p.add_argument("--tau", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.add_argument("--bounds", nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    p.add_argument("--dump-tsdf")
    p.set_defaults(func=cmd_extract_mesh)

    p = sub.add_parser("align", help="align a reconstruction into the board frame")
    p.add_argument("--poses", required=True)
    p.add_argument("--board-coords", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("articulate", help="anchor robot splats to links")
    p.add_argument("--robot", required=True)
    p.add_argument("--splats", required=True)
    p.add_argument("--qscan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff", type=float, default=0.05)
    p.set_defaults(func=cmd_articulate)

    p = sub.add_parser("compose", help="validate a scene descriptor")
    p.add_argument("--spec", required=True)
    p.add_argument("--background")
    p.add_argument("--robot")
    p.add_argument("--objects")
    p.add_argument("--validate", action="store_true")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("evaluate", help="run policy rollouts against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--policy-name")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--max-steps", type=int, default=400)
    p.add_argument("--replan-interval", type=int)
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--save-renders", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay-analyze", help="open-loop replay error curves")
    p.add_argument("--recording", required=True)
    p.add_argument("--mode", choices=["position", "velocity"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float, default=1.0 / 15.0)
    p.add_argument("--v-max", type=float, default=1.5)
    p.add_argument("--disturbance", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_replay_analyze)

    p = sub.add_parser("metrics", help="faithfulness metrics over score tables")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--out")
    p.add_argument("--bootstrap", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("dataset", help="episodic datasets and mixture sampling")
    dsub = p.add_subparsers(dest="dataset_cmd", required=True)
    w = dsub.add_parser("write")
    w.add_argument("--root", required=True)
    w.add_argument("--source", choices=["pretrain", "sim"], default="sim")
    w.add_argument("--from-run")
    w.add_argument("--synthetic", type=int)
    w.add_argument("--steps", type=int, default=30)
    w.add_argument("--seed", type=int, default=0)
    i = dsub.add_parser("inspect")
    i.add_argument("--root", required=True)
    i.add_argument("--source", choices=["pretrain", "sim"], default="sim")
    s = dsub.add_parser("sample")
    s.add_argument("--pre", required=True)
    s.add_argument("--sim", required=True)
    s.add_argument("--lambda", dest="mix_lambda", type=float, required=True)
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("serve", help="HTTP service for the composer UI")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--assets", nargs="*", default=[])
    p.add_argument("--scene-root", default=".")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fixtures", help="write bundled synthetic fixtures")
    p.add_argument("--kind", choices=["recon", "pickplace"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--randomization", type=float, default=0.0)
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 (CLI boundary: structured error, exit 1)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
