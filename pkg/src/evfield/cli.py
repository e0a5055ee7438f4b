"""Command-line entry points: simulate, extract-motion, train, render, eval.

Every subcommand takes `--config PATH` (flat key = value file), `--seed N`
(overrides `train.seed`), and `--out DIR`.  Exit codes: 0 success, 1
failure with a one-line diagnostic on stderr, 2 usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .camera import Intrinsics, PinholeCamera, load_trajectory, save_trajectory
from .config import default_config, load_config
from .events import load_events, save_events
from .field import (EncodingConfig, FieldArch, init_params, load_checkpoint,
                    save_checkpoint)
from .imgio import read_f32, write_f32, write_pgm
from .metrics import (MetricReport, depth_mae, format_metric_csv,
                      normalize_to_gt, psnr, ssim)
from .motion import (MotionOptimConfig, build_warp_field, load_warp_field,
                     save_warp_field)
from .render import RenderConfig, render_view
from .simulate import (orbit_trajectory, preset_scene, render_sequence,
                       video_to_events)
from .training import TrainConfig, save_loss_log, train


def _load_cfg(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    return cfg


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _intrinsics(cfg) -> Intrinsics:
    size = cfg["sim.size"]
    focal = cfg["sim.focal"] or float(size)
    return Intrinsics(focal, focal, size / 2.0, size / 2.0, size, size)


def _view_name(i: int) -> str:
    return f"view_{i:04d}"


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    scene = preset_scene(cfg["sim.preset"])
    intr = _intrinsics(cfg)
    traj = orbit_trajectory(cfg["sim.radius"], cfg["sim.height"],
                            cfg["sim.views"], cfg["sim.t_span"],
                            phase=cfg["sim.phase"])
    frames = render_sequence(scene, intr, traj)
    stream = video_to_events(frames, cfg["sim.contrast"], cfg["sim.offset"],
                             rng_seed=cfg["train.seed"],
                             jitter=cfg["sim.jitter"])
    save_events(stream, os.path.join(out, "events.evt1"))
    save_trajectory(os.path.join(out, "poses.txt"), intr, traj)
    gt = os.path.join(out, "gt")
    os.makedirs(gt, exist_ok=True)
    for i in range(len(frames.times)):
        name = _view_name(i)
        write_f32(os.path.join(gt, name + ".f32"), frames.intensity[i])
        write_f32(os.path.join(gt, f"depth_{i:04d}.f32"), frames.depth[i])
        write_pgm(os.path.join(gt, name + ".pgm"), frames.intensity[i])
    print(f"{len(stream.t)} events over {len(frames.times)} views -> {out}")
    return 0


def cmd_extract_motion(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    stream = load_events(args.events)
    opt = MotionOptimConfig(lr=cfg["motion.lr"], iters=cfg["motion.iters"])
    field = build_warp_field(stream, cfg["motion.window"],
                             model=cfg["motion.model"], cfg=opt)
    path = os.path.join(out, "warp.txt")
    save_warp_field(path, field)
    print(f"{len(field.windows)} motion windows -> {path}")
    return 0


def _arch(cfg) -> FieldArch:
    return FieldArch(depth=cfg["field.depth"], width=cfg["field.width"],
                     encoding=EncodingConfig(
                         l_pos=cfg["field.l_pos"], l_dir=cfg["field.l_dir"],
                         include_input=cfg["field.include_input"]))


def _train_cfg(cfg) -> TrainConfig:
    return TrainConfig(
        alpha=cfg["train.alpha"], beta=cfg["train.beta"],
        gamma=cfg["train.gamma"], lr=cfg["train.lr"],
        steps=cfg["train.steps"], patches_per_batch=cfg["train.patches"],
        patch_side=cfg["sampler.n"], window_min=cfg["train.window_min"],
        window_max=cfg["train.window_max"], b=cfg["train.b"],
        epsilon_depth=cfg["train.epsilon_depth"],
        ao_tau_max=cfg["train.ao_tau_max"],
        ao_warmup_steps=cfg["train.ao_warmup_steps"],
        t_near=cfg["render.t_near"], t_far=cfg["render.t_far"],
        n_coarse=cfg["render.n_coarse"], n_fine=cfg["render.n_fine"],
        density_guided=cfg["sampler.density_guided"],
        patch_offset=cfg["sampler.offset"],
        literal_reciprocal=cfg["train.literal_reciprocal"],
        seed=cfg["train.seed"])


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    stream = load_events(args.events)
    intr, traj = load_trajectory(args.poses)
    warp = load_warp_field(args.warp)
    tc = _train_cfg(cfg)
    params0 = init_params(tc.seed, _arch(cfg))
    result = train(stream, intr, traj, warp, params0, tc,
                   checkpoint_dir=out,
                   checkpoint_every=cfg["train.checkpoint_every"])
    save_checkpoint(os.path.join(out, "checkpoint.nfp"), result.params)
    save_loss_log(os.path.join(out, "loss.csv"), result.log)
    done = len(result.log)
    print(f"{done} steps ({len(result.skipped_steps)} skipped) -> {out}")
    return 0


def cmd_render(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    params = load_checkpoint(args.checkpoint)
    intr, traj = load_trajectory(args.poses)
    rc = RenderConfig(n_coarse=cfg["render.n_coarse"],
                      n_fine=cfg["render.n_fine"],
                      t_near=cfg["render.t_near"], t_far=cfg["render.t_far"],
                      chunk=cfg["render.chunk"])
    for i, pose in enumerate(traj.poses):
        view = render_view(params, PinholeCamera(intr, pose), rc,
                           seed=cfg["train.seed"])
        name = _view_name(i)
        write_f32(os.path.join(out, name + ".f32"), view.intensity)
        write_f32(os.path.join(out, f"depth_{i:04d}.f32"), view.depth)
        write_pgm(os.path.join(out, name + ".pgm"), view.intensity)
    print(f"{len(traj.poses)} views -> {out}")
    return 0


def cmd_eval(args) -> int:
    names = sorted(n[:-4] for n in os.listdir(args.gt)
                   if n.startswith("view_") and n.endswith(".f32"))
    if not names:
        raise FileNotFoundError(f"no view_*.f32 ground truth in {args.gt}")
    views, psnrs, ssims, dmaes = [], [], [], []
    for name in names:
        gt = read_f32(os.path.join(args.gt, name + ".f32"))
        pred = read_f32(os.path.join(args.pred, name + ".f32"))
        aligned = normalize_to_gt(pred, gt)
        views.append(name)
        psnrs.append(psnr(aligned, np.clip(gt, 0.0, 1.0)))
        ssims.append(ssim(aligned, np.clip(gt, 0.0, 1.0)))
        if args.depth:
            dname = "depth_" + name[len("view_"):] + ".f32"
            d_gt = read_f32(os.path.join(args.gt, dname))
            d_pred = read_f32(os.path.join(args.pred, dname))
            mask = d_gt > 0.0
            dmaes.append(depth_mae(d_pred, d_gt, mask))
    report = MetricReport(tuple(views), tuple(psnrs), tuple(ssims))
    sys.stdout.write(format_metric_csv(report))
    if args.depth:
        sys.stdout.write("view,depth_mae\n")
        for name, value in zip(views, dmaes):
            sys.stdout.write(f"{name},{value:.17g}\n")
        sys.stdout.write(f"mean,{float(np.mean(dmaes)):.17g}\n")
    return 0


def _common(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--seed", type=int, help="override train.seed")
    sub.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="evfield",
        description="Event-camera radiance fields: simulate, fit, inspect.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a preset scene to events")
    _common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("extract-motion",
                       help="estimate per-window motion by contrast maximization")
    _common(s)
    s.add_argument("--events", required=True)
    s.set_defaults(func=cmd_extract_motion)

    s = sub.add_parser("train", help="fit the radiance field to an event stream")
    _common(s)
    s.add_argument("--events", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--warp", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render a trained field along poses")
    _common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--poses", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="PSNR/SSIM of renders against ground truth")
    _common(s)
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--depth", action="store_true",
                   help="also report masked depth MAE")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except Exception as e:   # single-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
