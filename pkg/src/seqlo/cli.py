"""Command-line interface.

Subcommands: synth, train, infer, eval, gradcheck, bench. Exit codes:
0 success, 1 usage, 2 data error, 3 numeric failure. Output files are
written atomically (temp + rename), so a failed run leaves no partial
artifacts behind.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import data as dataio
from . import eval as evaluation
from .config import Config, desk, load_config
from .gradchecks import CHECKS, run_all
from .model import OdometryModel
from .nncore import NumericError
from .sequencer import run_sequence
from .trainer import make_frames, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sample_frames(scans, n_points: int, seed: int):
    out = []
    for i, scan in enumerate(scans):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A, i]))
        out.append(dataio.sample_to_n(scan, n_points, rng))
    return out


# -- subcommands --------------------------------------------------------


def cmd_synth(args) -> int:
    seq = dataio.synth_sequence(args.frames, args.points, args.step_max,
                                args.rot_max, args.noise, args.seed)
    dataio.write_sequence_dir(args.out, seq)
    print(f"wrote {args.frames} frames x {args.points} points to {args.out}")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        model, ckpt = OdometryModel.load(args.resume)
        cfg = model.cfg
        start_epoch = int(ckpt.meta.get("epoch", 0))
    else:
        if not args.config:
            raise UsageError("--config is required unless --resume is given")
        cfg = load_config(args.config)
        model = OdometryModel(cfg)
        start_epoch = 0
    data_dir = args.data or cfg.data_dir
    if not data_dir:
        raise UsageError("no data directory: pass --data or set [train] data_dir")
    scans, poses = dataio.read_sequence_dir(data_dir, require_poses=True)
    frames = make_frames(_sample_frames(scans, cfg.n_points, cfg.seed))
    result = train(model, frames, poses, max_steps=args.max_steps,
                   checkpoint_path=args.out,
                   log_stream=None if args.quiet else sys.stderr,
                   start_epoch=start_epoch)
    last = result.history[-1]
    print(f"trained {result.steps} steps / {result.epochs} epochs; "
          f"final loss {last.mean_loss:.4f}, t_err {last.mean_t_err:.4f} m, "
          f"r_err {last.mean_r_err_deg:.4f} deg; checkpoint: {args.out}")
    return 0


def cmd_infer(args) -> int:
    model, _ = OdometryModel.load(args.checkpoint)
    scans, _ = dataio.read_sequence_dir(args.data)
    frames = _sample_frames(scans, model.cfg.n_points, model.cfg.seed)
    result = run_sequence(model, frames,
                          use_temporal=not args.no_temporal,
                          use_seq_init=not args.no_seq_init,
                          use_cache=not args.no_cache)
    dataio.write_kitti_poses(args.out, result.world_poses)
    print(f"wrote {len(result.world_poses)} poses to {args.out} "
          f"({result.pyramid_builds} pyramid builds, {result.cache_hits} cache hits)")
    return 0


_METRIC_COLUMNS = ["rte", "rre", "ate", "rpe_trans", "rpe_rot"]


def cmd_eval(args) -> int:
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in requested if m not in ("rte", "rre", "ate", "rpe")]
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(unknown)} (choose from rte,rre,ate,rpe)")
    calib = dataio.read_calib_tr(args.calib) if args.calib else None
    gt = dataio.read_kitti_poses(args.gt, calib)
    est = dataio.read_kitti_poses(args.est)

    values: dict[str, str] = {}
    if "rte" in requested or "rre" in requested:
        sub = evaluation.kitti_rte_rre(gt, est)
        values["rte"] = "NA" if sub.rte_percent is None else f"{sub.rte_percent:.6f}"
        values["rre"] = "NA" if sub.rre_deg_per_100m is None else f"{sub.rre_deg_per_100m:.6f}"
    if "ate" in requested:
        values["ate"] = f"{evaluation.ate(gt, est):.6f}"
    if "rpe" in requested:
        rpe_t, rpe_r = evaluation.rpe(gt, est)
        values["rpe_trans"] = f"{rpe_t:.6f}"
        values["rpe_rot"] = f"{rpe_r:.6f}"

    cols = [c for c in _METRIC_COLUMNS
            if c in values and (c.split("_")[0] in requested or c in requested)]
    name = os.path.splitext(os.path.basename(args.est))[0]
    print("sequence," + ",".join(cols))
    print(name + "," + ",".join(values[c] for c in cols))
    return 0


def cmd_gradcheck(args) -> int:
    if args.module and args.module not in CHECKS:
        raise UsageError(f"unknown module '{args.module}'; available: {', '.join(CHECKS)}")
    reports = run_all(seed=args.seed, module=args.module)
    failed = False
    for name, report in reports:
        status = "PASS" if report.ok else "FAIL"
        print(f"{name:12s} {status}  entries={report.checked:5d}  "
              f"max_rel={report.max_rel_diff:.3e}  max_abs={report.max_abs_diff:.3e}")
        for f in report.failures[:5]:
            print(f"    {f.param}{list(f.index)}: analytic {f.analytic:.6e} "
                  f"vs numeric {f.numeric:.6e}")
        failed = failed or not report.ok
    if failed:
        raise NumericError("gradient contract violated")
    return 0


def bench_config(n_points: int) -> Config:
    if n_points == 256:
        return desk()
    if n_points < 32:
        raise UsageError("bench needs at least 32 points")
    levels = tuple(max(n_points // f, 2) for f in (2, 4, 8, 16))
    return desk().with_overrides(
        levels=levels, n_points=n_points,
        k_sa=min(16, levels[2]), k_cv=min(8, levels[3]), k_relay=min(8, levels[3]))


def bench_run(n_points: int = 256, repeat: int = 3, n_frames: int = 6,
              seed: int = 0) -> tuple[float, float]:
    """(seconds/pair with cache+seq-init, seconds/pair without)."""
    cfg = bench_config(n_points)
    model = OdometryModel(cfg, seed=seed)
    seq = dataio.synth_sequence(n_frames, n_points, 0.3, 3.0, 0.005, seed)
    pairs = n_frames - 1

    def once(enabled: bool) -> float:
        t0 = time.perf_counter()
        run_sequence(model, seq.frames, use_seq_init=enabled, use_cache=enabled)
        return (time.perf_counter() - t0) / pairs

    once(True)  # warm-up, excluded from timing
    on = min(once(True) for _ in range(repeat))
    off = min(once(False) for _ in range(repeat))
    return on, off


def cmd_bench(args) -> int:
    on, off = bench_run(args.points, args.repeat, args.frames, args.seed)
    print(f"cache+seq-init on:  {on * 1e3:8.2f} ms/pair")
    print(f"cache+seq-init off: {off * 1e3:8.2f} ms/pair")
    print(f"ratio: {on / off:.3f}")
    return 0


# -- wiring --------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="seqlo", description="Sequential LiDAR odometry toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--points", type=int, default=256)
    s.add_argument("--step-max", type=float, default=0.5)
    s.add_argument("--rot-max", type=float, default=5.0, help="max per-frame yaw, degrees")
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train on a sequence directory")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint path (rewritten every epoch)")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--data", help="overrides [train] data_dir")
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="run odometry, write a trajectory")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-temporal", action="store_true")
    s.add_argument("--no-seq-init", action="store_true")
    s.add_argument("--no-cache", action="store_true")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="trajectory metrics as CSV")
    s.add_argument("--gt", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--calib")
    s.add_argument("--metrics", default="rte,rre,ate,rpe")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="verify the gradient contract")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--module", help=f"one of: {', '.join(CHECKS)}")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", help="time cache + sequential-init on vs off")
    s.add_argument("--points", type=int, default=256)
    s.add_argument("--repeat", type=int, default=3)
    s.add_argument("--frames", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (dataio.DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
