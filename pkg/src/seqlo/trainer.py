"""Training loop over sliding three-frame windows.

Deterministic under a fixed config seed and single-threaded BLAS: window
order, dropout draws, and parameter init all derive from it. One step =
one batch of windows (averaged loss), one Adam update; the learning
rate follows the stepped decay schedule per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .geometry import RigidTransform
from .model import OdometryModel
from .nncore import grad_of, lr_schedule
from .pyramid import Frame
from .sequencer import train_window


@dataclass
class EpochLog:
    epoch: int
    steps: int
    lr: float
    mean_loss: float
    mean_t_err: float
    mean_r_err_deg: float


@dataclass
class TrainResult:
    steps: int
    epochs: int
    history: list[EpochLog] = field(default_factory=list)
    stopped_early: bool = False


def make_frames(scans: list[np.ndarray], seq_id="train") -> list[Frame]:
    return [Frame((seq_id, i), np.asarray(p, dtype=np.float64)) for i, p in enumerate(scans)]


def train(model: OdometryModel, frames: list[Frame], gt_world: list[RigidTransform],
          *, max_steps: int | None = None, checkpoint_path: str | None = None,
          log_stream=None, log_every_epoch: int = 1, start_epoch: int = 0) -> TrainResult:
    """Train in place until max_steps (default from config) or the
    configured pose-error targets are reached. Checkpoints, when a path
    is given, are rewritten at every epoch end and at the final step.
    start_epoch offsets the lr schedule when resuming; max_steps counts
    steps taken in this call only."""
    cfg = model.cfg
    if len(frames) < 3:
        raise ValueError(f"training needs at least 3 frames, got {len(frames)}")
    if len(frames) != len(gt_world):
        raise ValueError(f"{len(frames)} frames vs {len(gt_world)} gt poses")
    max_steps = cfg.max_steps if max_steps is None else max_steps

    windows = [(i, i + 1, i + 2) for i in range(len(frames) - 2)]
    root = np.random.SeedSequence([cfg.seed, 0x7219A1])
    order_seed, dropout_seed = root.spawn(2)
    order_rng = np.random.default_rng(order_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    result = TrainResult(steps=0, epochs=0)
    epoch = start_epoch
    while result.steps < max_steps:
        order = order_rng.permutation(len(windows))
        lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay, cfg.lr_decay_epochs, cfg.lr_floor)
        losses, t_errs, r_errs = [], [], []
        for start in range(0, len(order), cfg.batch):
            if result.steps >= max_steps:
                break
            batch = order[start:start + cfg.batch]
            total = None
            for wi in batch:
                i, j, k = windows[wi]
                loss, diag = train_window(
                    model, [frames[i], frames[j], frames[k]],
                    [gt_world[i], gt_world[j], gt_world[k]],
                    training=True, rng=dropout_rng)
                total = loss if total is None else total + loss
                losses.append(diag.loss)
                t_errs.extend(diag.t_errors)
                r_errs.extend(diag.r_errors_deg)
            grad_of(total * (1.0 / len(batch)), model.store)
            model.store.adam_step(lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            result.steps += 1
        epoch += 1
        result.epochs = epoch
        entry = EpochLog(epoch=epoch, steps=result.steps, lr=lr,
                         mean_loss=float(np.mean(losses)),
                         mean_t_err=float(np.mean(t_errs)),
                         mean_r_err_deg=float(np.mean(r_errs)))
        result.history.append(entry)
        if log_stream is not None and epoch % log_every_epoch == 0:
            print(f"epoch {entry.epoch:4d}  step {entry.steps:5d}  lr {entry.lr:.2e}  "
                  f"loss {entry.mean_loss:9.4f}  t_err {entry.mean_t_err:.4f} m  "
                  f"r_err {entry.mean_r_err_deg:.4f} deg", file=log_stream, flush=True)
        if checkpoint_path:
            model.save(checkpoint_path, meta={"epoch": epoch, "step": result.steps})
        if (cfg.target_t_err > 0 and cfg.target_r_err_deg > 0
                and entry.mean_t_err < cfg.target_t_err
                and entry.mean_r_err_deg < cfg.target_r_err_deg):
            result.stopped_early = True
            break
    if checkpoint_path:
        model.save(checkpoint_path, meta={"epoch": result.epochs, "step": result.steps})
    return result
