import numpy as np
import pytest

from seqlo.config import toy
from seqlo.data import synth_sequence
from seqlo.model import OdometryModel
from seqlo.nncore import checkpoint_load, lr_schedule
from seqlo.trainer import make_frames, train


def tiny_dataset(n_frames=5, seed=11):
    seq = synth_sequence(n_frames, 32, 0.3, 3.0, 0.005, seed=seed)
    return make_frames(seq.frames), seq.gt_world


def test_make_frames_keys_and_dtype():
    scans = [np.zeros((4, 3), dtype=np.float32), np.ones((5, 3))]
    frames = make_frames(scans, seq_id="lab")
    assert [f.key for f in frames] == [("lab", 0), ("lab", 1)]
    assert all(f.points.dtype == np.float64 for f in frames)
    assert frames[1].points.shape == (5, 3)


def test_train_rejects_short_sequences():
    frames, gt = tiny_dataset()
    with pytest.raises(ValueError, match="at least 3 frames"):
        train(OdometryModel(toy()), frames[:2], gt[:2], max_steps=1)


def test_train_rejects_mismatched_poses():
    frames, gt = tiny_dataset()
    with pytest.raises(ValueError, match="frames vs 2 gt"):
        train(OdometryModel(toy()), frames[:3], gt[:2], max_steps=1)


def test_two_fresh_runs_produce_identical_parameters():
    frames, gt = tiny_dataset()
    stores = []
    for _ in range(2):
        model = OdometryModel(toy())
        train(model, frames, gt, max_steps=7)
        stores.append(model.store)
    a, b = (s.state_arrays()[0] for s in stores)
    assert set(a) == set(b)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data, err_msg=name)
    assert stores[0].adam_t == stores[1].adam_t == 7


def test_step_and_epoch_accounting():
    # 5 frames -> 3 windows, batch 1 -> 3 optimizer steps per epoch.
    frames, gt = tiny_dataset()
    model = OdometryModel(toy())
    result = train(model, frames, gt, max_steps=7)
    assert result.steps == 7
    assert result.epochs == 3
    assert [e.steps for e in result.history] == [3, 6, 7]
    assert [e.epoch for e in result.history] == [1, 2, 3]
    assert model.store.adam_t == 7


def test_history_lr_follows_schedule_with_start_offset():
    frames, gt = tiny_dataset()
    cfg = toy()
    model = OdometryModel(cfg)
    result = train(model, frames, gt, max_steps=3, start_epoch=cfg.lr_decay_epochs)
    # First epoch after the offset sits one decay interval in.
    assert result.history[0].lr == lr_schedule(
        cfg.lr_decay_epochs, cfg.lr, cfg.lr_decay, cfg.lr_decay_epochs, cfg.lr_floor)
    assert result.history[0].lr == pytest.approx(cfg.lr * cfg.lr_decay, rel=1e-12)
    assert result.history[0].epoch == cfg.lr_decay_epochs + 1


def test_early_stop_when_both_targets_met():
    frames, gt = tiny_dataset()
    cfg = toy().with_overrides(target_t_err=1e9, target_r_err_deg=1e9)
    result = train(OdometryModel(cfg), frames, gt, max_steps=50)
    assert result.stopped_early
    assert result.epochs == 1
    assert result.steps == 3


def test_no_early_stop_while_either_target_disabled():
    frames, gt = tiny_dataset()
    cfg = toy().with_overrides(target_t_err=1e9, target_r_err_deg=0.0)
    result = train(OdometryModel(cfg), frames, gt, max_steps=4)
    assert not result.stopped_early
    assert result.steps == 4


def test_max_steps_counts_the_current_call_only():
    frames, gt = tiny_dataset()
    model = OdometryModel(toy())
    first = train(model, frames, gt, max_steps=4)
    second = train(model, frames, gt, max_steps=3, start_epoch=first.epochs)
    assert second.steps == 3
    assert model.store.adam_t == 7


def test_checkpoint_written_with_progress_meta(tmp_path):
    frames, gt = tiny_dataset()
    model = OdometryModel(toy())
    path = str(tmp_path / "run.ckpt")
    result = train(model, frames, gt, max_steps=4, checkpoint_path=path)
    ckpt = checkpoint_load(path)
    assert ckpt.meta == {"epoch": result.epochs, "step": result.steps}
    assert ckpt.adam_t == 4
    live = model.store.state_arrays()[0]
    assert set(ckpt.params) == set(live)
    for name, arr in ckpt.params.items():
        # Storage rounds to float32; the live values must match at that grain.
        np.testing.assert_array_equal(arr, live[name].data.astype(np.float32).astype(np.float64),
                                      err_msg=name)


def test_loss_and_pose_error_improve_on_tiny_overfit():
    frames, gt = tiny_dataset()
    model = OdometryModel(toy())
    result = train(model, frames, gt, max_steps=45)
    first, last = result.history[0], result.history[-1]
    assert last.mean_loss < first.mean_loss
    assert np.isfinite([e.mean_loss for e in result.history]).all()
    assert last.mean_t_err < first.mean_t_err
