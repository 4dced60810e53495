import numpy as np
import pytest

from seqlo import autodiff as ad
from seqlo.config import toy
from seqlo.data import synth_sequence
from seqlo.geometry import (Quaternion, RigidTransform, quat_normalize,
                            transform_apply, transform_compose, transform_inverse)
from seqlo.model import OdometryModel
from seqlo.pyramid import Frame, PyramidCache
from seqlo.sequencer import estimate_pair, run_sequence, train_window
from seqlo.trainer import make_frames


def fresh_model():
    return OdometryModel(toy())


def toy_frames(n=4, seed=2):
    rng = np.random.default_rng(seed)
    return [Frame(("s", i), rng.uniform(-4, 4, size=(32, 3))) for i in range(n)]


def random_pose(rng):
    return RigidTransform(Quaternion(*quat_normalize(rng.normal(size=4))),
                          rng.normal(size=3) * 0.5)


def test_untrained_model_returns_init_pose_at_every_level(rng):
    model = fresh_model()
    a, b = toy_frames(2)
    t_init = random_pose(rng)
    out = estimate_pair(model, a, b, t_init, None, PyramidCache(2))
    for lvl in out.levels:
        assert (lvl.q.data == t_init.q.as_array()).all()
        assert (lvl.t.data == t_init.t).all()


def test_untrained_model_identity_without_init(rng):
    model = fresh_model()
    a, b = toy_frames(2)
    out = estimate_pair(model, a, b, None, None, PyramidCache(2))
    for T in out.transforms:
        assert (T.q.as_array() == np.array([1.0, 0, 0, 0])).all()
        assert (T.t == np.zeros(3)).all()


def test_temporal_state_anchored_to_source_frame():
    model = fresh_model()
    a, b = toy_frames(2)
    out = estimate_pair(model, a, b, None, None, PyramidCache(2))
    assert out.state.frame_key == a.key
    n3 = toy().levels[-1]
    assert out.state.anchors.shape == (n3, 3)
    assert out.state.cell.data.shape == out.state.embed.data.shape


def test_cold_pair_stores_zero_cell():
    model = fresh_model()
    a, b = toy_frames(2)
    out = estimate_pair(model, a, b, None, None, PyramidCache(2))
    assert (out.state.cell.data == 0.0).all()


def test_warm_pair_stores_lstm_state(rng):
    model = fresh_model()
    frames = toy_frames(3)
    cache = PyramidCache(2)
    first = estimate_pair(model, frames[0], frames[1], None, None, cache)
    second = estimate_pair(model, frames[1], frames[2], first.pose,
                           first.state.detached(), cache)
    assert second.state.frame_key == frames[1].key
    assert not (second.state.cell.data == 0.0).all()
    assert (np.abs(second.state.embed.data) <= 1.0).all()


def test_run_sequence_needs_two_frames():
    model = fresh_model()
    with pytest.raises(ValueError, match="2 frames"):
        run_sequence(model, toy_frames(1))


def test_run_sequence_threads_previous_pose_bitwise():
    model = fresh_model()
    seq = synth_sequence(n_frames=5, n_points=32, step_max=0.3, rot_max_deg=4.0,
                         noise_sigma=0.0, seed=5)
    res = run_sequence(model, seq.frames)
    assert (res.t_inits[0].q.as_array() == np.array([1.0, 0, 0, 0])).all()
    for k in range(1, len(res.t_inits)):
        prev = res.pair_poses[k - 1]
        cur = res.t_inits[k]
        assert (cur.q.as_array() == prev.q.as_array()).all()
        assert (cur.t == prev.t).all()


def test_run_sequence_world_poses_accumulate_inverses():
    model = fresh_model()
    frames = toy_frames(4)
    res = run_sequence(model, frames)
    W = RigidTransform.identity()
    for k, pose in enumerate(res.pair_poses):
        W = transform_compose(W, transform_inverse(pose))
        got = res.world_poses[k + 1]
        np.testing.assert_allclose(got.q.as_array(), W.q.as_array(), atol=1e-12)
        np.testing.assert_allclose(got.t, W.t, atol=1e-12)


def test_cache_toggle_never_changes_outputs():
    model = fresh_model()
    frames = toy_frames(5, seed=7)
    on = run_sequence(model, frames, use_cache=True)
    off = run_sequence(model, frames, use_cache=False)
    for a, b in zip(on.world_poses, off.world_poses):
        assert (a.q.as_array() == b.q.as_array()).all()
        assert (a.t == b.t).all()


def test_cache_build_counts_f_vs_2f_minus_2():
    frames = toy_frames(6, seed=8)
    on = run_sequence(fresh_model(), frames, use_cache=True)
    off = run_sequence(fresh_model(), frames, use_cache=False)
    assert on.pyramid_builds == len(frames)
    assert off.pyramid_builds == 2 * len(frames) - 2


def test_bypass_flags_stay_functional():
    model = fresh_model()
    frames = toy_frames(4, seed=9)
    for kw in (dict(use_temporal=False), dict(use_seq_init=False),
               dict(use_temporal=False, use_seq_init=False)):
        res = run_sequence(model, frames, **kw)
        assert len(res.world_poses) == len(frames)
        for T in res.pair_poses:
            assert np.isfinite(T.q.as_array()).all() and np.isfinite(T.t).all()


def test_no_seq_init_uses_identity_every_pair():
    model = fresh_model()
    frames = toy_frames(4, seed=10)
    res = run_sequence(model, frames, use_seq_init=False)
    for T in res.t_inits:
        assert (T.q.as_array() == np.array([1.0, 0, 0, 0])).all()
        assert (T.t == np.zeros(3)).all()


def test_equal_frames_with_untrained_model_give_identity_trajectory():
    model = fresh_model()
    pts = np.random.default_rng(11).uniform(-3, 3, size=(32, 3))
    frames = [Frame(("s", i), pts.copy()) for i in range(4)]
    res = run_sequence(model, frames)
    for W in res.world_poses:
        assert (W.q.as_array() == np.array([1.0, 0, 0, 0])).all()
        assert (W.t == np.zeros(3)).all()


def test_train_window_validates_lengths():
    model = fresh_model()
    frames = toy_frames(3)
    gts = [RigidTransform.identity()] * 3
    with pytest.raises(ValueError, match="3 frames"):
        train_window(model, frames[:2], gts)


def test_train_window_loss_finite_and_diagnosed():
    model = fresh_model()
    seq = synth_sequence(n_frames=3, n_points=32, step_max=0.3, rot_max_deg=4.0,
                         noise_sigma=0.0, seed=12)
    loss, diag = train_window(model, make_frames(seq.frames)[:3], seq.gt_world)
    assert np.isfinite(loss.data)
    assert diag.loss == float(loss.data)
    assert all(np.isfinite(v) for v in diag.t_errors + diag.r_errors_deg)


def test_train_window_gradients_reach_every_parameter_group(rng):
    # The zero-initialized pose output layers block upstream gradient on
    # the very first step; nudge them the way one optimizer step would.
    model = fresh_model()
    for head in [layer.pose for layer in model.layers] + [model.top_pose]:
        head.fc.weights[-1].data[:] = rng.normal(size=head.fc.weights[-1].data.shape) * 1e-3
    seq = synth_sequence(n_frames=3, n_points=32, step_max=0.3, rot_max_deg=4.0,
                         noise_sigma=0.01, seed=13)
    loss, _ = train_window(model, make_frames(seq.frames)[:3], seq.gt_world)
    model.store.zero_grad()
    loss.backward()
    grads = model.store.grads()
    groups = {"pyramid": 0.0, "costvol": 0.0, "refine": 0.0, "temporal": 0.0, "loss": 0.0}
    for name, g in grads.items():
        for prefix in groups:
            if name.startswith(prefix):
                groups[prefix] += float(np.abs(g).sum())
    for prefix, total in groups.items():
        assert total > 0, f"no gradient reached {prefix}"
