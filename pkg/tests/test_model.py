import numpy as np
import pytest

from seqlo.config import toy
from seqlo.data import synth_sequence
from seqlo.model import OdometryModel
from seqlo.pyramid import PyramidCache
from seqlo.sequencer import estimate_pair
from seqlo.trainer import make_frames, train


def trained_model(steps=3):
    seq = synth_sequence(5, 32, 0.3, 3.0, 0.005, seed=11)
    model = OdometryModel(toy())
    train(model, make_frames(seq.frames), seq.gt_world, max_steps=steps)
    return model


def test_save_load_round_trips_parameters_at_f32(tmp_path):
    model = trained_model()
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    loaded, ckpt = OdometryModel.load(path)
    live = model.store.state_arrays()[0]
    back = loaded.store.state_arrays()[0]
    assert set(back) == set(live)
    for name in live:
        want = live[name].data.astype(np.float32).astype(np.float64)
        np.testing.assert_array_equal(back[name].data, want, err_msg=name)
    assert loaded.store.adam_t == model.store.adam_t == ckpt.adam_t


def test_load_preserves_config_and_seed(tmp_path):
    model = OdometryModel(toy(), seed=123)
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    loaded, ckpt = OdometryModel.load(path)
    assert loaded.cfg == toy()
    assert loaded.store.seed == 123
    assert ckpt.seed == 123


def test_save_without_meta_loads_empty_dict(tmp_path):
    model = OdometryModel(toy())
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    _, ckpt = OdometryModel.load(path)
    assert ckpt.meta == {}


def test_meta_survives_round_trip(tmp_path):
    model = OdometryModel(toy())
    path = str(tmp_path / "m.ckpt")
    model.save(path, meta={"epoch": 7, "step": 21})
    _, ckpt = OdometryModel.load(path)
    assert ckpt.meta == {"epoch": 7, "step": 21}


def test_two_loads_agree_and_track_the_original(tmp_path):
    # Reloading is only float32-faithful to the live model, but any two
    # loads of the same file must agree exactly.
    model = trained_model()
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    first, _ = OdometryModel.load(path)
    second, _ = OdometryModel.load(path)
    rng = np.random.default_rng(3)
    a = make_frames([rng.uniform(-4, 4, size=(32, 3)) for _ in range(2)], seq_id="pair")
    outs = []
    for m in (model, first, second):
        est = estimate_pair(m, a[0], a[1], None, None, PyramidCache(2))
        outs.append((est.pose.q.as_array(), est.pose.t))
    np.testing.assert_array_equal(outs[1][0], outs[2][0])
    np.testing.assert_array_equal(outs[1][1], outs[2][1])
    np.testing.assert_allclose(outs[0][0], outs[1][0], atol=1e-5)
    np.testing.assert_allclose(outs[0][1], outs[1][1], atol=1e-5)


def test_seed_override_changes_initialization():
    base = OdometryModel(toy()).store.state_arrays()[0]
    other = OdometryModel(toy(), seed=123).store.state_arrays()[0]
    assert any((base[n].data != other[n].data).any() for n in base)


def test_check_pyramid_rejects_wrong_level_count():
    model = OdometryModel(toy())
    pyramid = model.encoder.build(np.random.default_rng(0).uniform(-4, 4, size=(32, 3)))
    three = toy().with_overrides(levels=(16, 8, 4), feature_widths=(4, 4, 6),
                                 alphas=(1.6, 0.8, 0.4))
    with pytest.raises(ValueError, match="4 levels, model expects 3"):
        OdometryModel(three).check_pyramid(pyramid)


def test_check_pyramid_rejects_wrong_feature_width():
    model = OdometryModel(toy())
    pyramid = model.encoder.build(np.random.default_rng(0).uniform(-4, 4, size=(32, 3)))
    wide_top = toy().with_overrides(feature_widths=(4, 4, 6, 16))
    with pytest.raises(ValueError, match="expected 2 x 16"):
        OdometryModel(wide_top).check_pyramid(pyramid)


def test_check_pyramid_rejects_wrong_point_count():
    model = OdometryModel(toy())
    pyramid = model.encoder.build(np.random.default_rng(0).uniform(-4, 4, size=(32, 3)))
    bigger_top = toy().with_overrides(levels=(16, 8, 4, 3))
    with pytest.raises(ValueError, match="expected 3 x 8"):
        OdometryModel(bigger_top).check_pyramid(pyramid)


def test_check_pyramid_accepts_own_output():
    model = OdometryModel(toy())
    pyramid = model.encoder.build(np.random.default_rng(0).uniform(-4, 4, size=(32, 3)))
    model.check_pyramid(pyramid)
