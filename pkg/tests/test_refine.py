import numpy as np
import pytest

from seqlo import autodiff as ad
from seqlo.config import toy
from seqlo.costvolume import AttentiveCostVolume
from seqlo.geometry import quat_normalize
from seqlo.nncore import ParamStore
from seqlo.pyramid import PyramidEncoder
from seqlo.refine import (GruUpdate, LevelOutput, MaskHead, PoseHead, RefineLayer,
                          hierarchical_refine)

E, D = 8, 5


def gru_inputs(rng, n=10):
    re = ad.constant(rng.normal(size=(n, E)))
    f = ad.constant(rng.normal(size=(n, D)))
    ce = ad.constant(rng.normal(size=(n, E)))
    return re, f, ce


def force_gate(mlp, logit):
    """Pin a single-layer gate MLP's pre-sigmoid output to a constant."""
    mlp.weights[0].data[:] = 0.0
    mlp.biases[0].data[:] = logit


def test_gate_low_passes_carried_embedding_through(rng):
    gru = GruUpdate(ParamStore(seed=1), "g", D, E)
    force_gate(gru.mlp_z, -50.0)
    re, f, ce = gru_inputs(rng)
    out = gru(re, f, ce)
    np.testing.assert_allclose(out.data, ce.data, atol=1e-6)


def test_gate_high_emits_candidate(rng):
    # With z pinned high the output must equal the candidate, which we
    # recompute here from the raw parameter arrays.
    store = ParamStore(seed=2)
    gru = GruUpdate(store, "g", D, E)
    force_gate(gru.mlp_z, 50.0)
    re, f, ce = gru_inputs(rng)
    out = gru(re, f, ce)

    x = np.concatenate([re.data, f.data], axis=1)
    cx = np.concatenate([ce.data, x], axis=1)
    r = 1.0 / (1.0 + np.exp(-(cx @ gru.mlp_r.weights[0].data + gru.mlp_r.biases[0].data)))
    cand = np.tanh(np.concatenate([r * ce.data, x], axis=1)
                   @ gru.mlp_e.weights[0].data + gru.mlp_e.biases[0].data)
    np.testing.assert_allclose(out.data, cand, atol=1e-6)


def test_gate_output_between_endpoints(rng):
    gru = GruUpdate(ParamStore(seed=3), "g", D, E)
    re, f, ce = gru_inputs(rng)
    out = gru(re, f, ce).data
    # convex mix of ce and a tanh value, so it can never leave this envelope
    assert (out <= np.maximum(ce.data, 1.0) + 1e-12).all()
    assert (out >= np.minimum(ce.data, -1.0) - 1e-12).all()


def test_mask_head_below_top_requires_upsampled_mask(rng):
    mask = MaskHead(ParamStore(seed=4), "m", D, E, with_upsampled=True)
    e = ad.constant(rng.normal(size=(6, E)))
    f = ad.constant(rng.normal(size=(6, D)))
    with pytest.raises(ValueError, match="upsampled"):
        mask(e, f)


def test_mask_head_top_level_runs_without_upsampled_mask(rng):
    mask = MaskHead(ParamStore(seed=5), "m", D, E, with_upsampled=False)
    e = ad.constant(rng.normal(size=(6, E)))
    f = ad.constant(rng.normal(size=(6, D)))
    out = mask(e, f)
    assert out.data.shape == (6, E)


def test_fresh_pose_head_is_exact_identity(rng):
    head = PoseHead(ParamStore(seed=6), "p", E, hidden=(16,), drop_rate=0.0)
    e = ad.constant(rng.normal(size=(12, E)))
    m = ad.constant(rng.normal(size=(12, E)))
    dq, dt = head(e, m)
    assert (dq.data == np.array([1.0, 0.0, 0.0, 0.0])).all()
    assert (dt.data == np.zeros(3)).all()


def test_zero_mask_logits_pool_uniformly(rng):
    head = PoseHead(ParamStore(seed=7), "p", E, hidden=(), drop_rate=0.0)
    m = ad.constant(np.zeros((9, E)))
    w = head.pooling_weights(m)
    np.testing.assert_allclose(w, np.full((9, E), 1.0 / 9.0), atol=1e-12)


def test_pooling_weights_two_point_hand_case():
    head = PoseHead(ParamStore(seed=8), "p", 1, hidden=(), drop_rate=0.0)
    m = ad.constant(np.array([[2.0], [0.0]]))
    w = head.pooling_weights(m)
    z = np.exp(2.0) + 1.0
    np.testing.assert_allclose(w, [[np.exp(2.0) / z], [1.0 / z]], atol=1e-12)


def make_pyramids(seed=0):
    cfg = toy()
    store = ParamStore(seed=11)
    enc = PyramidEncoder(cfg, store)
    rng = np.random.default_rng(seed)
    pa = enc.build(rng.uniform(-3, 3, size=(32, 3)))
    pb = enc.build(rng.uniform(-3, 3, size=(32, 3)))
    return cfg, store, pa, pb


def level_output(cfg, pyr, level, rng):
    n = cfg.levels[level]
    q = quat_normalize(rng.normal(size=4))
    return LevelOutput(level=level, q=ad.constant(q),
                       t=ad.constant(rng.normal(size=3) * 0.1),
                       embedding=ad.constant(rng.normal(size=(n, cfg.embed_width))),
                       mask=ad.constant(rng.normal(size=(n, cfg.embed_width))))


def test_untrained_refine_layer_keeps_incoming_pose_bitwise(rng):
    cfg, store, pa, pb = make_pyramids()
    cv = AttentiveCostVolume(store, "cv1", cfg.feature_widths[1], cfg.embed_width, cfg.k_cv)
    layer = RefineLayer(store, cfg, level=1, cost_volume=cv)
    upper = level_output(cfg, pa, 2, rng)
    out = layer(upper, pa, pb)
    assert (out.q.data == upper.q.data).all()
    assert (out.t.data == upper.t.data).all()


def test_hierarchical_refine_orders_finest_first(rng):
    cfg, store, pa, pb = make_pyramids()
    layers = []
    for lvl in range(3):
        cv = AttentiveCostVolume(store, f"cv{lvl}", cfg.feature_widths[lvl],
                                 cfg.embed_width, cfg.k_cv)
        layers.append(RefineLayer(store, cfg, level=lvl, cost_volume=cv))
    coarsest = level_output(cfg, pa, 3, rng)
    outs = hierarchical_refine(coarsest, layers, pa, pb)
    assert [o.level for o in outs] == [0, 1, 2, 3]
    assert outs[3] is coarsest
    for o, n in zip(outs, cfg.levels):
        assert o.embedding.data.shape == (n, cfg.embed_width)


def test_untrained_stack_propagates_identity_residuals_everywhere(rng):
    cfg, store, pa, pb = make_pyramids()
    layers = []
    for lvl in range(3):
        cv = AttentiveCostVolume(store, f"cv{lvl}", cfg.feature_widths[lvl],
                                 cfg.embed_width, cfg.k_cv)
        layers.append(RefineLayer(store, cfg, level=lvl, cost_volume=cv))
    coarsest = level_output(cfg, pa, 3, rng)
    outs = hierarchical_refine(coarsest, layers, pa, pb)
    for o in outs:
        assert (o.q.data == coarsest.q.data).all()
        assert (o.t.data == coarsest.t.data).all()


def test_gru_gradient_reaches_all_inputs(rng):
    gru = GruUpdate(ParamStore(seed=9), "g", D, E)
    re = ad.parameter(rng.normal(size=(4, E)))
    f = ad.parameter(rng.normal(size=(4, D)))
    ce = ad.parameter(rng.normal(size=(4, E)))
    out = gru(re, f, ce)
    ad.tsum(out * out).backward()
    for leaf in (re, f, ce):
        assert leaf.grad is not None and np.abs(leaf.grad).sum() > 0
