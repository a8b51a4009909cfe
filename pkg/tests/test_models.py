import numpy as np
import pytest

from adaroute import models, numeric
from adaroute.ctc import InfeasibleAlignmentError
from adaroute.numeric import Tensor


# ---------------------------------------------------------------------------
# resize


def test_resize_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 8, 8))
    out = models.resize(x, 8)
    assert np.array_equal(out, x)
    out[0, 0, 0] = 99.0
    assert x[0, 0, 0] != 99.0  # a copy, not a view


def test_resize_preserves_constants():
    for eta_in, eta_out in [(32, 12), (32, 20), (16, 8), (10, 7)]:
        x = np.full((2, eta_in, eta_in), 0.37)
        assert np.allclose(models.resize(x, eta_out), 0.37)


def test_resize_preserves_mean():
    """Area averaging is exact: the total mass of each frame is unchanged."""
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 32, 32))
    for eta_out in (12, 16, 20, 31):
        out = models.resize(x, eta_out)
        assert np.allclose(out.mean(axis=(1, 2)), x.mean(axis=(1, 2)), atol=1e-12)


def test_resize_halving_is_block_mean():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 8))
    out = models.resize(x, 4)
    want = x.reshape(4, 2, 4, 2).mean(axis=(1, 3))
    assert np.allclose(out, want)


def test_resize_cancels_pixel_checkerboard():
    """2x area averaging nulls a +/-1 checkerboard exactly."""
    i, j = np.indices((16, 16))
    board = np.where((i + j) % 2 == 0, 1.0, -1.0)
    out = models.resize(board + 0.5, 8)
    assert np.allclose(out, 0.5, atol=1e-12)


def test_resize_refuses_upsample_and_non_square():
    with pytest.raises(ValueError):
        models.resize(np.zeros((4, 4)), 8)
    with pytest.raises(ValueError):
        models.resize(np.zeros((4, 6)), 2)


# ---------------------------------------------------------------------------
# recurrent cells


def _params():
    return {}


def test_gru_shapes_and_gradients():
    rng = np.random.default_rng(3)
    params = _params()
    cell = models.GRUCell(rng, 4, 5, params, "g")
    x = Tensor(rng.normal(size=(6, 4)))
    outs, final = cell.run(x)
    assert outs.data.shape == (6, 5)
    assert final.data.shape == (1, 5)
    assert np.allclose(outs.data[-1], final.data[0])
    loss = numeric.reduce_sum(outs * outs)
    loss.backward()
    assert all(p.grad is not None for p in params.values())


def test_gru_reverse_direction():
    rng = np.random.default_rng(4)
    cell = models.GRUCell(rng, 3, 4, _params(), "g")
    x = rng.normal(size=(5, 3))
    fwd, _ = cell.run(Tensor(x))
    rev, _ = cell.run(Tensor(x[::-1].copy()), reverse=False)
    rev2, _ = cell.run(Tensor(x), reverse=True)
    assert np.allclose(rev.data[::-1], rev2.data)
    assert not np.allclose(fwd.data, rev2.data)


def test_bigru_output_shape():
    rng = np.random.default_rng(5)
    net = models.BiGRU(rng, 3, 4, _params(), "b")
    outs, final = net.run(Tensor(rng.normal(size=(7, 3))))
    assert outs.data.shape == (7, 8)
    assert final.data.shape == (1, 8)


def test_gru_flops_count():
    cell = models.GRUCell(np.random.default_rng(0), 4, 5, _params(), "g")
    # three gates, each a (n_in + n_hidden) x n_hidden matmul
    assert cell.flops_per_step() == 3 * (4 + 5) * 5


# ---------------------------------------------------------------------------
# extractors


def test_extractor_shapes_and_resolution_routing():
    rng = np.random.default_rng(6)
    ext = models.FrameExtractor(rng, [8, 16], hidden=6, out_dim=5, params=_params(), name="f")
    out8 = ext.forward(rng.normal(size=(3, 8, 8)))
    out16 = ext.forward(rng.normal(size=(3, 16, 16)))
    assert out8.data.shape == (3, 5)
    assert out16.data.shape == (3, 5)
    with pytest.raises(ValueError):
        ext.forward(rng.normal(size=(3, 12, 12)))


def test_extractor_flops():
    ext = models.FrameExtractor(
        np.random.default_rng(0), [8, 16], hidden=6, out_dim=5, params=_params(), name="f"
    )
    assert ext.flops_per_frame(8) == 8 * 8 * 6 + 6 * 5
    assert ext.flops_per_frame(16) == 16 * 16 * 6 + 6 * 5
    with pytest.raises(ValueError):
        ext.flops_per_frame(12)


# ---------------------------------------------------------------------------
# recognition head


def test_head_output_shape_and_normalization():
    rng = np.random.default_rng(7)
    head = models.RecognitionHead(rng, 5, 6, 4, 3, _params(), "h")
    for t in (4, 9, 16):
        out = head.forward(Tensor(rng.normal(size=(t, 5))))
        assert out.data.shape == (head.out_len(t), 3)
        assert np.allclose(np.exp(out.data).sum(axis=-1), 1.0, atol=1e-9)


def test_head_out_len():
    head = models.RecognitionHead(np.random.default_rng(0), 5, 6, 4, 3, _params(), "h")
    assert [head.out_len(t) for t in (4, 5, 7, 8, 13)] == [1, 1, 1, 2, 3]


def test_head_rejects_short_input():
    rng = np.random.default_rng(8)
    head = models.RecognitionHead(rng, 5, 6, 4, 3, _params(), "h")
    with pytest.raises(InfeasibleAlignmentError):
        head.forward(Tensor(rng.normal(size=(3, 5))))


def test_head_flops_formula():
    head = models.RecognitionHead(np.random.default_rng(0), 5, 6, 4, 3, _params(), "h")
    t = 12
    want = (
        t * 5 * 5 * 6              # first conv, kernel 5
        + (t // 2) * 5 * 6 * 6     # second conv after one pooling
        + 3 * (2 * 3 * (6 + 4) * 4)  # recurrent: 3 steps, two directions
        + 3 * 2 * 4 * 3            # classifier
    )
    assert head.flops(t) == want


def test_head_gradients_reach_all_parameters():
    rng = np.random.default_rng(9)
    params = _params()
    head = models.RecognitionHead(rng, 5, 6, 4, 3, params, "h")
    out = head.forward(numeric.parameter(rng.normal(size=(8, 5))))
    numeric.reduce_sum(out * out).backward()
    assert all(p.grad is not None for p in params.values())


# ---------------------------------------------------------------------------
# policy


def test_policy_logit_shape_and_gradient():
    rng = np.random.default_rng(10)
    params = _params()
    net = models.PolicyNet(rng, 4, 6, n_candidates=7, params=params)
    z = net.decide(numeric.parameter(rng.normal(size=(9, 4))))
    assert z.data.shape == (7,)
    numeric.reduce_sum(z * z).backward()
    assert all(p.grad is not None for p in params.values())


# ---------------------------------------------------------------------------
# bundle


def _tiny_cfg():
    return {
        "resolutions": [8, 16],
        "feature_dim": 5,
        "global_hidden": 4,
        "local_hidden": 6,
        "global_head_conv": 4,
        "global_head_rnn": 4,
        "local_head_conv": 6,
        "local_head_rnn": 6,
        "policy_hidden": 4,
        "vocab_size": 3,
    }


def test_bundle_wiring():
    from adaroute import candidates

    bundle = models.ModelBundle(_tiny_cfg(), n_candidates=4, rng=np.random.default_rng(11))
    frames = np.random.default_rng(12).normal(size=(10, 16, 16))
    xg = bundle.extract_global(frames)
    assert xg.data.shape == (10, 5)
    z = bundle.decide(xg)
    assert z.data.shape == (4,)
    cand = candidates.Candidate(interval=2, offset=0, resolution=16)
    xl = bundle.extract_local(frames, cand, candidates.select_frames(10, cand))
    assert xl.data.shape == (5, 5)
    pg = bundle.e_g.forward(xg)
    assert pg.data.shape == (2, 4)  # 3 glosses + blank, T=10 pooled twice


def test_bundle_parameter_names_unique_and_deterministic():
    cfg = _tiny_cfg()
    a = models.ModelBundle(cfg, 4, np.random.default_rng(1))
    b = models.ModelBundle(cfg, 4, np.random.default_rng(1))
    assert sorted(a.params) == sorted(b.params)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    c = models.ModelBundle(cfg, 4, np.random.default_rng(2))
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_bundle_cost_hooks_positive_and_ordered():
    bundle = models.ModelBundle(_tiny_cfg(), 4, np.random.default_rng(3))
    assert 0 < bundle.global_flops_per_frame() < bundle.local_flops_per_frame(16)
    assert bundle.global_head_flops(32) < bundle.local_head_flops(32)


def test_zero_grad_clears():
    bundle = models.ModelBundle(_tiny_cfg(), 4, np.random.default_rng(4))
    frames = np.random.default_rng(5).normal(size=(8, 16, 16))
    out = bundle.e_g.forward(bundle.extract_global(frames))
    numeric.reduce_sum(out).backward()
    assert any(p.grad is not None for p in bundle.params.values())
    bundle.zero_grad()
    assert all(p.grad is None for p in bundle.params.values())
