import math

import numpy as np
import pytest

from oracles import scan_loop
from roma.errors import ConfigError, ShapeError
from roma.model import (
    ModelConfig, RoMANetwork, cluster_context_matrix, cluster_members, mamba_block, preset, ssm_scan,
    strict_past_mask,
)
from roma.model.attention import causal_cross_attention, init_attention
from roma.numerics import ParamRegistry, Tape, Tensor, backward, finite_difference_check, mean_all, no_tape, square
from roma.vision import RegionBox, RotationRecord, covered_patches

TINY = ModelConfig(width=8, depth=1, decoder_depth=1, heads=2, patch_size=4, image_side=16, state_dim=3, s_mult=2)


def random_scan_inputs(rng, b, k, e, n):
    u = rng.normal(size=(b, k, e))
    delta = rng.uniform(0.01, 1.0, (b, k, e))
    B = rng.normal(size=(b, k, n))
    C = rng.normal(size=(b, k, n))
    A = -rng.uniform(0.1, 2.0, (e, n))
    D = rng.normal(size=e)
    return u, delta, B, C, A, D


def test_scan_matches_loop_over_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        b, k, e, n = (int(rng.integers(1, 3)), int(rng.integers(1, 65)), int(rng.integers(1, 5)),
                      int(rng.integers(1, 5)))
        args = random_scan_inputs(rng, b, k, e, n)
        got = ssm_scan(*(Tensor(a) for a in args)).data
        np.testing.assert_allclose(got, scan_loop(*args), rtol=0, atol=1e-12)


def test_scan_single_step_and_zero_input():
    rng = np.random.default_rng(1)
    u, delta, B, C, A, D = random_scan_inputs(rng, 1, 1, 2, 3)
    y = ssm_scan(*(Tensor(a) for a in (u, delta, B, C, A, D))).data
    expect = (C[0, 0] * delta[0, 0][:, None] * B[0, 0] * u[0, 0][:, None]).sum(axis=1) + D * u[0, 0]
    np.testing.assert_allclose(y[0, 0], expect, atol=1e-14)
    zero = ssm_scan(*(Tensor(a) for a in (np.zeros_like(u), delta, B, C, A, D))).data
    assert not zero.any()


def test_scan_prefix_is_independent_of_the_future():
    rng = np.random.default_rng(2)
    args = list(random_scan_inputs(rng, 1, 20, 3, 4))
    y1 = ssm_scan(*(Tensor(a) for a in args)).data
    args[0] = args[0].copy()
    args[0][:, 12:] += 5.0
    y2 = ssm_scan(*(Tensor(a) for a in args)).data
    np.testing.assert_array_equal(y1[:, :12], y2[:, :12])
    assert np.abs(y1[:, 12:] - y2[:, 12:]).max() > 0


def test_scan_rejects_mismatched_shapes():
    rng = np.random.default_rng(3)
    u, delta, B, C, A, D = random_scan_inputs(rng, 1, 4, 2, 3)
    with pytest.raises(ShapeError):
        ssm_scan(Tensor(u), Tensor(delta), Tensor(B), Tensor(C), Tensor(A[:, :2]), Tensor(D))


def test_scan_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    P = ParamRegistry()
    for name, arr in zip("u d B C A D".split(), random_scan_inputs(rng, 2, 6, 2, 3)):
        P.add(name, arr)
    rep = finite_difference_check(lambda: mean_all(square(ssm_scan(*(P[n] for n in "u d B C A D".split())))), P)
    assert rep.max_rel < 1e-6


def test_fresh_block_is_the_identity():
    from roma.model.ssm import init_mamba_block
    rng = np.random.default_rng(5)
    P = ParamRegistry()
    init_mamba_block(P, "b", 8, 16, 4, 2, rng)
    x = Tensor(rng.normal(size=(2, 10, 8)))
    np.testing.assert_array_equal(mamba_block(x, P, "b").data, x.data)


def test_strict_past_mask():
    m = strict_past_mask(4)
    np.testing.assert_array_equal(m, np.tril(np.ones((4, 4), dtype=bool), -1))


def test_cross_attention_first_query_reads_nothing():
    rng = np.random.default_rng(6)
    P = ParamRegistry()
    init_attention(P, "a", 8, rng, out_proj=False)
    q = Tensor(rng.normal(size=(1, 5, 8)))
    kv = Tensor(rng.normal(size=(1, 5, 8)))
    out = causal_cross_attention(q, kv, P, "a", 2, True).data
    assert not out[0, 0].any()
    kv2 = kv.data.copy()
    kv2[0, 3:] += 1.0
    out2 = causal_cross_attention(q, Tensor(kv2), P, "a", 2, True).data
    np.testing.assert_array_equal(out[0, :4], out2[0, :4])


def test_cluster_geometry():
    c = ModelConfig()
    members = cluster_members(c)
    assert (c.grid_side, c.n_clusters, len(members)) == (12, 4, 4)
    assert sorted(t for m in members for t in m) == list(range(144))
    assert members[1][0] == 6
    w = cluster_context_matrix(c)
    assert w.shape == (3, 144)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    for n in range(1, 4):
        # context for cluster n only pools tokens before its first token
        assert np.flatnonzero(w[n - 1]).max() < min(members[n])


def test_forward_shapes():
    net = RoMANetwork(TINY, seed=0)
    imgs = np.random.default_rng(7).random((3, 16, 16, 3))
    with no_tape():
        out = net.forward(imgs)
    assert out.token_preds.shape == (3, 15, 48)
    assert out.cluster_preds.shape == (3, 3, 192)
    assert out.features.shape == (3, 16, 8)


def test_network_is_causal_token_by_token():
    net = RoMANetwork(TINY, seed=1)
    rng = np.random.default_rng(8)
    img = rng.random((1, 16, 16, 3))
    with no_tape():
        base = net.forward(img)
    for j in range(16):
        r, c = divmod(j, 4)
        img2 = img.copy()
        img2[0, r * 4:(r + 1) * 4, c * 4:(c + 1) * 4] = rng.random((4, 4, 3))
        with no_tape():
            out = net.forward(img2)
        # token prediction row i predicts token i + 1
        np.testing.assert_array_equal(out.token_preds.data[0, :j], base.token_preds.data[0, :j])
        np.testing.assert_array_equal(out.features.data[0, :j], base.features.data[0, :j])


def test_angle_embedding_touches_only_covered_tokens():
    net = RoMANetwork(TINY, seed=2)
    net.params["angle.w"].data = np.ones((2, 8))
    tokens = Tensor(np.zeros((1, 16, 8)))
    box = RegionBox(0, 0, 8)
    rec = RotationRecord(box=box, theta=math.pi / 3, covered_patches=covered_patches(box, 4, 4), applied=True)
    out = net.angle_embedding(tokens, [rec]).data[0]
    shift = math.cos(math.pi / 3) + math.sin(math.pi / 3)
    for k in range(16):
        expect = shift if k in rec.covered_patches else 0.0
        np.testing.assert_allclose(out[k], expect, atol=1e-15)


def test_network_gradients_match_finite_differences():
    net = RoMANetwork(TINY.with_(lam=0.5), seed=3)
    rng = np.random.default_rng(9)
    for _, p in net.params.items():
        p.data = p.data + rng.normal(0.0, 0.02, p.shape)
    imgs = rng.random((2, 16, 16, 3))

    def f():
        from roma.pretrain.trainer import Pretrainer
        return Pretrainer(net).objective(imgs)[0]

    rep = finite_difference_check(f, net.params)
    assert rep.max_rel < 1e-4, rep.failing(1e-4)


def test_preset_errors():
    with pytest.raises(ConfigError, match="unknown model preset"):
        preset("huge")
    with pytest.raises(ConfigError):
        ModelConfig(image_side=100)
    with pytest.raises(ConfigError):
        ModelConfig(s_mult=5)
    assert preset("desk", lam=0.0).lam == 0.0


def test_patch_embed_rejects_wrong_grid():
    net = RoMANetwork(TINY)
    with pytest.raises(ShapeError):
        net.patch_embed(np.zeros((1, 9, 48)))


def test_backward_reaches_every_parameter():
    net = RoMANetwork(TINY.with_(lam=0.1), seed=4)
    rng = np.random.default_rng(10)
    for _, p in net.params.items():
        p.data = p.data + rng.normal(0.0, 0.02, p.shape)
    from roma.pretrain.trainer import Pretrainer
    with Tape() as tape:
        total, _ = Pretrainer(net).objective(rng.random((2, 16, 16, 3)))
    backward(total, tape, net.params)
    dead = [n for n, p in net.params.items() if not np.any(p.grad) and n != "angle.w"]
    assert dead == []
