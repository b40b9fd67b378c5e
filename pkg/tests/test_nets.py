import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeswap.imagekit import DEFAULT_BOX, Domain, FaceImage, eye_region_pixels
from eyeswap.nets import (NetConfig, count_parameters, init_bundle, load_checkpoint, save_checkpoint)

from oracles import gradient_check

SMALL = NetConfig(resolution=32, base_width=8, mlp_dim=32)


@pytest.fixture(scope="module")
def nets():
    return init_bundle(SMALL, seed=0)


def rand_batch(n=2, res=32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, res, res, generator=g) * 2 - 1


def test_config_invariants():
    with pytest.raises(ValueError):
        NetConfig(resolution=30)
    with pytest.raises(ValueError):
        NetConfig(resolution=64, eye_code_dim=0)
    with pytest.raises(ValueError):
        NetConfig(resolution=16, disc_scales=3)
    assert NetConfig(resolution=224).disc_scales == 3
    assert NetConfig(resolution=64).disc_scales == 2
    assert NetConfig(resolution=64).appearance_channels == 256


def test_appearance_code_shape_64():
    bundle, _ = init_bundle(NetConfig(resolution=64, base_width=64), seed=0)
    with torch.no_grad():
        f = bundle.encode_appearance(rand_batch(1, 64))
    assert f.shape == (1, 256, 16, 16)


def test_appearance_invariant_to_eye_pixels(nets):
    bundle, _ = nets
    x = rand_batch(2, seed=1)
    y = x.clone()
    r0, c0, r1, c1 = eye_region_pixels(DEFAULT_BOX, 32, 32)
    y[..., r0:r1, c0:c1] = rand_batch(2, seed=2)[..., r0:r1, c0:c1]
    with torch.no_grad():
        assert torch.equal(bundle.encode_appearance(x), bundle.encode_appearance(y))
        assert torch.equal(bundle.encode_appearance(x), bundle.encode_appearance(x))


def test_appearance_encoder_shared(nets):
    bundle, _ = nets
    assert bundle.appearance_encoder(Domain.A) is bundle.appearance_encoder(Domain.B)
    a_ptrs = {p.data_ptr() for p in bundle.appearance_encoder("A").parameters()}
    b_ptrs = {p.data_ptr() for p in bundle.appearance_encoder("B").parameters()}
    assert a_ptrs == b_ptrs


def test_eye_encoders_independent(nets):
    bundle, _ = nets
    a_ptrs = {p.data_ptr() for p in bundle.E_e_A.parameters()}
    b_ptrs = {p.data_ptr() for p in bundle.E_e_B.parameters()}
    assert a_ptrs.isdisjoint(b_ptrs)
    assert [p.shape for p in bundle.E_e_A.parameters()] == [p.shape for p in bundle.E_e_B.parameters()]
    x = rand_batch(1, seed=3)
    with torch.no_grad():
        ea, eb = bundle.encode_eye(x, "A"), bundle.encode_eye(x, "B")
    assert ea.shape == (1, SMALL.eye_code_dim)
    assert not torch.equal(ea, eb)


def test_shared_encoder_mutation_visible_to_both_domains():
    bundle, _ = init_bundle(SMALL, seed=4)
    x = rand_batch(1, seed=4)
    with torch.no_grad():
        before = bundle.encode_appearance(x, "B").clone()
        for p in bundle.appearance_encoder("A").parameters():
            p.add_(0.01)
        after = bundle.encode_appearance(x, "B")
    assert not torch.equal(before, after)


def test_decode_shape_and_range(nets):
    bundle, _ = nets
    x = rand_batch(2, seed=5)
    with torch.no_grad():
        f = bundle.encode_appearance(x)
        for domain in ("A", "B"):
            y = bundle.decode(f, bundle.encode_eye(x, domain), domain, x)
            assert y.shape == x.shape
            assert y.min() >= -1 and y.max() <= 1


@settings(max_examples=15, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 1000))
def test_decode_range_for_arbitrary_codes(scale, seed):
    bundle, _ = init_bundle(NetConfig(resolution=16, base_width=4, mlp_dim=8), seed=0)
    g = torch.Generator().manual_seed(seed)
    f = torch.randn(1, 16, 4, 4, generator=g) * scale
    e = torch.randn(1, 8, generator=g) * scale
    src = torch.rand(1, 3, 16, 16, generator=g) * 2 - 1
    with torch.no_grad():
        y = bundle.decode(f, e, "A", src)
    assert torch.isfinite(y).all() and y.min() >= -1 and y.max() <= 1


def test_decode_rejects_mismatched_codes(nets):
    bundle, _ = nets
    x = rand_batch(1)
    f = bundle.encode_appearance(x)
    with pytest.raises(ValueError):
        bundle.decode(f, torch.zeros(1, SMALL.eye_code_dim + 1), "A", x)
    with pytest.raises(ValueError):
        bundle.decode(f[..., :4, :4], torch.zeros(1, SMALL.eye_code_dim), "A", x)


def test_resolution_mismatch_rejected(nets):
    bundle, discs = nets
    with pytest.raises(ValueError):
        bundle.encode_appearance(rand_batch(1, 64))
    with pytest.raises(ValueError):
        bundle.encode_eye(rand_batch(1, 64), "A")
    with pytest.raises(ValueError):
        discs.discriminate(rand_batch(1, 64), "A")


def test_eye_code_gradient_live():
    # finite-difference probe on one coordinate of e
    bundle, _ = init_bundle(NetConfig(resolution=16, base_width=8, eye_code_dim=4), seed=1, dtype=torch.float64)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
    f = bundle.encode_appearance(x).detach()
    e = bundle.encode_eye(x, "A").detach()
    h = 1e-5
    ep, em = e.clone(), e.clone()
    ep[0, 0] += h
    em[0, 0] -= h
    with torch.no_grad():
        diff = (bundle.decode(f, ep, "A", x) - bundle.decode(f, em, "A", x)) / (2 * h)
    assert diff.abs().max() > 1e-6


def test_discriminator_maps_64():
    _, discs = init_bundle(NetConfig(resolution=64, base_width=8), seed=0)
    with torch.no_grad():
        maps = discs.discriminate(rand_batch(2, 64), "A")
    assert [tuple(m.shape) for m in maps] == [(2, 1, 8, 8), (2, 1, 4, 4)]
    # no squashing: LSGAN regresses raw scores
    assert any((m.abs() > 1).any() or (m < 0).any() for m in maps)


def test_discriminators_deterministic_and_independent(nets):
    _, discs = nets
    x = rand_batch(2, seed=7)
    with torch.no_grad():
        m1 = discs.discriminate(x, "A")
        m2 = discs.discriminate(x, "A")
        mb = discs.discriminate(x, "B")
    assert all(torch.equal(u, v) for u, v in zip(m1, m2))
    assert not all(torch.equal(u, v) for u, v in zip(m1, mb))


def test_init_is_seeded():
    b1, d1 = init_bundle(SMALL, seed=11)
    b2, d2 = init_bundle(SMALL, seed=11)
    b3, _ = init_bundle(SMALL, seed=12)
    for (n1, p1), (_, p2) in zip(b1.state_dict().items(), b2.state_dict().items()):
        assert torch.equal(p1, p2), n1
    for p1, p2 in zip(d1.parameters(), d2.parameters()):
        assert torch.equal(p1, p2)
    assert any(not torch.equal(p1, p3) for p1, p3 in zip(b1.parameters(), b3.parameters()))
    assert count_parameters(b1) > 0


@pytest.mark.parametrize("res", [32, 64, 128])
def test_shape_algebra(res):
    cfg = NetConfig(resolution=res, base_width=4, mlp_dim=8)
    bundle, discs = init_bundle(cfg, seed=0)
    x = rand_batch(1, res)
    with torch.no_grad():
        f = bundle.encode_appearance(x)
        assert f.shape[1:] == (cfg.appearance_channels, res // 4, res // 4)
        assert bundle.decode(f, bundle.encode_eye(x, "B"), "B", x).shape == x.shape
        maps = discs.discriminate(x, "B")
    assert len(maps) == cfg.disc_scales
    for s, m in enumerate(maps):
        side = res // 2 ** s // 2 ** cfg.disc_layers
        assert m.shape == (1, 1, side, side)


def test_checkpoint_round_trip(tmp_path, nets):
    bundle, discs = nets
    path = save_checkpoint(tmp_path / "c.ckpt", bundle, discs, {"note": 1})
    b2, d2, extra = load_checkpoint(path, SMALL)
    assert extra == {"note": 1}
    for (k, v), (_, w) in zip(bundle.state_dict().items(), b2.state_dict().items()):
        assert torch.equal(v, w), k
    with pytest.raises(ValueError):
        load_checkpoint(path, NetConfig(resolution=32, base_width=16, mlp_dim=32))


def test_face_image_input_accepted(nets):
    bundle, _ = nets
    img = FaceImage(rand_batch(1)[0], Domain.A)
    with torch.no_grad():
        assert bundle.encode_appearance(img).shape[0] == 1


def test_gradient_check_below_kink_scale():
    # a step well under the distance to the nearest LeakyReLU kink isolates autograd correctness
    rows = gradient_check(n_params=20, step=1e-5, seed=0)
    worst = max(r[-1] for r in rows)
    assert worst < 1e-3, rows
