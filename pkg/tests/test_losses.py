
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeswap.imagekit import DEFAULT_BOX, eye_region_pixels
from eyeswap.losses import (LossWeights, code_recon_loss, cycle_loss, eye_recon_loss, face_recon_loss, l1_mean,
                            lsgan_disc_loss, lsgan_gen_loss, r1_penalty, total_losses)


def loop_l1(a, b):
    """Scalar reference: walk every element."""
    a, b = a.tolist(), b.tolist()

    def flat(x):
        if isinstance(x, list):
            for y in x:
                yield from flat(y)
        else:
            yield x

    fa, fb = list(flat(a)), list(flat(b))
    total = 0.0
    for u, v in zip(fa, fb):
        total += abs(u - v)
    return total / len(fa)


def loop_eye_crop(x):
    c, h, w = x.shape
    r0, c0, r1, c1 = eye_region_pixels(DEFAULT_BOX, h, w)
    return torch.tensor([[[float(x[k, i, j]) for j in range(c0, c1)] for i in range(r0, r1)] for k in range(c)],
                        dtype=torch.float64)


def rand(shape, seed):
    return torch.rand(shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * 2 - 1


def test_l1_mean_examples():
    t = rand((2, 2), 0)
    assert float(l1_mean(t, t)) == 0
    assert float(l1_mean(torch.zeros(2, 2), torch.ones(2, 2))) == 1
    assert float(l1_mean(torch.tensor([1.0, -1.0]), torch.tensor([0.0, 1.0]))) == 1.5
    with pytest.raises(ValueError):
        l1_mean(torch.zeros(2), torch.zeros(3))


def test_face_recon_examples():
    x, y = rand((3, 16, 16), 1), rand((3, 16, 16), 2)
    assert float(face_recon_loss(x, x, y, y)) == 0
    assert float(face_recon_loss(x, x + 0.1, y, y)) == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_face_and_cycle_match_loop(seed):
    x, xr, y, yr = (rand((3, 4, 4), seed * 4 + k) for k in range(4))
    expected = loop_l1(xr, x) + loop_l1(yr, y)
    assert abs(float(face_recon_loss(x, xr, y, yr)) - expected) < 1e-6
    assert abs(float(cycle_loss(x, xr, y, yr)) - expected) < 1e-6


def test_cycle_examples():
    x, y = rand((3, 8, 8), 3), rand((3, 8, 8), 4)
    assert float(cycle_loss(x, x, y, y)) == 0
    assert float(cycle_loss(x, x + 0.2, y, y)) == pytest.approx(0.2, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_eye_recon_matches_crop_loop(seed):
    x, xr, y, yr = (rand((3, 16, 16), seed * 4 + k) for k in range(4))
    expected = loop_l1(loop_eye_crop(xr), loop_eye_crop(x)) + loop_l1(loop_eye_crop(yr), loop_eye_crop(y))
    assert abs(float(eye_recon_loss(x, xr, y, yr)) - expected) < 1e-6


def test_eye_recon_ignores_outside():
    x, y = rand((3, 32, 32), 5), rand((3, 32, 32), 6)
    noise = rand((3, 32, 32), 7)
    r0, c0, r1, c1 = eye_region_pixels(DEFAULT_BOX, 32, 32)
    xr = x + noise
    xr[:, r0:r1, c0:c1] = x[:, r0:r1, c0:c1]
    assert float(eye_recon_loss(x, xr, y, y)) == 0
    assert float(eye_recon_loss(x, x, y, y)) == 0


def test_code_recon_examples():
    f1, f2 = rand((2, 8, 4, 4), 8), rand((2, 8, 4, 4), 9)
    e1, e2 = rand((2, 8), 10), rand((2, 8), 11)
    f_term, _ = code_recon_loss(f1, f1, f2, f2, e1, e2, e1, e2)
    assert float(f_term) == 0
    _, e_term = code_recon_loss(f1, f1, f2, f2, e1 + 1, e1, e2 - 1, e2)
    assert float(e_term) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_code_recon_matches_loop(seed):
    codes = [rand((8, 4, 4), seed * 8 + k) for k in range(4)] + [rand((8,), seed * 8 + k) for k in range(4, 8)]
    f_term, e_term = code_recon_loss(*codes)
    assert abs(float(f_term) - (loop_l1(codes[0], codes[1]) + loop_l1(codes[2], codes[3]))) < 1e-6
    assert abs(float(e_term) - (loop_l1(codes[4], codes[5]) + loop_l1(codes[6], codes[7]))) < 1e-6


def test_lsgan_closed_forms():
    ones, zeros = torch.ones(1, 1, 4, 4), torch.zeros(1, 1, 4, 4)
    assert float(lsgan_disc_loss([ones], [zeros])) == 0
    assert float(lsgan_disc_loss([zeros], [ones])) == 2
    half = torch.full((1, 1, 4, 4), 0.5)
    assert abs(float(lsgan_disc_loss([half, half[..., :2, :2]], [half, half[..., :2, :2]])) - 1.0) < 1e-9
    assert float(lsgan_gen_loss([ones])) == 0
    assert float(lsgan_gen_loss([zeros])) == 1
    assert float(lsgan_gen_loss([-ones])) == 4
    with pytest.raises(ValueError):
        lsgan_disc_loss([ones], [ones, ones])


def test_r1_constant_disc_is_zero():
    x = rand((3, 3, 8, 8), 12).requires_grad_(True)
    assert float(r1_penalty(lambda t: [torch.ones(t.shape[0], 1, 2, 2)], x)) == 0


@pytest.mark.parametrize("batch", [1, 3, 7])
def test_r1_linear_disc_analytic(batch):
    # D(x) = sum(w * x): gradient is w for every sample, so penalty = gamma/2 * |w|^2
    w = rand((3, 8, 8), 13)
    x = rand((batch, 3, 8, 8), 14).requires_grad_(True)
    pen = r1_penalty(lambda t: (t * w).flatten(1).sum(1), x, gamma=10.0)
    assert abs(float(pen) - 5.0 * float((w ** 2).sum())) < 1e-9


def test_r1_requires_grad():
    with pytest.raises(ValueError):
        r1_penalty(lambda t: t.sum(), torch.zeros(1, 3, 4, 4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_r1_nonnegative(seed):
    conv = torch.nn.Conv2d(3, 1, 3).double()
    torch.manual_seed(seed)
    x = rand((2, 3, 8, 8), seed).requires_grad_(True)
    assert float(r1_penalty(lambda t: [torch.tanh(conv(t))], x).detach()) >= 0


def terms(**kw):
    base = dict(face_recon=0.0, eye_recon=0.0, f_recon=0.0, e_recon=0.0, cycle=0.0, adv_gen=0.0,
                adv_disc=0.0, r1=0.0)
    base.update(kw)
    return base


def test_total_losses_examples():
    assert total_losses(terms(), LossWeights()) == (0.0, 0.0)
    g, _ = total_losses(terms(face_recon=0.1, eye_recon=0.2, f_recon=0.3, cycle=0.4, adv_gen=0.5), LossWeights())
    assert g == pytest.approx(4.2, abs=1e-12)
    t = terms(face_recon=0.1, eye_recon=0.2, f_recon=0.3, cycle=0.4, adv_gen=0.5)
    # linear in lambda_eye: a unit increase adds eye_recon, doubling from 10 adds 10 * eye_recon
    g2, _ = total_losses(t, LossWeights(lambda_eye=11))
    assert g2 - g == pytest.approx(0.2, abs=1e-12)
    g3, _ = total_losses(t, LossWeights(lambda_eye=20))
    assert g3 - g == pytest.approx(2.0, abs=1e-12)
    _, d = total_losses(terms(adv_disc=0.7, r1=0.3), LossWeights())
    assert d == pytest.approx(1.0)


def test_e_recon_gating():
    t1 = terms(face_recon=0.1, e_recon=0.0)
    t2 = terms(face_recon=0.1, e_recon=5.0)
    assert total_losses(t1, LossWeights())[0] == total_losses(t2, LossWeights())[0]
    assert total_losses(t2, LossWeights(use_e_recon=True))[0] == pytest.approx(6.0)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        LossWeights(lambda_face=-1)
    w = LossWeights()
    w.lambda_eye = -2
    with pytest.raises(ValueError):
        total_losses(terms(), w)


def test_lambda_face_derivative_is_face_term():
    lam = torch.tensor(10.0, dtype=torch.float64, requires_grad=True)
    t = {k: torch.tensor(v, dtype=torch.float64) for k, v in
         terms(face_recon=0.37, eye_recon=0.2, f_recon=0.1, cycle=0.3, adv_gen=0.9).items()}
    w = LossWeights()
    w.lambda_face = lam
    total, _ = total_losses(t, w)
    (grad,) = torch.autograd.grad(total, lam)
    assert float(grad) == float(t["face_recon"])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_nonnegative_and_zero_at_optimum(seed):
    x, y = rand((1, 3, 16, 16), seed), rand((1, 3, 16, 16), seed + 1)
    xr, yr = rand((1, 3, 16, 16), seed + 2), rand((1, 3, 16, 16), seed + 3)
    for fn in (face_recon_loss, cycle_loss, eye_recon_loss):
        assert float(fn(x, xr, y, yr)) >= 0
        assert float(fn(x, x, y, y)) == 0
    maps = [rand((1, 1, 4, 4), seed + 4)]
    assert float(lsgan_disc_loss(maps, maps)) >= 0
    assert float(lsgan_gen_loss(maps)) >= 0
