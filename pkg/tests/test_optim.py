from fractions import Fraction

import numpy as np
import pytest

from mcfloat import autodiff as ad
from mcfloat import nn
from mcfloat.mct import from_float
from mcfloat.optim import MCAdam, MCSGD, LossScaler, apply_update
from mcfloat.oracle import value_of

from .conftest import F, random_mc


def one16(nc):
    return from_float(np.array([1.0], dtype=np.float16), nc)


class TestSGD:
    def test_lr_zero_keeps_params(self, rng):
        p = random_mc(rng, 10, 2, np.float32)
        before = p.data.copy()
        p.grad = rng.standard_normal(10).astype(np.float32)
        MCSGD([p], lr=0.0).step()
        assert np.array_equal(p.data, before)

    def test_zero_grad_is_bitwise_noop(self, rng):
        p = random_mc(rng, (4, 3), 3, np.float16)
        before = p.data.copy()
        p.grad = np.zeros((4, 3), dtype=np.float16)
        MCSGD([p], lr=0.5, momentum=0.9).step()
        assert np.array_equal(p.data, before)

    def test_single_tiny_update_survives(self):
        mc, plain = one16(2), one16(1)
        for p in (mc, plain):
            p.grad = np.array([2.0 ** -20], dtype=np.float16)
            MCSGD([p], lr=1.0).step()
        assert value_of(mc)[0] == 1 - Fraction(1, 2 ** 20)
        assert mc.data[0, 1] == -(2.0 ** -20)
        assert value_of(plain)[0] == 1

    def test_missing_grad_names_parameter(self):
        model = nn.MCSequential(nn.MCLinear(2, 2, nc=2), nn.ReLU(), nn.MCLinear(2, 1, nc=2))
        for q in model[0].parameters():
            q.grad = np.zeros(q.shape, dtype=q.dtype)
        opt = MCSGD(model, lr=0.1)
        with pytest.raises(RuntimeError, match=r"2\.weight"):
            opt.step()

    def test_rejects_non_mc_params(self):
        with pytest.raises(TypeError):
            MCSGD([np.zeros(3)], lr=0.1)

    def test_momentum_zero_is_plain_gd(self, rng):
        p = from_float(rng.standard_normal(5), 1)
        q = p.data[..., 0].copy()
        opt = MCSGD([p], lr=0.1, momentum=0.0)
        for _ in range(5):
            g = 2 * p.data[..., 0]
            p.grad = g
            opt.step()
            q = q - 0.1 * (2 * q)
        assert np.array_equal(p.data[..., 0], q)

    def test_heavy_ball_matches_recurrence(self, rng):
        p = from_float(rng.standard_normal(4), 1)
        x, b = p.data[..., 0].copy(), np.zeros(4)
        opt = MCSGD([p], lr=0.05, momentum=0.9)
        for _ in range(20):
            p.grad = np.sin(p.data[..., 0])
            opt.step()
            g = np.sin(x)
            b = 0.9 * b + g if _ else g
            x = x - 0.05 * b
        assert np.allclose(p.data[..., 0], x, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("mc_state", [False, True])
    def test_mc_state_tracks_b64_trajectory(self, rng, mc_state):
        p = from_float(rng.standard_normal(4), 2)
        ref = MCSGD([p.copy()], lr=0.05, momentum=0.9)
        opt = MCSGD([p], lr=0.05, momentum=0.9, mc_state=mc_state)
        for _ in range(20):
            for o in (opt, ref):
                q = o.named[0][1]
                q.grad = np.cos(q.data[..., 0])
                o.step()
        assert np.allclose(p.data[..., 0], ref.named[0][1].data[..., 0], atol=1e-12)

    def test_update_conservation(self, rng):
        p = random_mc(rng, 200, 2, np.float32)
        before = value_of(p)
        u = rng.standard_normal(200).astype(np.float32) * np.float32(1e-3)
        p.grad = u
        MCSGD([p], lr=0.5).step()
        delta = (-0.5 * u).astype(np.float32)
        after = value_of(p)
        last_ulp = np.spacing(np.abs(p.data[:, 1]).astype(np.float32))
        for a, b0, d, ul in zip(after, before, delta, last_ulp):
            assert abs((a - b0) - F(d)) <= F(ul)


def test_tiny_update_retention_study(rng):
    # param 1.0 in binary16, updates -2^-14 * delta, delta in [0.1, 1]
    deltas = rng.uniform(0.1, 1.0, 1000)
    steps = (2.0 ** -14 * deltas).astype(np.float16)
    exact = Fraction(1)
    mc, plain = one16(2), one16(1)
    for s in steps:
        exact -= F(s)
        for p in (mc, plain):
            p.grad = np.array([s], dtype=np.float16)
            MCSGD([p], lr=1.0).step()
    err_mc = abs(value_of(mc)[0] - exact)
    err_plain = abs(value_of(plain)[0] - exact)
    assert err_mc < Fraction(1, 2 ** 20)
    assert err_plain > 10 * Fraction(1, 2 ** 20)


class TestAdam:
    def test_zero_grad_zero_update(self, rng):
        p = random_mc(rng, 6, 2, np.float32)
        before = p.data.copy()
        p.grad = np.zeros(6, dtype=np.float32)
        MCAdam([p], lr=0.1).step()
        assert np.array_equal(p.data, before)

    def test_first_step_is_sign_scaled(self, rng):
        p = from_float(rng.standard_normal(8), 2)
        x0 = p.data[..., 0].copy()
        g = rng.standard_normal(8)
        p.grad = g
        MCAdam([p], lr=1e-3, eps=1e-8).step()
        step = value_of(p).astype(float) - x0
        assert np.allclose(step, -1e-3 * np.sign(g), rtol=1e-6)

    @pytest.mark.parametrize("mc_state", [False, True])
    def test_quadratic_vs_b64_reference(self, rng, mc_state):
        a = rng.uniform(0.5, 2.0, 5)
        c = rng.standard_normal(5)
        x0 = rng.standard_normal(5)
        # binary64 reference Adam written out directly
        x, m, v = x0.copy(), np.zeros(5), np.zeros(5)
        for t in range(1, 101):
            g = 2 * a * (x - c)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        p = from_float(x0.astype(np.float32), 2)
        opt = MCAdam([p], lr=0.05, mc_state=mc_state)
        for _ in range(100):
            val = p.data.astype(np.float64).sum(-1)
            p.grad = (2 * a * (val - c)).astype(np.float32)
            opt.step()
        assert np.max(np.abs(p.data.astype(np.float64).sum(-1) - x)) < 1e-2

    def test_binary16_eps_does_not_vanish(self):
        p = one16(2)
        p.grad = np.array([0.0], dtype=np.float16)
        opt = MCAdam([p], lr=0.1)
        opt.step()
        assert np.all(np.isfinite(p.data))


class TestLossScaler:
    def test_overflow_halves_and_skips(self):
        p = one16(2)
        p.grad = np.array([np.inf], dtype=np.float16)
        sc = LossScaler(scale=1024.0)
        before = p.data.copy()
        assert sc.step(MCSGD([p], lr=1.0)) is False
        assert sc.scale == 512.0 and sc.skipped == 1
        assert np.array_equal(p.data, before)

    def test_unscale_and_growth(self):
        p = one16(2)
        sc = LossScaler(scale=8.0, interval=2, cap=16.0)
        opt = MCSGD([p], lr=1.0)
        for _ in range(4):
            p.grad = np.array([8.0 * 2.0 ** -16], dtype=np.float16) * np.float16(sc.scale / 8.0)
            assert sc.step(opt)
        assert sc.scale == 16.0
        assert value_of(p)[0] < 1

    def test_disabled_passes_through(self):
        p = one16(1)
        p.grad = np.array([0.5], dtype=np.float16)
        sc = LossScaler(enabled=False)
        sc.step(MCSGD([p], lr=1.0))
        assert sc.scale == 1.0 and value_of(p)[0] == Fraction(1, 2)


def test_training_loop_end_to_end(rng):
    X = rng.standard_normal((64, 3))
    w_true = np.array([[1.5, -2.0, 0.5]])
    y = X @ w_true.T
    layer = nn.MCLinear(3, 1, nc=2, bias=False, precision="b64", rng=0)
    opt = MCSGD(layer, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ad.backward(nn.mse_loss(layer(X), y))
        opt.step()
    assert np.allclose(layer.weight.fc, w_true, atol=1e-8)


def test_apply_update_mutates_the_parameter_object(rng):
    layer = nn.MCLinear(3, 2, nc=2, precision="b32", rng=0)
    w = layer.weight
    apply_update(w, np.full((2, 3), 0.25, dtype=np.float32))
    assert layer.weight is w
    assert np.allclose(w.fc, nn.MCLinear(3, 2, nc=2, precision="b32", rng=0).weight.fc + 0.25)
