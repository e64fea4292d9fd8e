import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointdec.errors import ConfigurationError, DimensionError, NumericError
from jointdec.optim import MomentumState, NesterovSGD, SgdrSchedule, nesterov_step, sgdr_lr
from jointdec.tensor import Tensor


class TestSchedule:
    def test_restart_is_lmax(self):
        s = SgdrSchedule()
        for e in (0, 1, 3, 7, 15, 31):
            assert sgdr_lr(s, e) == 0.1

    def test_mid_cycle(self):
        s = SgdrSchedule()
        assert abs(sgdr_lr(s, 0.5) - 0.05) < 1e-12
        assert abs(sgdr_lr(s, 1 + 1.0) - 0.05) < 1e-12
        assert abs(sgdr_lr(s, 3 + 2.0) - 0.05) < 1e-12

    def test_nine_cycles(self):
        s = SgdrSchedule()
        assert sum(s.cycle_length(c) for c in range(9)) == 511
        assert s.epochs_for_cycles(9) == 511
        assert s.is_restart_boundary(511) and not s.is_restart_boundary(510)

    def test_constant_mult(self):
        s = SgdrSchedule(t0=2, t_mult=1)
        assert s.epochs_for_cycles(4) == 8
        assert sgdr_lr(s, 4) == 0.1

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            SgdrSchedule(t0=0)
        with pytest.raises(ConfigurationError):
            SgdrSchedule(l_min=0.2, l_max=0.1)
        with pytest.raises(ConfigurationError):
            sgdr_lr(SgdrSchedule(), -0.1)

    @settings(max_examples=200, deadline=None)
    @given(e=st.floats(0, 500))
    def test_bounds(self, e):
        lr = sgdr_lr(SgdrSchedule(l_max=0.1, l_min=0.001), e)
        assert 0.001 <= lr <= 0.1

    def test_decreasing_within_cycle(self):
        s = SgdrSchedule()
        xs = np.linspace(3, 6.99, 50)
        lrs = [sgdr_lr(s, x) for x in xs]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))


def scalar_nesterov(p, grad_fn, lr, m, steps):
    v = 0.0
    for _ in range(steps):
        g = grad_fn(p)
        v = m * v - lr * g
        p = p + m * v - lr * g
    return p


class TestNesterov:
    def test_zero_momentum_is_sgd(self, rng):
        p = rng.standard_normal(5)
        g = rng.standard_normal(5)
        expect = p - 0.1 * g
        nesterov_step([p], [g], MomentumState(momentum=0.0), 0.1)
        assert p.tobytes() == expect.tobytes()

    def test_zero_grads_decay_velocity(self):
        p = np.array([1.0])
        st_ = MomentumState(momentum=0.9)
        nesterov_step([p], [np.array([1.0])], st_, 0.1)
        v0 = st_.velocity[0].copy()
        nesterov_step([p], [np.array([0.0])], st_, 0.1)
        np.testing.assert_allclose(st_.velocity[0], 0.9 * v0, rtol=1e-15)

    def test_matches_scalar_oracle(self):
        p = np.array([1.0])
        st_ = MomentumState(momentum=0.9)
        for _ in range(37):
            nesterov_step([p], [2 * p.copy()], st_, 0.1)
        assert p[0] == pytest.approx(scalar_nesterov(1.0, lambda x: 2 * x, 0.1, 0.9, 37), abs=1e-15)

    def test_quadratic_bowl_converges(self):
        p = np.array([1.0])
        st_ = MomentumState(momentum=0.9)
        for _ in range(200):
            nesterov_step([p], [p.copy()], st_, 0.1)  # grad of p^2/2
        assert abs(p[0]) < 1e-6
        assert abs(scalar_nesterov(1.0, lambda x: x, 0.1, 0.9, 200)) < 1e-6

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_refuses_non_finite(self, bad):
        p, q = np.array([1.0, 2.0]), np.array([3.0])
        with pytest.raises(NumericError):
            nesterov_step([p, q], [np.array([0.1, 0.1]), np.array([bad])], MomentumState(), 0.1)
        # nothing was touched
        np.testing.assert_array_equal(p, [1.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nesterov_step([np.zeros(2)], [np.zeros(3)], MomentumState(), 0.1)

    def test_weight_decay(self):
        p = np.array([2.0])
        nesterov_step([p], [np.array([0.0])], MomentumState(momentum=0.0, weight_decay=0.5), 0.1)
        assert p[0] == pytest.approx(2.0 - 0.1 * 1.0)

    def test_optimizer_wrapper(self):
        t = Tensor([1.0, -1.0], requires_grad=True)
        opt = NesterovSGD([t], momentum=0.0)
        t.grad = np.array([1.0, 1.0])
        opt.step(0.5)
        np.testing.assert_array_equal(t.data, [0.5, -1.5])
        opt.zero_grad()
        assert t.grad is None
        opt.step(0.5)  # missing grads count as zero
        np.testing.assert_array_equal(t.data, [0.5, -1.5])
