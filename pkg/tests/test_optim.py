"""Tests for Adam and the learning-rate schedule."""

import numpy as np
import pytest

from overlapgan.errors import NonFiniteError, ShapeError
from overlapgan.optim import AdamState, adam_step, lr_schedule
from overlapgan.tensor import Tensor


def scalar_param(value: float) -> dict[str, Tensor]:
    return {"p": Tensor(np.array([value]), requires_grad=True)}


class TestAdamStep:
    """Bias-corrected Adam updates."""

    def test_first_step_closed_form(self):
        """p=1, g=1, α=0.1: bias correction cancels and p becomes 0.9."""
        params = scalar_param(1.0)
        state = AdamState.for_params(params, alpha=0.1, beta1=0.5, beta2=0.9)
        adam_step(params, {"p": np.array([1.0])}, state)
        assert params["p"].data[0] == pytest.approx(0.9, abs=1e-8)
        assert state.t == 1

    def test_zero_gradient_is_fixed_point(self):
        params = {"w": Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)}
        before = params["w"].data.copy()
        state = AdamState.for_params(params, alpha=1e-4, beta1=0.5, beta2=0.9)
        for _ in range(3):
            adam_step(params, {"w": np.zeros((2, 3))}, state)
        np.testing.assert_array_equal(params["w"].data, before)

    def test_missing_gradient_counts_as_zero(self):
        params = scalar_param(2.0)
        state = AdamState.for_params(params, alpha=0.1, beta1=0.5, beta2=0.9)
        adam_step(params, {}, state)
        assert params["p"].data[0] == 2.0

    def test_quadratic_descends_monotonically(self):
        """10 steps on f(p)=p² from p=1 decrease f after step 2."""
        params = scalar_param(1.0)
        state = AdamState.for_params(params, alpha=1e-4, beta1=0.5, beta2=0.9)
        values = []
        for _ in range(10):
            p = params["p"].data
            adam_step(params, {"p": 2.0 * p}, state)
            values.append(float(params["p"].data[0] ** 2))
        assert all(b < a for a, b in zip(values[1:], values[2:]))

    def test_non_finite_gradient_aborts_without_update(self):
        params = scalar_param(1.0)
        state = AdamState.for_params(params, alpha=0.1, beta1=0.5, beta2=0.9)
        with pytest.raises(NonFiniteError, match="p"):
            adam_step(params, {"p": np.array([np.nan])}, state)
        assert params["p"].data[0] == 1.0
        assert state.t == 0

    def test_shape_mismatch(self):
        params = scalar_param(1.0)
        state = AdamState.for_params(params, alpha=0.1, beta1=0.5, beta2=0.9)
        with pytest.raises(ShapeError):
            adam_step(params, {"p": np.ones(2)}, state)

    def test_state_round_trip(self):
        """Saved moments resume to the same trajectory."""
        params = scalar_param(1.0)
        state = AdamState.for_params(params, alpha=0.1, beta1=0.5, beta2=0.9)
        adam_step(params, {"p": np.array([0.3])}, state)
        restored = AdamState.from_dict(state.to_dict())
        twin = {"p": Tensor(params["p"].data.copy(), requires_grad=True)}
        adam_step(params, {"p": np.array([-0.7])}, state)
        adam_step(twin, {"p": np.array([-0.7])}, restored)
        assert twin["p"].data[0] == params["p"].data[0]


class TestLrSchedule:
    """Linear decay to zero."""

    def test_start_and_end(self):
        assert lr_schedule(0, 1e-4, 100_000) == 1e-4
        assert lr_schedule(100_000, 1e-4, 100_000) == 0.0

    def test_quarter_way(self):
        assert lr_schedule(25_000, 1e-4, 100_000) == pytest.approx(7.5e-5)

    def test_clamped_past_end(self):
        assert lr_schedule(150_000, 1e-4, 100_000) == 0.0

    def test_decay_off_is_constant(self):
        assert lr_schedule(99_999, 1e-4, 100_000, decay=False) == 1e-4

    @pytest.mark.parametrize("decay", [True, False])
    def test_zero_total_iters(self, decay):
        with pytest.raises(ValueError):
            lr_schedule(0, 1e-4, 0, decay=decay)

    def test_negative_iteration_rejected_without_decay(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 1e-4, 10, decay=False)
