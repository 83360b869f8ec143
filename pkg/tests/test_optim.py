import numpy as np
import pytest
import torch

from brainunet.optim import AdamState, adam_step, init_adam_state


class TestAdamStep:
    def test_zero_gradients_leave_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        state = init_adam_state(params)
        new_params, new_state = adam_step(params, {"w": np.zeros(3)}, state, lr=0.1)
        assert np.array_equal(new_params["w"], params["w"])
        assert new_state.step == 1

    def test_first_step_bias_correction_arithmetic(self):
        # fresh state, g=1, lr=0.1: m_hat = 1, v_hat = 1, so the update is
        # -0.1 * 1 / (1 + 1e-8)
        params = {"x": np.array(5.0)}
        state = init_adam_state(params)
        new_params, _ = adam_step(params, {"x": np.array(1.0)}, state, lr=0.1)
        expected = 5.0 - 0.1 * (1.0 / (1.0 + 1e-8))
        assert new_params["x"] == pytest.approx(expected, abs=1e-12)

    def test_quadratic_descent(self):
        # minimize (x - 3)^2 and watch the loss fall every step
        params = {"x": np.array(10.0)}
        state = init_adam_state(params)
        losses = [(params["x"] - 3.0) ** 2]
        for _ in range(10):
            grad = {"x": 2 * (params["x"] - 3.0)}
            params, state = adam_step(params, grad, state, lr=0.5)
            losses.append((params["x"] - 3.0) ** 2)
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_nonfinite_gradient_names_parameter(self):
        params = {"ok": np.array(1.0), "broken": np.array(2.0)}
        grads = {"ok": np.array(0.1), "broken": np.array(np.nan)}
        with pytest.raises(ValueError, match="broken"):
            adam_step(params, grads, init_adam_state(params), lr=0.1)

    def test_name_mismatch_rejected(self):
        params = {"a": np.array(1.0)}
        with pytest.raises(ValueError, match="names"):
            adam_step(params, {"b": np.array(1.0)}, init_adam_state(params), lr=0.1)

    def test_inputs_not_mutated(self):
        params = {"w": np.array([1.0, 2.0])}
        grads = {"w": np.array([0.5, -0.5])}
        state = init_adam_state(params)
        adam_step(params, grads, state, lr=0.1)
        assert np.array_equal(params["w"], [1.0, 2.0])
        assert state.step == 0
        assert np.array_equal(state.m["w"], [0.0, 0.0])

    def test_torch_and_numpy_agree(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 3))
        g = rng.normal(size=(4, 3))
        np_params, np_state = {"w": w.copy()}, init_adam_state({"w": w})
        t_params = {"w": torch.tensor(w, dtype=torch.float64)}
        t_state = init_adam_state(t_params)
        for _ in range(3):
            np_params, np_state = adam_step(np_params, {"w": g}, np_state, lr=0.01)
            t_params, t_state = adam_step(
                t_params, {"w": torch.tensor(g, dtype=torch.float64)}, t_state, lr=0.01)
        assert np.allclose(np_params["w"], t_params["w"].numpy(), atol=1e-12)

    def test_bad_lr(self):
        params = {"x": np.array(1.0)}
        with pytest.raises(ValueError, match="learning rate"):
            adam_step(params, {"x": np.array(1.0)}, init_adam_state(params), lr=0.0)
