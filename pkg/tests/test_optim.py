"""Adam / RMSprop update rules."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from zslada.errors import ConfigError, NonFiniteGradient
from zslada.nn.optim import (
    OptimizerHyper,
    adam_step,
    init_optimizer,
    rmsprop_step,
)


def test_adam_zero_gradient_is_identity():
    params = np.array([1.0, -2.0, 0.5])
    state = init_optimizer("adam", 3)
    new, state2 = adam_step(params, np.zeros(3), state)
    assert np.array_equal(new, params)
    assert state2.step_count == 1


def test_adam_first_step_is_minus_lr_times_sign():
    state = init_optimizer("adam", 1, learning_rate=0.1)
    new, _ = adam_step(np.array([3.0]), np.array([1.0]), state)
    # m_hat = g, v_hat = g^2, so the step is -lr * g/(|g| + eps)
    assert abs(new[0] - (3.0 - 0.1)) < 1e-8


def test_adam_decoupled_weight_decay_pulls_toward_zero():
    hyper = OptimizerHyper(learning_rate=0.1, weight_decay=0.001)
    state = init_optimizer("adam", 1, hyper=hyper)
    new, state2 = adam_step(np.array([1.0]), np.array([0.0]), state)
    assert 0.0 < new[0] < 1.0
    # decay never enters the moment accumulators
    assert np.all(state2.first_moment == 0.0)
    assert np.all(state2.second_moment == 0.0)


def test_rmsprop_zero_gradient_is_identity():
    params = np.array([0.3, -0.7])
    state = init_optimizer("rmsprop", 2)
    new, _ = rmsprop_step(params, np.zeros(2), state)
    assert np.array_equal(new, params)


def test_rmsprop_default_learning_rate():
    state = init_optimizer("rmsprop", 1)
    assert state.hyper.learning_rate == 1e-5
    assert state.hyper.beta2 == 0.99


def test_rmsprop_step_size_saturates_at_learning_rate():
    lr = 1e-3
    state = init_optimizer("rmsprop", 1, learning_rate=lr)
    params = np.array([0.0])
    g = np.array([2.5])
    for _ in range(500):
        prev = params.copy()
        params, state = rmsprop_step(params, g, state)
    # accumulator -> g^2, so |step| -> lr regardless of gradient scale
    assert abs(abs(params[0] - prev[0]) - lr) < 0.01 * lr


def test_same_inputs_give_bitwise_identical_trajectories():
    rng_a = np.random.default_rng(7)
    rng_b = np.random.default_rng(7)

    def run(rng):
        params = np.zeros(4)
        state = init_optimizer("rmsprop", 4, learning_rate=1e-3)
        for _ in range(50):
            params, state = rmsprop_step(params, rng.standard_normal(4), state)
        return params

    assert np.array_equal(run(rng_a), run(rng_b))


def test_nonfinite_gradient_names_the_slice():
    layout = [("layer0.W", 0, 4), ("layer0.b", 4, 6)]
    state = init_optimizer("adam", 6, param_layout=layout)
    grads = np.zeros(6)
    grads[5] = np.nan
    with pytest.raises(NonFiniteGradient) as err:
        adam_step(np.zeros(6), grads, state)
    assert "layer0.b" in str(err.value)
    assert err.value.where.startswith("layer0.b")


def test_kind_and_shape_mismatches_are_config_errors():
    state = init_optimizer("adam", 3)
    with pytest.raises(ConfigError):
        rmsprop_step(np.zeros(3), np.zeros(3), state)
    with pytest.raises(ConfigError):
        adam_step(np.zeros(4), np.zeros(4), state)
    with pytest.raises(ConfigError):
        init_optimizer("sgd", 3)
    with pytest.raises(ConfigError):
        OptimizerHyper(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        OptimizerHyper(learning_rate=1.0, beta2=1.0)


@given(
    hnp.arrays(np.float64, st.integers(1, 8),
               elements=st.floats(-10, 10, allow_nan=False)),
    st.sampled_from(["adam", "rmsprop"]),
)
def test_zero_gradient_zero_decay_is_identity_for_any_params(params, kind):
    state = init_optimizer(kind, params.size)
    step = adam_step if kind == "adam" else rmsprop_step
    new, _ = step(params, np.zeros_like(params), state)
    assert np.array_equal(new, params)


def test_step_does_not_mutate_inputs():
    params = np.array([1.0, 2.0])
    grads = np.array([0.5, -0.5])
    state = init_optimizer("adam", 2)
    adam_step(params, grads, state)
    assert np.array_equal(params, [1.0, 2.0])
    assert np.array_equal(grads, [0.5, -0.5])
    assert state.step_count == 0
    assert np.all(state.second_moment == 0.0)
