import numpy as np
import pytest

from gapfill.lstm import (
    LstmParams,
    LstmState,
    PARAM_FIELDS,
    init_lstm_params,
    lstm_backward,
    lstm_run,
    lstm_step,
    zero_lstm_grads,
    zero_state,
)
from gapfill.numerics import Rng, ShapeError, finite_diff_grad

from _reference import lstm_step_scalar


def all_zero_params(input_dim, hidden_dim):
    fields = {}
    for name in PARAM_FIELDS:
        if name.startswith("w_"):
            fields[name] = np.zeros((hidden_dim, input_dim))
        elif name.startswith("u_"):
            fields[name] = np.zeros((hidden_dim, hidden_dim))
        else:
            fields[name] = np.zeros(hidden_dim)
    return LstmParams(**fields)


def test_zero_params_keep_zero_state():
    p = all_zero_params(2, 3)
    state, _ = lstm_step(p, np.array([5.0, -1.0]), zero_state(3))
    assert np.array_equal(state.h, np.zeros(3))
    assert np.array_equal(state.c, np.zeros(3))


def test_saturated_gates_carry_memory():
    # forget gate pinned open, input gate pinned shut: c passes through
    p = all_zero_params(1, 4)
    p.b_f[:] = 30.0
    p.b_i[:] = -30.0
    c = np.array([1.0, -0.5, 2.0, 0.25])
    state, _ = lstm_step(p, np.array([3.0]), LstmState(np.zeros(4), c.copy()))
    assert np.allclose(state.c, c, atol=1e-9, rtol=0)


def test_step_matches_scalar_reference():
    p = init_lstm_params(1, 2, Rng(0))
    state, _ = lstm_step(p, np.array([1.0]), zero_state(2))
    h_ref, c_ref = lstm_step_scalar(p, [1.0], [0.0, 0.0], [0.0, 0.0])
    assert np.allclose(state.h, h_ref, atol=1e-12, rtol=0)
    assert np.allclose(state.c, c_ref, atol=1e-12, rtol=0)


def test_multi_step_matches_scalar_reference():
    rng = Rng(4)
    p = init_lstm_params(2, 3, rng)
    xs = [rng.normal_array((2,)) for _ in range(4)]
    state = zero_state(3)
    h_ref, c_ref = [0.0] * 3, [0.0] * 3
    for x in xs:
        state, _ = lstm_step(p, x, state)
        h_ref, c_ref = lstm_step_scalar(p, list(x), h_ref, c_ref)
    assert np.allclose(state.h, h_ref, atol=1e-12, rtol=0)
    assert np.allclose(state.c, c_ref, atol=1e-12, rtol=0)


def test_dimension_mismatch_rejected():
    p = init_lstm_params(2, 3, Rng(0))
    with pytest.raises(ShapeError):
        lstm_step(p, np.zeros(5), zero_state(3))
    with pytest.raises(ShapeError):
        lstm_step(p, np.zeros(2), zero_state(4))


def test_forward_determinism():
    p = init_lstm_params(2, 4, Rng(9))
    xs = [Rng(10).normal_array((2,)) for _ in range(3)]
    s1, h1, _ = lstm_run(p, xs, zero_state(4))
    s2, h2, _ = lstm_run(p, xs, zero_state(4))
    assert all(np.array_equal(a, b) for a, b in zip(h1, h2))
    assert np.array_equal(s1.c, s2.c)


def test_hidden_output_bounded():
    rng = Rng(21)
    for _ in range(10):
        p = init_lstm_params(3, 5, rng)
        xs = [10.0 * rng.normal_array((3,)) for _ in range(6)]
        _, hs, _ = lstm_run(p, xs, zero_state(5))
        for h in hs:
            assert np.all(np.abs(h) < 1.0)


def test_zero_hidden_gradients_give_zero_param_gradients():
    rng = Rng(2)
    p = init_lstm_params(2, 3, rng)
    xs = [rng.normal_array((2,)) for _ in range(4)]
    _, _, tapes = lstm_run(p, xs, zero_state(3))
    grads, dxs, (dh0, dc0) = lstm_backward(p, tapes, [np.zeros(3)] * 4)
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.values())
    assert all(np.array_equal(dx, np.zeros(2)) for dx in dxs)
    assert np.array_equal(dh0, np.zeros(3)) and np.array_equal(dc0, np.zeros(3))


def _sequence_loss(p, xs, grad_spec):
    """Scalar loss matching `grad_spec`: sum of h[t][j]*w entries and final-h MSE."""
    _, hs, _ = lstm_run(p, xs, zero_state(p.hidden_dim))
    total = 0.0
    for t, vec in grad_spec.get("linear", {}).items():
        total += float(np.dot(vec, hs[t]))
    if "mse_final" in grad_spec:
        target = grad_spec["mse_final"]
        d = hs[-1] - target
        total += float(np.mean(d * d))
    return total


def _numeric_grads(p, xs, grad_spec, eps=1e-5):
    out = {}
    for name in PARAM_FIELDS:
        tensor = getattr(p, name)
        orig = tensor.copy()

        def f(candidate):
            tensor[...] = candidate
            return _sequence_loss(p, xs, grad_spec)

        out[name] = finite_diff_grad(f, orig, eps)
        tensor[...] = orig
    return out


def _analytic_grads(p, xs, grad_spec):
    _, hs, tapes = lstm_run(p, xs, zero_state(p.hidden_dim))
    n = len(xs)
    grad_h = [np.zeros(p.hidden_dim) for _ in range(n)]
    for t, vec in grad_spec.get("linear", {}).items():
        grad_h[t] = grad_h[t] + np.asarray(vec, dtype=float)
    if "mse_final" in grad_spec:
        target = grad_spec["mse_final"]
        grad_h[-1] = grad_h[-1] + (2.0 / p.hidden_dim) * (hs[-1] - target)
    grads, _, _ = lstm_backward(p, tapes, grad_h)
    return grads


def _max_rel_err(analytic, numeric):
    worst = 0.0
    for name in PARAM_FIELDS:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def test_single_step_output_bias_gradient():
    rng = Rng(3)
    p = init_lstm_params(1, 2, rng)
    xs = [np.array([0.7])]
    spec = {"linear": {0: np.array([1.0, 0.0])}}  # loss = h[0][0]
    analytic = _analytic_grads(p, xs, spec)
    numeric = _numeric_grads(p, xs, spec)
    denom = max(abs(float(numeric["b_o"][0])), 1e-12)
    assert abs(float(analytic["b_o"][0]) - float(numeric["b_o"][0])) / denom < 1e-6


def test_five_step_mse_gradient_matches_finite_differences():
    rng = Rng(8)
    p = init_lstm_params(2, 3, rng)
    xs = [rng.normal_array((2,)) for _ in range(5)]
    spec = {"mse_final": rng.normal_array((3,))}
    assert _max_rel_err(_analytic_grads(p, xs, spec), _numeric_grads(p, xs, spec)) < 1e-4


def test_gradients_match_finite_differences_many_seeds():
    # random tiny instances across shapes, up to 6 steps
    for seed in range(20):
        rng = Rng(1000 + seed)
        d = 1 + rng.randrange(3)
        h = 1 + rng.randrange(5)
        steps = 1 + rng.randrange(6)
        p = init_lstm_params(d, h, rng)
        xs = [rng.normal_array((d,)) for _ in range(steps)]
        spec = {"mse_final": rng.normal_array((h,)),
                "linear": {rng.randrange(steps): rng.normal_array((h,))}}
        err = _max_rel_err(_analytic_grads(p, xs, spec), _numeric_grads(p, xs, spec))
        assert err < 1e-4, f"seed {seed}: rel err {err:.2e}"


def test_gradient_additivity_over_time_steps():
    rng = Rng(15)
    p = init_lstm_params(2, 3, rng)
    xs = [rng.normal_array((2,)) for _ in range(4)]
    v1, v2 = rng.normal_array((3,)), rng.normal_array((3,))
    joint = _analytic_grads(p, xs, {"linear": {1: v1, 3: v2}})
    first = _analytic_grads(p, xs, {"linear": {1: v1}})
    second = _analytic_grads(p, xs, {"linear": {3: v2}})
    for name in PARAM_FIELDS:
        assert np.allclose(joint[name], first[name] + second[name], atol=1e-12, rtol=0)


def test_backward_rejects_mismatched_tape_count():
    rng = Rng(1)
    p = init_lstm_params(1, 2, rng)
    _, _, tapes = lstm_run(p, [np.array([1.0])], zero_state(2))
    with pytest.raises(ShapeError):
        lstm_backward(p, tapes, [np.zeros(2), np.zeros(2)])


def test_forget_bias_initialized_to_one():
    p = init_lstm_params(2, 4, Rng(0))
    assert np.array_equal(p.b_f, np.ones(4))
    assert np.array_equal(p.b_i, np.zeros(4))
    k = 1.0 / np.sqrt(4)
    for name in PARAM_FIELDS[:8]:
        w = getattr(p, name)
        assert np.all(np.abs(w) <= k)


def test_zero_lstm_grads_shapes():
    p = init_lstm_params(3, 2, Rng(0))
    g = zero_lstm_grads(p)
    assert set(g) == set(PARAM_FIELDS)
    for name in PARAM_FIELDS:
        assert g[name].shape == getattr(p, name).shape
