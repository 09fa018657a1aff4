import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagabed.exceptions import ConfigError, ContractError, NumericError, ShapeError
from sagabed.nn_core import (
    AdamState,
    Critic,
    InputStandardizer,
    Mlp,
    ParamGrads,
    adam_step,
    load_critic,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_critic,
)


def _fd_param_grads(mlp, x, c, h=1e-5):
    """Central differences of loss = c . scores over every parameter."""
    out = []
    for p in mlp.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = c @ mlp_forward(mlp, x)[0]
            p[i] = old - h
            down = c @ mlp_forward(mlp, x)[0]
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


def test_init_shapes_and_determinism():
    mlp = mlp_init([3, 100, 1], seed=0)
    assert [w.shape for w in mlp.weights] == [(100, 3), (1, 100)]
    assert all(np.all(b == 0) for b in mlp.biases)
    limit = np.sqrt(6 / 103)
    assert np.max(np.abs(mlp.weights[0])) <= limit
    again = mlp_init([3, 100, 1], seed=0)
    for a, b in zip(mlp.parameters(), again.parameters()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("sizes", [[3], [3, 0, 1], [3, 4, 2], [3, 2.5, 1]])
def test_init_rejects_bad_layer_sizes(sizes):
    with pytest.raises(ConfigError):
        mlp_init(sizes)


def test_zero_network_scores_zero():
    mlp = mlp_init([4, 7, 1], seed=1)
    for p in mlp.parameters():
        p[...] = 0.0
    scores, _ = mlp_forward(mlp, np.random.default_rng(0).normal(size=(5, 4)))
    np.testing.assert_array_equal(scores, np.zeros(5))


def test_hand_computed_one_unit_net():
    mlp = Mlp([1, 1, 1], [np.array([[2.0]]), np.array([[1.0]])], [np.array([1.0]), np.array([0.0])])
    scores, _ = mlp_forward(mlp, [[3.0], [-3.0]])
    np.testing.assert_allclose(scores, [7.0, 0.0])


def test_batch_order_preserved():
    mlp = mlp_init([2, 5, 1], seed=2)
    x = np.random.default_rng(1).normal(size=(6, 2))
    full = mlp_forward(mlp, x)[0]
    rows = [mlp_forward(mlp, x[i : i + 1])[0][0] for i in range(6)]
    np.testing.assert_allclose(full, rows, rtol=0, atol=1e-14)


def test_forward_input_errors():
    mlp = mlp_init([2, 5, 1], seed=0)
    with pytest.raises(ShapeError):
        mlp_forward(mlp, np.zeros((3, 3)))
    with pytest.raises(NumericError):
        mlp_forward(mlp, [[np.nan, 0.0]])


def test_zero_output_grads_give_zero_grads():
    mlp = mlp_init([3, 6, 1], seed=0)
    x = np.random.default_rng(0).normal(size=(4, 3))
    _, cache = mlp_forward(mlp, x)
    grads, gx = mlp_backward(mlp, cache, np.zeros(4))
    assert grads.norm() == 0.0
    assert np.all(gx == 0.0)


def test_single_linear_layer_gradient_is_outer_product():
    rng = np.random.default_rng(3)
    mlp = Mlp([4, 1], [rng.normal(size=(1, 4))], [np.zeros(1)])
    x = rng.normal(size=(1, 4))
    _, cache = mlp_forward(mlp, x)
    grads, gx = mlp_backward(mlp, cache, [2.5])
    np.testing.assert_allclose(grads.weights[0], 2.5 * x)
    np.testing.assert_allclose(gx, 2.5 * mlp.weights[0])


@pytest.mark.parametrize("trial", range(20))
def test_param_and_input_grads_match_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    mlp = mlp_init([3, 8, 5, 1], seed=trial)
    for b in mlp.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(6, 3))
    c = rng.normal(size=6)
    _, cache = mlp_forward(mlp, x)
    grads, gx = mlp_backward(mlp, cache, c)
    fd = _fd_param_grads(mlp, x, c)
    for analytic, numeric in zip([*grads.weights, *grads.biases], fd):
        assert _rel_err(analytic, numeric) < 1e-4
    h = 1e-5
    fd_x = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd_x[i, j] = (c @ mlp_forward(mlp, xp)[0] - c @ mlp_forward(mlp, xm)[0]) / (2 * h)
    assert _rel_err(gx, fd_x) < 1e-4


def test_stale_cache_is_rejected():
    mlp = mlp_init([2, 3, 1], seed=0)
    x = np.ones((2, 2))
    _, cache = mlp_forward(mlp, x)
    grads, _ = mlp_backward(mlp, cache, [1.0, 1.0])
    adam_step(mlp, grads, AdamState.zeros_like(mlp), 1e-3)
    with pytest.raises(ContractError):
        mlp_backward(mlp, cache, [1.0, 1.0])
    with pytest.raises(ContractError):
        mlp_backward(mlp_init([2, 3, 1], seed=0), mlp_forward(mlp, x)[1], [1.0, 1.0])


def test_backward_length_mismatch():
    mlp = mlp_init([2, 3, 1], seed=0)
    _, cache = mlp_forward(mlp, np.ones((2, 2)))
    with pytest.raises(ShapeError):
        mlp_backward(mlp, cache, [1.0])


def test_adam_zero_gradient_leaves_parameters_identical():
    mlp = mlp_init([2, 3, 1], seed=0)
    before = [p.copy() for p in mlp.parameters()]
    state = AdamState.zeros_like(mlp)
    zero = ParamGrads([np.zeros_like(w) for w in mlp.weights], [np.zeros_like(b) for b in mlp.biases])
    adam_step(mlp, zero, state, 1e-2)
    adam_step(mlp, zero, state, 1e-2)
    assert state.step_count == 2
    for a, b in zip(before, mlp.parameters()):
        np.testing.assert_array_equal(a, b)


def test_adam_first_step_is_lr_times_sign():
    mlp = mlp_init([2, 3, 1], seed=0)
    rng = np.random.default_rng(0)
    grads = ParamGrads([rng.normal(size=w.shape) for w in mlp.weights], [rng.normal(size=b.shape) for b in mlp.biases])
    before = [p.copy() for p in mlp.parameters()]
    adam_step(mlp, grads, AdamState.zeros_like(mlp), 1e-3)
    for b, a, g in zip(before, mlp.parameters(), [*grads.weights, *grads.biases]):
        # eps perturbs the ratio |g| / (|g| + eps) by at most ~1e-7 for these gradients
        np.testing.assert_allclose(a - b, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_maximize_on_concave_scalar_converges():
    mlp = Mlp([1, 1], [np.array([[1.0]])], [np.zeros(1)])
    state = AdamState.zeros_like(mlp)
    for _ in range(2000):
        w = mlp.weights[0][0, 0]
        grads = ParamGrads([np.array([[-2.0 * w]])], [np.zeros(1)])  # d/dw of -w^2
        adam_step(mlp, grads, state, 1e-2, maximize=True)
    assert abs(mlp.weights[0][0, 0]) < 0.05


def test_adam_shape_mismatch():
    mlp = mlp_init([2, 3, 1], seed=0)
    bad = ParamGrads([np.zeros((2, 2)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ContractError):
        adam_step(mlp, bad, AdamState.zeros_like(mlp), 1e-3)


def test_standardizer_round_trip_and_constant_column():
    x = np.random.default_rng(0).normal(3.0, 5.0, size=(200, 3))
    x[:, 1] = 7.0
    st_ = InputStandardizer().fit(x)
    z = st_.transform(x)
    np.testing.assert_allclose(z[:, [0, 2]].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z[:, [0, 2]].std(axis=0), 1.0)
    assert st_.scale_[1] == 1.0
    np.testing.assert_allclose(st_.inverse_transform(z), x)


def test_critic_file_round_trip(tmp_path):
    mlp = mlp_init([3, 9, 4, 1], seed=5)
    standardizer = InputStandardizer().fit(np.random.default_rng(1).normal(size=(50, 3)))
    path = tmp_path / "critic.txt"
    save_critic(path, mlp, standardizer)
    mlp2, st2 = load_critic(path)
    x = np.random.default_rng(2).normal(size=(10, 3))
    a = Critic(mlp, standardizer).scores(x)
    b = Critic(mlp2, st2).scores(x)
    np.testing.assert_array_equal(a, b)
    save_critic(tmp_path / "again.txt", mlp2, st2)
    assert path.read_bytes() == (tmp_path / "again.txt").read_bytes()


def test_critic_file_without_standardizer(tmp_path):
    mlp = mlp_init([2, 3, 1], seed=0)
    save_critic(tmp_path / "c.txt", mlp)
    loaded, standardizer = load_critic(tmp_path / "c.txt")
    assert standardizer is None
    np.testing.assert_array_equal(loaded.weights[0], mlp.weights[0])


@pytest.mark.parametrize("damage", ["header", "truncate", "nan", "shape"])
def test_corrupted_critic_file_names_the_file(tmp_path, damage):
    path = tmp_path / "critic.txt"
    save_critic(path, mlp_init([2, 3, 1], seed=0))
    lines = path.read_text().splitlines()
    if damage == "header":
        lines[0] = "garbage"
    elif damage == "truncate":
        lines = lines[:5]
    elif damage == "nan":
        lines[-1] = "nan"
    else:
        lines[3] = "weight 0 4 2"
    path.write_text("\n".join(lines))
    with pytest.raises(ValueError, match="critic.txt"):
        load_critic(path)


@settings(max_examples=25, deadline=None)
@given(
    hidden=st.lists(st.integers(1, 6), min_size=0, max_size=3),
    n_in=st.integers(1, 4),
    batch=st.integers(1, 5),
    seed=st.integers(0, 2**16),
)
def test_forward_shapes_and_finite(hidden, n_in, batch, seed):
    mlp = mlp_init([n_in, *hidden, 1], seed=seed)
    x = np.random.default_rng(seed).normal(size=(batch, n_in))
    scores, cache = mlp_forward(mlp, x)
    assert scores.shape == (batch,)
    assert np.all(np.isfinite(scores))
    grads, gx = mlp_backward(mlp, cache, np.ones(batch))
    assert gx.shape == x.shape
    assert [g.shape for g in grads.weights] == [w.shape for w in mlp.weights]
