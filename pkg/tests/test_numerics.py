import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffaug.errors import DimensionError, NumericError, ParseError, StructureError
from diffaug.numerics import (
    AdamWConfig,
    Dense,
    MlpParams,
    Var,
    adamw_step,
    as_tensor,
    autodiff as ad,
    gradient,
    init_mlp,
    init_opt_state,
    instance_norm,
    load_checkpoint,
    mlp_forward,
    n_parameters,
    resolve_spec,
    save_checkpoint,
    tree_leaves,
    tree_replace,
)

from conftest import central_difference, relative_error


# ---------------------------------------------------------------- tensors


def test_as_tensor_rejects_nan_and_empty():
    with pytest.raises(NumericError):
        as_tensor([1.0, np.nan])
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((0, 3)))
    assert as_tensor([[1, 2]]).dtype == np.float64


# ---------------------------------------------------------------- mlp forward


def test_zero_weights_give_bias_rows(rng):
    layer = Dense(np.zeros((2, 3)), np.array([0.5, -1.5]))
    params = MlpParams((layer,), (3, 2))
    out = mlp_forward(params, rng.normal(size=(4, 3)))
    assert np.array_equal(out, np.tile([0.5, -1.5], (4, 1)))


def test_identity_single_layer(rng):
    params = MlpParams((Dense(np.eye(3), np.zeros(3)),), (3, 3), slope=0.7)
    x = rng.normal(size=(5, 3))
    assert np.array_equal(mlp_forward(params, x), x)


def test_two_layer_matches_hand_trace():
    w1 = np.array([[1.0, -2.0], [0.5, 0.25], [-1.0, 1.0]])
    b1 = np.array([0.1, -0.2, 0.0])
    w2 = np.array([[2.0, -1.0, 3.0]])
    b2 = np.array([0.5])
    params = MlpParams((Dense(w1, b1), Dense(w2, b2)), (2, 3, 1))
    x = np.array([[0.3, 0.4]])
    # hidden pre-activations: 0.3 - 0.8 + 0.1 = -0.4 ; 0.15 + 0.1 - 0.2 = 0.05 ; -0.3 + 0.4 = 0.1
    hidden = [0.01 * -0.4, 0.05, 0.1]
    expected = 2.0 * hidden[0] - 1.0 * hidden[1] + 3.0 * hidden[2] + 0.5
    assert mlp_forward(params, x)[0, 0] == pytest.approx(expected, abs=1e-15)


def test_mlp_rejects_wrong_width(rng):
    params = init_mlp([4, 3, 2], rng)
    with pytest.raises(DimensionError):
        mlp_forward(params, np.zeros((2, 5)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mlp_overflow_names_layer():
    params = MlpParams((Dense(np.full((2, 2), 1e300), np.zeros(2)), Dense(np.eye(2), np.zeros(2))), (2, 2, 2))
    with pytest.raises(NumericError, match="layer 0"):
        mlp_forward(params, np.full((1, 2), 1e10))


def test_layer_chaining_checked():
    with pytest.raises(DimensionError):
        MlpParams((Dense(np.zeros((3, 2)), np.zeros(3)), Dense(np.zeros((1, 4)), np.zeros(1))), (2, 3, 1))


def test_resolve_sentinel():
    assert resolve_spec([-1, 500, 300, 80], 20) == (20, 500, 300, 80)


def test_init_is_glorot_uniform(rng):
    params = init_mlp([-1, 30, 10], rng, in_dim=50)
    w0 = params.layers[0].weight
    assert w0.shape == (30, 50)
    assert np.abs(w0).max() <= np.sqrt(6 / 80)
    assert all(not layer.bias.any() for layer in params.layers)
    assert n_parameters(params) == 50 * 30 + 30 + 30 * 10 + 10


def test_forward_is_deterministic(rng):
    params = init_mlp([6, 8, 4], rng, norm_mode="instance")
    x = rng.normal(size=(7, 6))
    assert mlp_forward(params, x).tobytes() == mlp_forward(params, x.copy()).tobytes()


# ---------------------------------------------------------------- instance norm


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 9), elements=st.floats(-50, 50)))
def test_instance_norm_moments_without_eps(h):
    h = h + np.linspace(0, 1, 9)  # avoid constant rows
    out = instance_norm(h, eps=0.0)
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-9)
    assert np.allclose(out.var(axis=1), 1.0, atol=1e-9)


def test_instance_norm_variance_with_default_eps(rng):
    h = rng.normal(scale=3.0, size=(5, 16))
    out = instance_norm(h)
    var = h.var(axis=1)
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=1), var / (var + 1e-5), atol=1e-12)


# ---------------------------------------------------------------- gradients


def test_constant_loss_has_zero_gradients(rng):
    params = init_mlp([3, 4, 2], rng)
    loss, grads = gradient(lambda p: 3.0, params)
    assert loss == 3.0
    assert all(not g.any() for g in tree_leaves(grads).values())


def test_linear_loss_gradient_is_input():
    x = np.array([1.5, -2.0, 0.25])
    _, grads = gradient(lambda p, x: ad.sum_(p["w"] * x), {"w": np.ones(3)}, x)
    assert np.array_equal(grads["w"], x)


@pytest.mark.parametrize("norm_mode", ["none", "instance"])
def test_mlp_gradient_matches_finite_differences(rng, norm_mode):
    params = init_mlp([4, 6, 3], rng, norm_mode=norm_mode)
    params = tree_replace(params, {k: v + 0.1 * rng.normal(size=v.shape) for k, v in tree_leaves(params).items()})
    x = rng.normal(size=(5, 4))

    def loss(p):
        out = mlp_forward(p, x)
        return ad.mean(out * out)

    _, grads = gradient(loss, params)
    numeric = central_difference(lambda p: float(loss(p)), params)
    assert relative_error(grads, numeric) < 1e-5


OPS = {
    "exp": lambda a, b: ad.exp(a * 0.3),
    "log": lambda a, b: ad.log(a * a + 1.0),
    "sqrt": lambda a, b: ad.sqrt(a * a + 0.5),
    "div": lambda a, b: a / (b * b + 1.0),
    "sub_neg": lambda a, b: -(a - b),
    "power": lambda a, b: (a * a + 1.0) ** -1.5,
    "matmul": lambda a, b: a @ ad.transpose(b),
    "leaky": lambda a, b: ad.leaky_relu(a, 0.01),
    "clip": lambda a, b: ad.clip(a, -0.5, 0.5),
    "reshape": lambda a, b: ad.reshape(a, (-1,)) * ad.reshape(b, (-1,)),
    "getitem": lambda a, b: a[1:, ::2] * 2.0,
    "concat": lambda a, b: ad.concat([a, b], axis=1),
    "broadcast": lambda a, b: a + ad.sum_(b, axis=0, keepdims=True),
    "mean_axis": lambda a, b: ad.mean(a * b, axis=1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_at_random_points(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    op = OPS[name]
    for _ in range(20):
        tree = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}
        # stay away from the kinks of leaky_relu and clip
        tree["a"][np.abs(tree["a"]) < 1e-3] += 0.01
        tree["a"][np.abs(np.abs(tree["a"]) - 0.5) < 1e-3] += 0.01
        w = rng.normal(size=np.shape(op(tree["a"], tree["b"])))

        def f(t):
            return ad.sum_(op(t["a"], t["b"]) * w)

        _, grads = gradient(f, tree)
        numeric = central_difference(lambda t: float(f(t)), tree)
        assert relative_error(grads, numeric) < 1e-5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_rejects_nonfinite_loss():
    v = Var(np.array([0.0]))
    with pytest.raises(NumericError):
        ad.backward(ad.sum_(ad.log(v)))


def test_stop_gradient_cuts_graph():
    _, grads = gradient(lambda p: ad.sum_(ad.stop_gradient(p["w"]) * p["w"]), {"w": np.array([2.0, 3.0])})
    assert np.array_equal(grads["w"], [2.0, 3.0])


# ---------------------------------------------------------------- AdamW


def _reference_adamw(w, g, m, v, t, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    return w - lr * wd * w - lr * mhat / (np.sqrt(vhat) + eps), m, v


def test_adamw_single_scalar_matches_reference():
    params = {"w": np.array([1.0])}
    state = init_opt_state(params, AdamWConfig(learning_rate=1e-3, weight_decay=0.0))
    new, state = adamw_step(params, {"w": np.array([1.0])}, state)
    ref, _, _ = _reference_adamw(1.0, 1.0, 0.0, 0.0, 1, 1e-3, 0.0)
    assert new["w"][0] == pytest.approx(ref, abs=1e-15)
    assert new["w"][0] == pytest.approx(0.999, abs=1e-9)
    assert state.t == 1


def test_adamw_pure_decay():
    params = {"w": np.array([2.0, -4.0])}
    state = init_opt_state(params, AdamWConfig(learning_rate=0.01, weight_decay=0.1))
    new, _ = adamw_step(params, {"w": np.zeros(2)}, state)
    assert np.allclose(new["w"], params["w"] * 0.999, rtol=0, atol=1e-15)


def test_adamw_zero_lr_updates_moments_only():
    params = {"w": np.array([0.3, 0.7])}
    state = init_opt_state(params, AdamWConfig(learning_rate=0.0))
    g = {"w": np.array([1.0, -2.0])}
    new, state = adamw_step(params, g, state)
    assert np.array_equal(new["w"], params["w"])
    assert np.allclose(state.m["w"], 0.1 * g["w"])
    assert np.allclose(state.v["w"], 0.001 * g["w"] ** 2)


def test_adamw_multi_step_against_reference(rng):
    w = rng.normal(size=4)
    params = {"w": w.copy()}
    state = init_opt_state(params, AdamWConfig(learning_rate=0.05, weight_decay=0.01))
    m = v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        params, state = adamw_step(params, {"w": g}, state)
        w, m, v = _reference_adamw(w, g, m, v, t, 0.05, 0.01)
    assert np.allclose(params["w"], w, atol=1e-14)
    assert state.t == 5 and (state.v["w"] >= 0).all()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)), st.floats(0, 1))
def test_adamw_zero_grad_zero_decay_is_identity(w, lr):
    params = {"w": w}
    state = init_opt_state(params, AdamWConfig(learning_rate=lr, weight_decay=0.0))
    new, _ = adamw_step(params, {"w": np.zeros(5)}, state)
    assert np.array_equal(new["w"], w)


def test_adamw_shape_mismatch():
    params = {"w": np.zeros(3)}
    with pytest.raises(DimensionError):
        adamw_step(params, {"w": np.zeros(4)}, init_opt_state(params))


# ---------------------------------------------------------------- trees & checkpoints


def test_tree_replace_strict(rng):
    params = init_mlp([2, 3], rng)
    with pytest.raises(StructureError):
        tree_replace(params, {})


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_mlp([3, 5, 2], rng)
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, tree_leaves(params), {"note": "x"})
    tensors, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for name, arr in tree_leaves(params).items():
        assert np.array_equal(tensors[name], arr)
    restored = tree_replace(params, tensors)
    assert mlp_forward(restored, np.ones((1, 3))).tobytes() == mlp_forward(params, np.ones((1, 3))).tobytes()


def test_checkpoint_bytes_are_deterministic(tmp_path, rng):
    tensors = {"a": rng.normal(size=(2, 3)), "b": np.arange(4.0)}
    save_checkpoint(tmp_path / "1", tensors, {"k": 1})
    save_checkpoint(tmp_path / "2", dict(tensors), {"k": 1})
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ParseError):
        load_checkpoint(bad)
