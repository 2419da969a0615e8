import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffaug.diffusion import (
    NoiseSchedule,
    denoise_step,
    denoiser_forward,
    denoiser_loss,
    denoiser_loss_full,
    fit_denoiser,
    forward_noise,
    generate,
    init_denoiser,
    make_schedule,
    sample,
    time_encode,
    zero_output,
)
from diffaug.errors import DimensionError, ParameterError
from diffaug.numerics import AdamWConfig, gradient, tree_leaves, tree_replace
from diffaug.numerics.mlp import Dense

from conftest import central_difference, relative_error


# ---------------------------------------------------------------- schedule


def test_single_step_schedule():
    s = make_schedule(1, 1e-4, 0.02)
    assert s.alpha_bar[0] == s.alpha[0] == 1 - 1e-4
    assert s.sigma[0] == 0.0


def test_long_schedule_against_cumprod_oracle():
    s = make_schedule(1000, 1e-4, 0.02)
    prod = 1.0
    for k in range(1000):
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * k / 999)
    assert abs(s.alpha_bar[-1] - prod) < 1e-12
    assert s.alpha_bar[-1] < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.floats(1e-5, 0.1), st.floats(0, 0.5))
def test_schedule_invariants(T, b0, extra):
    s = make_schedule(T, b0, min(b0 + extra, 0.9))
    assert ((s.alpha > 0) & (s.alpha < 1)).all()
    assert (np.diff(s.alpha_bar) < 0).all()
    assert s.alpha_bar[0] == s.alpha[0]
    assert (s.sigma >= 0).all() and s.sigma[0] == 0.0
    prev = np.concatenate([[1.0], s.alpha_bar[:-1]])
    assert np.allclose(s.sigma**2, (1 - prev) / (1 - s.alpha_bar) * (1 - s.alpha), rtol=1e-12)


def test_schedule_rejects_bad_ranges():
    with pytest.raises(ParameterError):
        make_schedule(0)
    with pytest.raises(ParameterError):
        make_schedule(10, 0.1, 0.01)
    with pytest.raises(ParameterError):
        make_schedule(10).check_t(11)


# ---------------------------------------------------------------- forward process


def test_forward_noise_examples(rng):
    x0 = rng.normal(size=(3, 2))
    s = make_schedule(5, 1e-6, 1e-3)
    delta = rng.normal(size=(3, 2))
    xt = forward_noise(x0, 1, delta, s)
    assert np.all(np.linalg.norm(xt - x0, axis=1) <= math.sqrt(1 - s.alpha_bar[0]) * np.linalg.norm(delta, axis=1) + 1e-6)
    assert np.array_equal(forward_noise(x0, 3, np.zeros_like(x0), s), math.sqrt(s.alpha_bar[2]) * x0)


def test_forward_noise_arithmetic():
    s = NoiseSchedule(1, np.array([0.36]), np.array([0.64]), np.array([0.64]), np.array([0.0]))
    assert np.allclose(forward_noise(np.array([1.0, 0.0]), 1, np.array([0.0, 1.0]), s), [0.8, 0.6], atol=1e-15)


def test_forward_noise_variance_contract():
    rng = np.random.default_rng(0)
    s = make_schedule(50, 1e-4, 0.2)
    x0 = 2.0 * rng.standard_normal((50_000, 1))
    for t in (1, 10, 50):
        xt = forward_noise(x0, t, rng.standard_normal(x0.shape), s)
        want = s.alpha_bar[t - 1] * 4.0 + (1 - s.alpha_bar[t - 1])
        assert abs(xt.var() / want - 1) < 0.05


def test_forward_noise_shape_check():
    with pytest.raises(DimensionError):
        forward_noise(np.zeros((2, 3)), 1, np.zeros((2, 2)), make_schedule(3))


# ---------------------------------------------------------------- time encoding


def test_time_encoding_examples():
    assert np.array_equal(time_encode(0, 4), [0, 0, 1, 1])
    enc = time_encode(0, 32)
    assert not enc[:16].any() and (enc[16:] == 1).all()
    assert np.allclose(time_encode(1, 2), [math.sin(1), math.cos(1)], atol=1e-15)
    with pytest.raises(ParameterError):
        time_encode(1, 3)


# ---------------------------------------------------------------- denoiser & sampler


def test_zero_denoiser_step_divides_by_sqrt_alpha(rng):
    s = make_schedule(10, 1e-3, 0.1)
    den = zero_output(init_denoiser(3, 2, rng, time_dim=8, mid_dim=8, n_blocks=2))
    x = rng.normal(size=3)
    out = denoise_step(x, 6, rng.normal(size=2), den, s, np.zeros(3))
    assert np.allclose(out, x / math.sqrt(s.alpha[5]), rtol=1e-15)


def test_last_step_ignores_noise(rng):
    s = make_schedule(10)
    den = init_denoiser(3, 2, rng, time_dim=8, mid_dim=8, n_blocks=2)
    x, z = rng.normal(size=3), rng.normal(size=2)
    a = denoise_step(x, 1, z, den, s, np.zeros(3))
    b = denoise_step(x, 1, z, den, s, 1e6 * np.ones(3))
    assert np.array_equal(a, b)


def test_step_arithmetic(rng):
    s = NoiseSchedule(1, np.array([0.01]), np.array([0.99]), np.array([0.5]), np.array([0.0]))
    den = init_denoiser(1, 0, rng, time_dim=4, mid_dim=4, n_blocks=1)
    den = replace(den, out=Dense(np.zeros((1, 1)), np.array([0.2])))
    out = denoise_step(np.array([1.0]), 1, None, den, s, np.zeros(1))
    oracle = (1.0 - 0.01 / math.sqrt(0.5) * 0.2) / math.sqrt(0.99)
    assert out[0] == pytest.approx(oracle, abs=1e-14)
    assert out[0] == pytest.approx(1.0022, abs=1e-4)


def test_one_step_generation_closed_form(rng):
    s = make_schedule(1, 1e-3, 1e-3)
    den = zero_output(init_denoiser(4, 3, rng, time_dim=8, mid_dim=8, n_blocks=2))
    out = generate(np.ones(3), den, s, 42)
    delta = np.random.default_rng(42).standard_normal((1, 4))[0]
    assert np.allclose(out, delta / math.sqrt(s.alpha[0]), rtol=1e-15)


def test_generate_is_pure(rng):
    s = make_schedule(10, 1e-3, 0.3)
    den = init_denoiser(3, 2, rng, time_dim=8, mid_dim=16, n_blocks=2)
    z = rng.normal(size=2)
    assert generate(z, den, s, 7).tobytes() == generate(z, den, s, 7).tobytes()
    assert not np.array_equal(generate(z, den, s, 7), generate(z, den, s, 8))


def test_sample_matches_chained_steps(rng):
    s = make_schedule(6, 1e-3, 0.3)
    den = init_denoiser(3, 2, rng, time_dim=8, mid_dim=16, n_blocks=3)
    z = rng.normal(size=(4, 2))
    fast = sample(z, den, s, np.random.default_rng(5))
    r = np.random.default_rng(5)
    x = r.standard_normal((4, 3))
    for t in range(6, 0, -1):
        noise = r.standard_normal(x.shape) if t > 1 else None
        x = denoise_step(x, t, z, den, s, noise if noise is not None else np.zeros_like(x))
    assert np.allclose(fast, x, rtol=1e-13, atol=1e-13)


def test_condition_required(rng):
    den = init_denoiser(3, 2, rng, time_dim=8, mid_dim=8, n_blocks=1)
    with pytest.raises(DimensionError):
        denoiser_forward(den, np.zeros((1, 3)), 1, None)


def test_single_point_reconstruction():
    rng = np.random.default_rng(0)
    target = np.array([1.5, -0.5])
    s = make_schedule(10, 1e-4, 0.5)
    den = init_denoiser(2, 0, rng, mid_dim=32, n_blocks=2)
    den, _ = fit_denoiser(den, np.tile(target, (64, 1)), s, rng, 3000, 64, AdamWConfig(3e-3, 0.0))
    out = sample(None, den, s, np.random.default_rng(1), n=200)
    assert np.median(np.linalg.norm(out - target, axis=1)) < 0.1
    assert np.linalg.norm(out.mean(axis=0) - target) < 0.1


# ---------------------------------------------------------------- gradients


def _perturbed(den, rng):
    leaves = tree_leaves(den)
    return tree_replace(den, {k: v + 0.05 * rng.normal(size=v.shape) for k, v in leaves.items()})


def test_denoiser_loss_gradient(rng):
    s = make_schedule(20, 1e-3, 0.2)
    den = _perturbed(init_denoiser(3, 2, rng, time_dim=4, mid_dim=6, n_blocks=2), rng)
    x0, z = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    t = rng.integers(1, 21, size=4)
    delta = rng.normal(size=(4, 3))
    _, g = gradient(denoiser_loss, den, x0, z, t, delta, s)
    numeric = central_difference(lambda d: float(denoiser_loss(d, x0, z, t, delta, s)), den)
    assert relative_error(g, numeric) < 1e-5


def test_full_sum_is_sum_of_per_step_losses(rng):
    s = make_schedule(4, 1e-3, 0.3)
    den = init_denoiser(2, 1, rng, time_dim=4, mid_dim=4, n_blocks=1)
    x0, z = rng.normal(size=(3, 2)), rng.normal(size=(3, 1))
    deltas = rng.normal(size=(4, 3, 2))
    total = sum(denoiser_loss(den, x0, z, t, deltas[t - 1], s) for t in range(1, 5))
    assert denoiser_loss_full(den, x0, z, deltas, s) == pytest.approx(total, rel=1e-14)


def test_fit_denoiser_ema_average(rng):
    s = make_schedule(5, 1e-3, 0.3)
    den = init_denoiser(2, 0, rng, time_dim=4, mid_dim=4, n_blocks=1)
    x = rng.normal(size=(16, 2))
    last, _ = fit_denoiser(den, x, s, np.random.default_rng(0), 1, batch_size=8)
    avg, _ = fit_denoiser(den, x, s, np.random.default_rng(0), 1, batch_size=8, ema=0.9)
    a0, a1, av = tree_leaves(den), tree_leaves(last), tree_leaves(avg)
    for k in a0:
        assert np.allclose(av[k], 0.9 * a0[k] + 0.1 * a1[k], rtol=0, atol=1e-15)
    with pytest.raises(ParameterError):
        fit_denoiser(den, x, s, rng, 1, ema=1.0)
