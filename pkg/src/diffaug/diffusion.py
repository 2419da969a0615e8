"""Conditional DDPM: schedule, forward corruption, denoiser network and sampler."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, NumericError, ParameterError
from .losses import diffusion_loss
from .numerics import autodiff as ad
from .numerics import AdamWConfig, MlpParams, adamw_step, gradient, init_mlp, init_opt_state, mlp_forward, tree_map
from .numerics.mlp import Dense, dense


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Arrays indexed by ``t - 1`` for t = 1..T."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def check_t(self, t):
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ParameterError(f"timestep must lie in [1, {self.T}], got {t}")
        return t_arr.astype(np.int64) - 1


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    """Linear β schedule with cumulative ᾱ and the posterior-variance σ."""
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    T = int(T)
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start], dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma = np.sqrt((1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta)
    return NoiseSchedule(T, beta, alpha, alpha_bar, sigma)


def forward_noise(x0, t, delta, sched: NoiseSchedule):
    """x_t = √ᾱ_t x0 + √(1 − ᾱ_t) δ. ``t`` may be a scalar or one step per row."""
    x0 = np.asarray(x0, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x0.shape != delta.shape:
        raise DimensionError(f"x0 {x0.shape} and noise {delta.shape} differ")
    idx = sched.check_t(t)
    ab = sched.alpha_bar[idx]
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * delta


def time_encode(t, channels):
    """Sinusoidal encoding: sin(t·ω_k) then cos(t·ω_k), ω_k = 10000^(−2k/channels)."""
    if channels < 2 or channels % 2:
        raise ParameterError(f"time encoding needs an even channel count, got {channels}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ParameterError("timestep must be nonnegative")
    inv_freq = 1.0 / 10000 ** (np.arange(0, channels, 2, dtype=np.float64) / channels)
    angles = t[..., None] * inv_freq
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass(frozen=True, eq=False)
class Denoiser:
    """Noise predictor g(x_t, t, z).

    Time encoding and projected condition are added to the data-width input
    of every residual block; block k's output is added to block k−1's.
    """

    blocks: tuple  # MlpParams [data, mid, data] each
    time_proj: MlpParams
    cond_proj: MlpParams | None
    out: Dense
    time_dim: int
    cond_dim: int

    @property
    def data_dim(self):
        return self.blocks[0].in_dim


def init_denoiser(data_dim, cond_dim, rng, time_dim=32, mid_dim=128, n_blocks=4, norm_mode="instance"):
    if n_blocks < 1:
        raise ParameterError("need at least one residual block")
    blocks = tuple(init_mlp([data_dim, mid_dim, data_dim], rng, norm_mode=norm_mode) for _ in range(n_blocks))
    time_proj = init_mlp([time_dim, mid_dim, data_dim], rng)
    cond_proj = init_mlp([cond_dim, mid_dim, data_dim], rng) if cond_dim > 0 else None
    limit = np.sqrt(6.0 / (2 * data_dim))
    out = Dense(rng.uniform(-limit, limit, size=(data_dim, data_dim)), np.zeros(data_dim))
    return Denoiser(blocks, time_proj, cond_proj, out, int(time_dim), int(cond_dim))


def zero_output(den: Denoiser) -> Denoiser:
    """Copy of ``den`` whose prediction is identically zero."""
    return replace(den, out=Dense(np.zeros_like(ad.value(den.out.weight)), np.zeros_like(ad.value(den.out.bias))))


def _cond_offset(den: Denoiser, z, n):
    if den.cond_proj is None:
        return 0.0
    if z is None:
        raise DimensionError("conditional denoiser needs a condition vector")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (n, z.shape[0]))
    return mlp_forward(den.cond_proj, z)


def _time_offset(den: Denoiser, t, n):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        # one encoding shared by the whole batch
        return mlp_forward(den.time_proj, time_encode(t[None], den.time_dim))
    return mlp_forward(den.time_proj, time_encode(np.broadcast_to(t, (n,)), den.time_dim))


def _blocks_forward(den: Denoiser, x_t, extra):
    h = mlp_forward(den.blocks[0], x_t + extra)
    for block in den.blocks[1:]:
        h = mlp_forward(block, h + extra) + h
    return dense(den.out, h)


def denoiser_forward(den: Denoiser, x_t, t, z=None):
    """Predicted noise for a batch. ``t`` is a scalar or one step per row."""
    n = ad.value(x_t).shape[0]
    extra = _time_offset(den, t, n) + _cond_offset(den, z, n)
    return _blocks_forward(den, x_t, extra)


def _reverse_update(x_t, i, g, sched, noise):
    mean = (x_t - (1.0 - sched.alpha[i]) / np.sqrt(1.0 - sched.alpha_bar[i]) * g) / np.sqrt(sched.alpha[i])
    if i == 0:
        return mean
    return mean + sched.sigma[i] * np.asarray(noise, dtype=np.float64)


def denoise_step(x_t, t, z_cond, den: Denoiser, sched: NoiseSchedule, noise):
    """x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t) · g) / √α_t + σ_t · noise (noise ignored at t=1)."""
    i = int(sched.check_t(t))
    x_t = np.asarray(x_t, dtype=np.float64)
    squeeze = x_t.ndim == 1
    xb = x_t[None] if squeeze else x_t
    g = denoiser_forward(den, xb, t, z_cond)
    return _reverse_update(x_t, i, g[0] if squeeze else g, sched, noise)


def sample(z_cond, den: Denoiser, sched: NoiseSchedule, rng, n=None):
    """Reverse-diffuse a batch. ``z_cond`` is [n×cond_dim] (or None with ``n`` given).

    Equivalent to chaining :func:`denoise_step` from t=T down to 1, with the
    condition and time projections computed once instead of at every step.
    """
    if z_cond is not None:
        z_cond = np.asarray(z_cond, dtype=np.float64)
        n = z_cond.shape[0]
    cond = _cond_offset(den, z_cond, n)
    steps = np.arange(1, sched.T + 1, dtype=np.float64)
    time_table = mlp_forward(den.time_proj, time_encode(steps, den.time_dim))
    x = rng.standard_normal((n, den.data_dim))
    for t in range(sched.T, 0, -1):
        noise = rng.standard_normal(x.shape) if t > 1 else None
        g = _blocks_forward(den, x, time_table[t - 1] + cond)
        x = _reverse_update(x, t - 1, g, sched, noise)
        if not np.isfinite(x).all():
            raise NumericError(f"sampler produced non-finite values at step t={t}")
    return x


def generate(z_cond, den: Denoiser, sched: NoiseSchedule, rng_seed):
    """One sample conditioned on ``z_cond`` [cond_dim]; a pure function of its inputs."""
    rng = np.random.default_rng(rng_seed)
    z = None if z_cond is None else np.asarray(z_cond, dtype=np.float64)[None]
    return sample(z, den, sched, rng, n=1)[0]


def denoiser_loss(den: Denoiser, x0, z, t, delta, sched: NoiseSchedule):
    """ε-prediction loss for given per-row timesteps and noise."""
    x_t = forward_noise(x0, t, delta, sched)
    return diffusion_loss(denoiser_forward(den, x_t, t, z), delta)


def denoiser_loss_full(den: Denoiser, x0, z, deltas, sched: NoiseSchedule):
    """Sum of the ε-prediction loss over every t = 1..T (small T only).

    ``deltas`` has shape [T, n, d]: one noise draw per step.
    """
    total = 0.0
    for t in range(1, sched.T + 1):
        total = total + denoiser_loss(den, x0, z, t, deltas[t - 1], sched)
    return total


def fit_denoiser(den: Denoiser, x, sched: NoiseSchedule, rng, steps, batch_size=128, hyper=None, z=None, ema=None):
    """Train ``den`` on rows of ``x`` (with optional conditions ``z``) by minibatch AdamW.

    With ``ema`` in (0, 1) the returned weights are the exponential moving
    average of the iterates, which smooths out the last steps' optimizer noise.
    Returns ``(denoiser, losses)``.
    """
    if ema is not None and not 0.0 < ema < 1.0:
        raise ParameterError(f"ema decay must lie in (0, 1), got {ema}")
    x = np.asarray(x, dtype=np.float64)
    state = init_opt_state(den, hyper or AdamWConfig(weight_decay=0.0))
    avg = den
    losses = np.empty(steps)
    for i in range(steps):
        idx = rng.integers(0, x.shape[0], size=min(batch_size, x.shape[0]))
        t = rng.integers(1, sched.T + 1, size=idx.size)
        delta = rng.standard_normal((idx.size, x.shape[1]))
        cond = None if z is None else z[idx]
        losses[i], grads = gradient(denoiser_loss, den, x[idx], cond, t, delta, sched)
        den, state = adamw_step(den, grads, state)
        if ema is not None:
            avg = tree_map(lambda a, w: ema * a + (1.0 - ema) * w, avg, den)
    return (den if ema is None else avg), losses
