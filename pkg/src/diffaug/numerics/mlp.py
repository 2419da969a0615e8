"""Dense feed-forward networks and the generic gradient entry point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, NumericError, ParameterError
from . import autodiff as ad
from .tree import tree_leaves, tree_map

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5
NORM_MODES = ("none", "instance")


def as_tensor(x, name="input"):
    """Validate and convert to a C-contiguous float64 array with finite entries."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 0 or any(n < 1 for n in arr.shape):
        raise DimensionError(f"{name}: every dimension must be >= 1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name}: contains NaN or Inf")
    return arr


@dataclass(frozen=True, eq=False)
class Dense:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Affine stack. ``layer_spec`` holds resolved widths, input first."""

    layers: tuple
    layer_spec: tuple
    slope: float = LEAKY_SLOPE
    norm_mode: str = "none"

    def __post_init__(self):
        if self.norm_mode not in NORM_MODES:
            raise ParameterError(f"norm_mode must be one of {NORM_MODES}, got {self.norm_mode!r}")
        if len(self.layer_spec) != len(self.layers) + 1:
            raise DimensionError("layer_spec must have one more entry than layers")
        for k, layer in enumerate(self.layers):
            want = (self.layer_spec[k + 1], self.layer_spec[k])
            if tuple(layer.weight.shape) != want or tuple(layer.bias.shape) != (want[0],):
                raise DimensionError(
                    f"layer {k}: weight {layer.weight.shape} / bias {layer.bias.shape} "
                    f"do not chain with widths {want}"
                )

    @property
    def in_dim(self):
        return self.layer_spec[0]

    @property
    def out_dim(self):
        return self.layer_spec[-1]


def resolve_spec(layer_spec, in_dim):
    """Replace a leading ``-1`` with the actual input width."""
    spec = [int(w) for w in layer_spec]
    if spec and spec[0] == -1:
        spec[0] = int(in_dim)
    if len(spec) < 2 or any(w < 1 for w in spec):
        raise ParameterError(f"invalid layer widths {layer_spec!r}")
    return tuple(spec)


def init_mlp(layer_spec, rng, in_dim=None, slope=LEAKY_SLOPE, norm_mode="none"):
    """Glorot-uniform weights, zero biases."""
    spec = resolve_spec(layer_spec, in_dim if in_dim is not None else layer_spec[0])
    layers = []
    for fan_in, fan_out in zip(spec[:-1], spec[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Dense(w, np.zeros(fan_out)))
    return MlpParams(tuple(layers), spec, float(slope), norm_mode)


def instance_norm(h, eps=NORM_EPS):
    """Normalize each row across its features; no learned rescale."""
    if not ad.is_var(h):
        centered = h - h.mean(axis=1, keepdims=True)
        var = np.einsum("ij,ij->i", centered, centered)[:, None] / h.shape[1]
        centered /= np.sqrt(var + eps)
        return centered
    mu = ad.mean(h, axis=1, keepdims=True)
    centered = h - mu
    var = ad.mean(centered * centered, axis=1, keepdims=True)
    return centered / ad.sqrt(var + eps)


def dense(layer, x):
    return x @ ad.transpose(layer.weight) + layer.bias


def _check_finite(h, k):
    if not np.isfinite(ad.value(h)).all():
        raise NumericError(f"non-finite activations after layer {k}")


def mlp_forward(params: MlpParams, x):
    """Hidden layers: affine, optional instance norm, leaky ReLU. Last layer: affine only."""
    if ad.value(x).ndim != 2 or ad.value(x).shape[1] != params.in_dim:
        raise DimensionError(f"expected input [batch x {params.in_dim}], got {ad.value(x).shape}")
    h = x
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        h = dense(layer, h)
        if k < last:
            if params.norm_mode == "instance":
                h = instance_norm(h)
            h = ad.leaky_relu(h, params.slope)
    if not np.isfinite(ad.value(h)).all():
        _locate_nonfinite(params, ad.value(x))
    return h


def _locate_nonfinite(params, x):
    # replay the forward pass to name the first layer that lost finiteness
    with np.errstate(all="ignore"):
        h = x
        for k, layer in enumerate(params.layers):
            h = dense(layer, h)
            if k < len(params.layers) - 1:
                if params.norm_mode == "instance":
                    h = instance_norm(h)
                h = ad.leaky_relu(h, params.slope)
            _check_finite(h, k)


def gradient(loss_fn, params, *inputs):
    """Return ``(loss, grads)`` where ``grads`` mirrors the structure of ``params``.

    ``loss_fn(params, *inputs)`` must build a scalar from the parameter tree.
    ``inputs`` are constants; wrap intermediate values with
    :func:`~diffaug.numerics.autodiff.stop_gradient` to cut the graph.
    """
    wrapped = tree_map(lambda leaf: ad.Var(ad.value(leaf)), params)
    loss = loss_fn(wrapped, *inputs)
    if not isinstance(loss, ad.Var):
        # no path from params to the loss: all gradients are zero
        val = float(np.asarray(loss))
        if not np.isfinite(val):
            raise NumericError(f"loss is not finite: {val}")
        return val, tree_map(lambda leaf: np.zeros_like(ad.value(leaf)), params)
    ad.backward(loss)
    grads = tree_map(lambda v: np.zeros_like(v.value) if v.grad is None else v.grad, wrapped)
    return float(loss.value), grads


def n_parameters(params):
    return sum(ad.value(v).size for v in tree_leaves(params).values())
