"""Student-t similarity kernel, pairwise similarity matrices and soft pair weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .numerics import autodiff as ad

EPS_P = 1e-7


@dataclass(frozen=True)
class KernelConfig:
    nu: float = 1.0
    applies_to: str = "z"  # "y" or "z"
    rescale: bool = True

    def __post_init__(self):
        _check_nu(self.nu)
        if self.applies_to not in ("y", "z"):
            raise ParameterError(f"applies_to must be 'y' or 'z', got {self.applies_to!r}")


def _check_nu(nu):
    if not (nu > 0 and math.isfinite(nu)):
        raise ParameterError(f"degrees of freedom must be positive, got {nu}")


@lru_cache(maxsize=256)
def kernel_peak(nu: float) -> float:
    """Kernel value at zero distance: Γ((ν+1)/2) / (√(νπ) Γ(ν/2))."""
    _check_nu(nu)
    return math.exp(math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)) / math.sqrt(nu * math.pi)


def t_kernel(d, nu):
    """Student-t density evaluated at distance ``d`` (scalar or array)."""
    _check_nu(nu)
    d = np.asarray(d, dtype=np.float64)
    if (d < 0).any():
        raise ParameterError("distance must be nonnegative")
    out = kernel_peak(nu) * (1.0 + d * d / nu) ** (-(nu + 1) / 2)
    return float(out) if out.ndim == 0 else out


def sq_distances(a, b):
    """Squared Euclidean distances between rows of ``a`` [m×k] and ``b`` [n×k]."""
    sa = ad.sum_(a * a, axis=1, keepdims=True)
    sb = ad.sum_(b * b, axis=1, keepdims=True)
    d2 = sa + ad.transpose(sb) - 2.0 * (a @ ad.transpose(b))
    return ad.clip(d2, 0.0, np.inf)


def similarity_from_sq(d2, nu, rescale=True):
    """Kernel applied to squared distances; rescaled form has value 1 at d=0."""
    _check_nu(nu)
    base = 1.0 + ad.value(d2) / nu
    q = base ** (-(nu + 1) / 2)
    if not rescale:
        q = q * kernel_peak(nu)
    slope = -(nu + 1) / (2 * nu)
    return ad.primitive(q, (d2,), lambda g: (g * slope * q / base,))


def kernel_matrix(a, b, cfg: KernelConfig):
    """Q[i, j] = kernel(‖a_i − b_j‖) for two sets of rows."""
    return similarity_from_sq(sq_distances(a, b), cfg.nu, cfg.rescale)


def pairwise_q(emb, cfg: KernelConfig | None = None):
    """Symmetric n×n similarity matrix of the rows of ``emb``."""
    cfg = cfg or KernelConfig()
    d2 = sq_distances(emb, emb)
    n = ad.value(emb).shape[0]
    off = 1.0 - np.eye(n)
    # exact zeros on the diagonal and exact symmetry regardless of matmul rounding
    d2 = 0.5 * (d2 + ad.transpose(d2)) * off
    return similarity_from_sq(d2, cfg.nu, cfg.rescale)


def check_beta(beta):
    if not (0.0 <= beta <= 1.0):
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")


def soft_weight(q, h, beta):
    """P = (1 + h(e^β − 1)) q, clamped to [0, 1 − EPS_P]."""
    check_beta(beta)
    boost = 1.0 + np.asarray(h, dtype=np.float64) * math.expm1(beta)
    return ad.clip(q * boost, 0.0, 1.0 - EPS_P)
