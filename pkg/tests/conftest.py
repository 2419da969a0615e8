import numpy as np
import pytest

from diffaug.numerics import tree_leaves, tree_replace


def central_difference(fn, tree, h=1e-6):
    """Numerical gradient of scalar ``fn(tree)`` for every leaf of ``tree``."""
    leaves = tree_leaves(tree)
    grads = {}
    for name, leaf in leaves.items():
        g = np.zeros_like(leaf)
        for idx in np.ndindex(leaf.shape):
            plus, minus = leaf.copy(), leaf.copy()
            plus[idx] += h
            minus[idx] -= h
            fp = fn(tree_replace(tree, {name: plus}, strict=False))
            fm = fn(tree_replace(tree, {name: minus}, strict=False))
            g[idx] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


FD_RESOLUTION = 1e-7


def relative_error(analytic, numeric):
    """Largest per-tensor ‖a − n‖ / max(‖a‖, ‖n‖).

    A tensor whose analytic and numeric gradients are both below the
    resolution of central differences counts as agreeing (error 0).
    """
    a, n = tree_leaves(analytic), numeric
    worst = 0.0
    for name, g in n.items():
        scale = max(np.linalg.norm(a[name]), np.linalg.norm(g))
        if scale < FD_RESOLUTION:
            continue
        worst = max(worst, np.linalg.norm(a[name] - g) / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
