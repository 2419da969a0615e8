"""Nested parameter containers (dataclasses, dicts, lists) treated as trees.

Leaves are arrays or :class:`~diffaug.numerics.autodiff.Var` nodes; anything
else (ints, strings, None) is static structure and passes through untouched.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..errors import StructureError
from .autodiff import Var


def _is_leaf(x):
    return isinstance(x, (np.ndarray, Var))


def tree_leaves(tree, prefix=""):
    """Flatten ``tree`` into an ordered ``{dotted.path: leaf}`` dict."""
    out = {}
    _collect(tree, prefix, out)
    return out


def _join(prefix, key):
    return f"{prefix}.{key}" if prefix else str(key)


def _collect(node, prefix, out):
    if _is_leaf(node):
        out[prefix] = node
    elif dataclasses.is_dataclass(node) and not isinstance(node, type):
        for f in dataclasses.fields(node):
            _collect(getattr(node, f.name), _join(prefix, f.name), out)
    elif isinstance(node, dict):
        for k in node:
            _collect(node[k], _join(prefix, k), out)
    elif isinstance(node, (list, tuple)):
        for i, item in enumerate(node):
            _collect(item, _join(prefix, i), out)


def tree_map(fn, tree, *rest):
    """Apply ``fn`` leafwise across trees of identical structure."""
    if _is_leaf(tree):
        return fn(tree, *rest)
    if dataclasses.is_dataclass(tree) and not isinstance(tree, type):
        changes = {}
        for f in dataclasses.fields(tree):
            sub = getattr(tree, f.name)
            mapped = tree_map(fn, sub, *(getattr(r, f.name) for r in rest))
            if mapped is not sub:
                changes[f.name] = mapped
        return dataclasses.replace(tree, **changes) if changes else tree
    if isinstance(tree, dict):
        return {k: tree_map(fn, v, *(r[k] for r in rest)) for k, v in tree.items()}
    if isinstance(tree, (list, tuple)):
        items = [tree_map(fn, v, *(r[i] for r in rest)) for i, v in enumerate(tree)]
        return type(tree)(items)
    return tree


def tree_replace(tree, leaves, strict=True):
    """Rebuild ``tree`` with leaves taken from a ``{path: leaf}`` mapping.

    With ``strict`` every path must be present; otherwise missing paths keep
    their current leaf.
    """
    paths = iter(tree_leaves(tree))

    def pick(leaf):
        path = next(paths)
        if path in leaves:
            return leaves[path]
        if strict:
            raise StructureError(f"no value for parameter {path!r}")
        return leaf

    return tree_map(pick, tree)
