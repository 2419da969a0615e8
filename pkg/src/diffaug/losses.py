"""Training objectives: InfoNCE, soft contrastive loss and the diffusion loss.

All functions work on plain arrays and on autodiff ``Var`` nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .kernels import EPS_P
from .numerics import autodiff as ad


@dataclass(frozen=True, eq=False)
class ContrastiveBatchView:
    """Similarities over {center ∪ background}.

    ``q`` comes from the low-dimensional space, ``p`` is the soft weight built
    from the high-dimensional space, ``h`` marks positives. The row at
    ``center_index`` is the one scored; every other column is background.
    """

    q: object
    p: object
    h: np.ndarray
    center_index: int = 0

    def __post_init__(self):
        shapes = {np.shape(ad.value(self.q)), np.shape(ad.value(self.p)), np.shape(self.h)}
        if len(shapes) != 1:
            raise DimensionError(f"q, p, h must share a shape, got {shapes}")
        h = np.asarray(self.h)
        if not np.isin(h, (0, 1)).all():
            raise ParameterError("h entries must be 0 or 1")

    def row(self, m):
        return ad.getitem(m, self.center_index) if ad.value(m).ndim == 2 else m

    @property
    def background_mask(self):
        n = np.shape(self.h)[-1]
        mask = np.ones(n)
        mask[self.center_index] = 0.0
        return mask


def clamp_q(q):
    return ad.clip(q, EPS_P, 1.0 - EPS_P)


def bce_terms(target, q):
    """Elementwise −[t log q + (1 − t) log(1 − q)] with q clamped away from {0, 1}.

    The clamp passes no gradient to q outside [EPS_P, 1 − EPS_P].
    """
    t, qv = ad.value(target), ad.value(q)
    qc = np.clip(qv, EPS_P, 1.0 - EPS_P)
    log_q, log_1mq = np.log(qc), np.log1p(-qc)
    out = -(t * log_q + (1.0 - t) * log_1mq)

    def backward(g):
        d_t = g * (log_1mq - log_q)
        inside = (qv >= EPS_P) & (qv <= 1.0 - EPS_P)
        d_q = g * ((1.0 - t) / (1.0 - qc) - t / qc) * inside
        return _fit(d_t, np.shape(t)), d_q

    return ad.primitive(out, (target, q), backward)


def _fit(g, shape):
    return ad._unbroadcast(g, shape) if g.shape != tuple(shape) else g


def soft_contrastive_loss(p, q, mask):
    """Masked sum of binary cross-entropies between soft targets ``p`` and ``q``."""
    return ad.sum_(bce_terms(p, q) * mask)


def hard_contrastive_loss(h, q, mask):
    """The BCE form of contrastive loss: hard 0/1 targets ``h``."""
    return ad.sum_(bce_terms(np.asarray(h, dtype=np.float64), q) * mask)


def scl_loss(view: ContrastiveBatchView):
    """Soft contrastive loss of the center row against its background set."""
    return soft_contrastive_loss(view.row(view.p), view.row(view.q), view.background_mask)


def cl_bce_loss(view: ContrastiveBatchView):
    """Hard-target counterpart of :func:`scl_loss` on the same similarities."""
    return hard_contrastive_loss(view.row(view.h), view.row(view.q), view.background_mask)


def scl_cl_difference_closed_form(view: ContrastiveBatchView):
    """Σ_j (H_cj − P_cj) · log(1/Q_cj − 1): the exact gap cl_bce_loss − scl_loss."""
    qc = clamp_q(view.row(view.q))
    h = np.asarray(view.row(view.h), dtype=np.float64)
    logit = ad.log(1.0 / qc - 1.0)
    return ad.sum_((h - view.row(view.p)) * logit * view.background_mask)


def infonce_loss(q_pos, q_negs=()):
    """−log q⁺ + log(q⁺ + Σ q⁻) for one positive and any number of negatives."""
    if np.any(ad.value(q_pos) <= 0):
        raise ParameterError("positive similarity must be > 0")
    q_negs = q_negs if ad.is_var(q_negs) else np.asarray(q_negs, dtype=np.float64)
    neg_total = ad.sum_(q_negs) if np.size(ad.value(q_negs)) else 0.0
    return -ad.log(q_pos) + ad.log(q_pos + neg_total)


def infonce_rows(q, pos_mask, neg_mask):
    """Batched InfoNCE: one term per positive entry of ``pos_mask``.

    Row i scores each of its positives against all entries flagged in
    ``neg_mask[i]``. Returns the sum over all positive entries.
    """
    neg_total = ad.sum_(q * neg_mask, axis=1, keepdims=True)
    qc = ad.clip(q, EPS_P, np.inf)
    terms = -ad.log(qc) + ad.log(qc + neg_total)
    return ad.sum_(terms * pos_mask)


def diffusion_loss(g_out, delta):
    """Mean over the batch of ‖δ − g‖²."""
    gv, dv = ad.value(g_out), ad.value(delta)
    if gv.shape != dv.shape:
        raise DimensionError(f"prediction {gv.shape} vs noise {dv.shape}")
    diff = delta - g_out
    if gv.ndim == 1:
        return ad.sum_(diff * diff)
    return ad.sum_(diff * diff) / gv.shape[0]
