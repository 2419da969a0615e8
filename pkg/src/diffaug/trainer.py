"""Alternating training: encoder updates on soft contrastive loss (A stages) and
denoiser updates on the diffusion loss (B stages), with generated positives
replacing hand-made ones at probability λ once a denoiser exists.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import AugmentConfig, RunConfig, validate
from .diffusion import Denoiser, NoiseSchedule, denoiser_loss, denoiser_loss_full, init_denoiser, make_schedule, sample
from .errors import DimensionError, NumericError, ParameterError, SamplingError
from .losses import infonce_rows, soft_contrastive_loss
from .numerics import (
    AdamWConfig,
    MlpParams,
    adamw_step,
    gradient,
    init_mlp,
    init_opt_state,
    mlp_forward,
)
from .numerics import autodiff as ad

log = logging.getLogger(__name__)

NEGATIVE, HAND, GENERATED = "dataset-negative", "hand-augmented", "generated"

# independent RNG stream ids, combined with (seed, epoch counter)
_INIT, _SHUFFLE_A, _AUGMENT, _REPLACE, _GENERATE, _SHUFFLE_B, _DIFFUSION = range(7)


@dataclass(frozen=True, eq=False)
class Encoder:
    """Trunk maps x to the high-dimensional y; head maps y to the low-dimensional z."""

    trunk: MlpParams
    head: MlpParams

    @property
    def in_dim(self):
        return self.trunk.in_dim

    @property
    def z_dim(self):
        return self.head.out_dim


def init_encoder(in_dim, rng, trunk=(-1, 500, 300, 80), z_dim=16, norm_mode="none") -> Encoder:
    trunk_params = init_mlp(trunk, rng, in_dim=in_dim, norm_mode=norm_mode)
    head = init_mlp([trunk_params.out_dim, z_dim], rng)
    return Encoder(trunk_params, head)


def encode(enc: Encoder, x):
    y = mlp_forward(enc.trunk, x)
    return y, mlp_forward(enc.head, y)


# -- augmentation and background sets ---------------------------------------


def hand_augment(x, kind: AugmentConfig, partner=None, rng=None):
    """Hand-designed positive(s) for ``x`` (one row or a batch of rows)."""
    x = np.asarray(x, dtype=np.float64)
    if kind.kind == "gaussian":
        if kind.sigma < 0:
            raise ParameterError("noise scale must be nonnegative")
        if kind.sigma == 0:
            return x.copy()
        return x + kind.sigma * rng.standard_normal(x.shape)
    if kind.kind == "mixup":
        if partner is None:
            raise ParameterError("mixup needs a partner sample")
        if not (0.0 <= kind.mix_low <= kind.mix_high <= 1.0):
            raise ParameterError("mix coefficients must lie in [0, 1]")
        partner = np.asarray(partner, dtype=np.float64)
        if partner.shape != x.shape:
            raise DimensionError(f"partner {partner.shape} vs sample {x.shape}")
        shape = x.shape[:-1] + (1,)
        m = kind.mix_low if kind.mix_low == kind.mix_high else rng.uniform(kind.mix_low, kind.mix_high, size=shape)
        return m * x + (1.0 - m) * partner
    if kind.kind == "mask":
        if not (0.0 <= kind.mask_fraction < 1.0):
            raise ParameterError("mask fraction must lie in [0, 1)")
        rows = np.atleast_2d(x).copy()
        n_mask = int(round(kind.mask_fraction * rows.shape[1]))
        for row in rows:
            row[rng.permutation(rows.shape[1])[:n_mask]] = 0.0
        return rows.reshape(x.shape)
    raise ParameterError(f"unknown augmentation {kind.kind!r}")


@dataclass(frozen=True)
class Stage:
    kind: str  # "A", "B" or "AB" (synchronous)
    epochs: int


@dataclass(frozen=True)
class StagePlan:
    stages: tuple
    lam: float = 0.1
    batch_size: int = 256
    positives_per_center: int = 1

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ParameterError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.stages:
            raise ParameterError("a plan needs at least one stage")
        for s in self.stages:
            if s.kind not in ("A", "B", "AB") or s.epochs < 1:
                raise ParameterError(f"invalid stage {s}")
        if self.stages[0].kind == "B":
            raise ParameterError("the first stage must train the encoder")
        if not (1 <= self.positives_per_center < self.batch_size):
            raise ParameterError("positives_per_center must be in [1, batch_size)")

    @classmethod
    def from_config(cls, cfg: RunConfig):
        t = cfg.trainer
        stages = tuple(Stage(k, int(e)) for k, e in t.stages)
        return cls(stages, t.lam, t.batch_size, t.positives_per_center)

    @property
    def total_epochs(self):
        return sum(s.epochs for s in self.stages)


@dataclass(frozen=True, eq=False)
class Streams:
    """Named RNG streams so that, e.g., changing λ never perturbs batch composition."""

    negatives: np.random.Generator
    augment: np.random.Generator
    replace: np.random.Generator
    generate: np.random.Generator

    @classmethod
    def from_seed(cls, seed, counter=0):
        return cls(*(np.random.default_rng([seed, sid, counter]) for sid in (_SHUFFLE_A, _AUGMENT, _REPLACE, _GENERATE)))


@dataclass(frozen=True, eq=False)
class BackgroundBatch:
    center: np.ndarray
    companions: np.ndarray  # [B × d]
    h: np.ndarray  # [B]
    provenance: tuple

    def __post_init__(self):
        if len(self.provenance) != len(self.h) or self.companions.shape[0] != len(self.h):
            raise DimensionError("companions, h and provenance must have one entry per companion")
        for hj, tag in zip(self.h, self.provenance):
            if (hj == 0) != (tag == NEGATIVE) or tag not in (NEGATIVE, HAND, GENERATED):
                raise ParameterError(f"indicator {hj} inconsistent with provenance {tag!r}")
        if not (self.h == 1).any() or not (self.h == 0).any():
            raise SamplingError("a background set needs at least one positive and one negative")

    def counts(self):
        return {tag: self.provenance.count(tag) for tag in (NEGATIVE, HAND, GENERATED)}

    def as_center_batch(self):
        rows = np.vstack([self.center[None], self.companions])
        h = np.concatenate([[1.0], self.h])[None]
        include = np.concatenate([[0.0], np.ones(len(self.h))])[None]
        return CenterBatch(rows, 1, h, include, (HAND,) + self.provenance)


@dataclass(frozen=True, eq=False)
class CenterBatch:
    """Several background sets sharing one forward pass.

    ``rows`` stacks the centers first; ``h[i]`` and ``include[i]`` mark, for
    center i, which rows are its positives and which belong to its background.
    """

    rows: np.ndarray
    n_centers: int
    h: np.ndarray
    include: np.ndarray
    provenance: tuple = ()


def _generate_positives(z, den, sched, rng):
    return sample(z, den, sched, rng)


def sample_background(data, x_c, plan: StagePlan, encoder: Encoder, denoiser, sched, streams: Streams,
                      augment: AugmentConfig = AugmentConfig()) -> BackgroundBatch:
    """One center's background set: uniform dataset negatives plus positives that
    start as hand augmentations and are each swapped for a generated sample with
    probability λ (λ is treated as 0 while no denoiser is available).
    """
    data = np.asarray(data, dtype=np.float64)
    x_c = np.asarray(x_c, dtype=np.float64)
    p = plan.positives_per_center
    n_neg = plan.batch_size - p
    if data.shape[0] < n_neg:
        raise SamplingError(f"dataset has {data.shape[0]} rows, background needs {n_neg} negatives")
    negatives = data[streams.negatives.choice(data.shape[0], n_neg, replace=False)]
    base = np.repeat(x_c[None], p, axis=0)
    partners = data[streams.augment.integers(data.shape[0], size=p)] if augment.kind == "mixup" else None
    positives = hand_augment(base, augment, partners, streams.augment)
    lam = plan.lam if denoiser is not None else 0.0
    swap = streams.replace.random(p) < lam
    if swap.any():
        _, z_c = encode(encoder, x_c[None])
        positives[swap] = _generate_positives(np.repeat(z_c, swap.sum(), axis=0), denoiser, sched, streams.generate)
    tags = tuple(GENERATED if s else HAND for s in swap) + (NEGATIVE,) * n_neg
    h = np.concatenate([np.ones(p), np.zeros(n_neg)])
    return BackgroundBatch(x_c, np.vstack([positives, negatives]), h, tags)


def build_center_batch(data, center_idx, plan: StagePlan, encoder, denoiser, sched, streams: Streams,
                       augment: AugmentConfig, lam=None) -> CenterBatch:
    """Background sets for many centers at once; the other centers serve as negatives."""
    centers = data[center_idx]
    m, p = len(center_idx), plan.positives_per_center
    if m < 2:
        raise SamplingError("need at least two centers per step so each has a negative")
    base = np.repeat(centers, p, axis=0)
    partners = data[streams.augment.integers(data.shape[0], size=m * p)] if augment.kind == "mixup" else None
    positives = hand_augment(base, augment, partners, streams.augment)
    lam = plan.lam if lam is None else lam
    if denoiser is None:
        lam = 0.0
    swap = streams.replace.random(m * p) < lam
    if swap.any():
        _, z = encode(encoder, centers)
        z_rep = np.repeat(z, p, axis=0)[swap]
        positives[swap] = _generate_positives(z_rep, denoiser, sched, streams.generate)
    rows = np.vstack([centers, positives])
    n = rows.shape[0]
    h = np.zeros((m, n))
    include = np.zeros((m, n))
    include[:, :m] = 1.0 - np.eye(m)
    owner = np.repeat(np.arange(m), p)
    h[owner, m + np.arange(m * p)] = 1.0
    include[owner, m + np.arange(m * p)] = 1.0
    tags = (NEGATIVE,) * m + tuple(GENERATED if s else HAND for s in swap)
    return CenterBatch(rows, m, h, include, tags)


# -- losses over a batch -----------------------------------------------------


@dataclass(frozen=True)
class LossSettings:
    loss: str = "scl"
    nu_y: float = 1.0
    nu_z: float = 1.0
    beta: float = 1.0

    @classmethod
    def from_config(cls, cfg: RunConfig):
        e = cfg.encoder
        return cls(e.loss, e.nu_y, e.nu_z, e.beta)


def encoder_loss(enc: Encoder, batch: CenterBatch, settings: LossSettings):
    """Mean over centers of the soft contrastive (or InfoNCE) loss."""
    y, z = encode(enc, batch.rows)
    c = batch.n_centers
    q = kernels.kernel_matrix(ad.getitem(z, slice(0, c)), z, kernels.KernelConfig(settings.nu_z, "z"))
    if settings.loss == "infonce":
        pos = batch.h * batch.include
        neg = (1.0 - batch.h) * batch.include
        return infonce_rows(q, pos, neg) / pos.sum()
    qy = kernels.kernel_matrix(ad.getitem(y, slice(0, c)), y, kernels.KernelConfig(settings.nu_y, "y"))
    p = kernels.soft_weight(qy, batch.h, settings.beta)
    return soft_contrastive_loss(p, q, batch.include) / c


def a_step(batch, encoder: Encoder, opt_state, settings: LossSettings = LossSettings()):
    """One AdamW step of the encoder on the contrastive loss. Returns (encoder', state', loss)."""
    if isinstance(batch, BackgroundBatch):
        batch = batch.as_center_batch()
    loss, grads = gradient(encoder_loss, encoder, batch, settings)
    encoder, opt_state = adamw_step(encoder, grads, opt_state)
    return encoder, opt_state, loss


def b_step(x_c, encoder, denoiser: Denoiser, opt_state, sched: NoiseSchedule, rng, full_sum=False):
    """One AdamW step of the denoiser on the ε-prediction loss.

    The condition comes from the encoder as a plain array, so no gradient can
    reach the encoder parameters.
    """
    x_c = np.asarray(x_c, dtype=np.float64)
    z = None
    if denoiser.cond_proj is not None:
        _, z = encode(encoder, x_c)
        z = ad.stop_gradient(z)
    if full_sum:
        deltas = rng.standard_normal((sched.T,) + x_c.shape)
        loss, grads = gradient(denoiser_loss_full, denoiser, x_c, z, deltas, sched)
    else:
        t = rng.integers(1, sched.T + 1, size=x_c.shape[0])
        delta = rng.standard_normal(x_c.shape)
        loss, grads = gradient(denoiser_loss, denoiser, x_c, z, t, delta, sched)
    denoiser, opt_state = adamw_step(denoiser, grads, opt_state)
    return denoiser, opt_state, loss


# -- schedule ----------------------------------------------------------------


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    stage: str
    loss: float
    wall_ms: float | None = None


@dataclass(eq=False)
class TrainedState:
    encoder: Encoder
    denoiser: Denoiser | None
    history: list = field(default_factory=list)
    stats: object = None  # data.Standardizer used on the training inputs
    schedule: NoiseSchedule | None = None


def _chunks(order, size):
    n_chunks = max(1, int(np.ceil(len(order) / size)))
    return [c for c in np.array_split(order, n_chunks)]


def _b_epoch(x, state, den_opt, sched, seed, counter, batch_size, full_sum):
    shuffle = np.random.default_rng([seed, _SHUFFLE_B, counter])
    rng = np.random.default_rng([seed, _DIFFUSION, counter])
    losses = []
    den = state.denoiser
    for idx in _chunks(shuffle.permutation(x.shape[0]), batch_size):
        den, den_opt, loss = b_step(x[idx], state.encoder, den, den_opt, sched, rng, full_sum)
        losses.append(loss)
    state.denoiser = den
    return den_opt, float(np.mean(losses))


def _a_epoch(x, state, enc_opt, plan, sched, seed, counter, settings, augment, lam):
    streams = Streams.from_seed(seed, counter)
    m = max(2, plan.batch_size - plan.positives_per_center + 1)
    enc = state.encoder
    losses = []
    for idx in _chunks(streams.negatives.permutation(x.shape[0]), m):
        batch = build_center_batch(x, idx, plan, enc, state.denoiser, sched, streams, augment, lam=lam)
        enc, enc_opt, loss = a_step(batch, enc, enc_opt, settings)
        losses.append(loss)
    state.encoder = enc
    return enc_opt, float(np.mean(losses))


def run_schedule(plan: StagePlan, x, config: RunConfig, on_epoch=None) -> TrainedState:
    """Run every stage of ``plan`` on the unlabeled matrix ``x``.

    λ-replacement is active only in encoder epochs that follow some denoiser
    training. Deterministic given ``config.seed``. ``on_epoch(state, row)`` is
    called after every epoch (used for periodic checkpoints).
    """
    from .data import Standardizer

    validate(config)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"training data must be a matrix, got shape {x.shape}")
    stats = Standardizer.fit(x) if config.data.standardize else None
    xs = stats.apply(x) if stats is not None else x

    seed = config.seed
    e, d, t = config.encoder, config.diffusion, config.trainer
    hyper = AdamWConfig(learning_rate=t.learning_rate, weight_decay=t.weight_decay)
    enc = init_encoder(xs.shape[1], np.random.default_rng([seed, _INIT, 0]), e.trunk, e.z_dim, e.norm_mode)
    state = TrainedState(enc, None, [], stats)
    enc_opt = init_opt_state(enc, hyper)
    den_opt = None
    sched = None
    if t.use_diffusion:
        sched = make_schedule(d.T, d.beta_start, d.beta_end)
        state.schedule = sched
        state.denoiser = init_denoiser(
            xs.shape[1], e.z_dim, np.random.default_rng([seed, _INIT, 1]),
            d.time_dim, d.mid_dim, d.n_blocks, d.norm_mode,
        )
        den_lr = t.learning_rate if d.learning_rate is None else d.learning_rate
        den_opt = init_opt_state(state.denoiser, AdamWConfig(learning_rate=den_lr, weight_decay=t.weight_decay))
    den_batch = plan.batch_size if d.batch_size is None else d.batch_size
    settings = LossSettings.from_config(config)

    epoch = 0
    a_count = b_count = 0
    denoiser_trained = False
    for s_idx, stage in enumerate(plan.stages):
        if stage.kind == "B" and not t.use_diffusion:
            log.info("stage %d (B) skipped: diffusion disabled", s_idx)
            continue
        for _ in range(stage.epochs):
            epoch += 1
            start = time.perf_counter()
            try:
                if stage.kind in ("A", "AB"):
                    lam = plan.lam if denoiser_trained else 0.0
                    enc_opt, loss = _a_epoch(xs, state, enc_opt, plan, sched, seed, a_count, settings, t.augment, lam)
                    a_count += 1
                if stage.kind in ("B", "AB") and t.use_diffusion:
                    den_opt, b_loss = _b_epoch(xs, state, den_opt, sched, seed, b_count, den_batch, d.full_sum)
                    b_count += 1
                    denoiser_trained = True
                    if stage.kind == "B":
                        loss = b_loss
            except (NumericError, SamplingError) as exc:
                raise type(exc)(f"stage {s_idx} ({stage.kind}) failed at epoch {epoch}: {exc}") from exc
            wall = (time.perf_counter() - start) * 1000.0 if t.wall_clock else None
            row = HistoryRow(epoch, stage.kind, loss, wall)
            state.history.append(row)
            log.debug("epoch %d stage %s loss %.6f", epoch, stage.kind, loss)
            if on_epoch is not None:
                on_epoch(state, row)
    return state


def ablation_config(mode: str, base: RunConfig) -> RunConfig:
    """Configuration points of the ablation table.

    B1: InfoNCE with hand augmentations only. B2: soft contrastive loss without
    diffusion. B3: InfoNCE with generated positives. B4: synchronous training
    (both losses every epoch). B5: the default alternation.
    """
    from dataclasses import replace

    enc, tr = base.encoder, base.trainer
    if mode == "B1":
        return base.replace(encoder=replace(enc, loss="infonce"), trainer=replace(tr, use_diffusion=False))
    if mode == "B2":
        return base.replace(encoder=replace(enc, loss="scl"), trainer=replace(tr, use_diffusion=False))
    if mode == "B3":
        return base.replace(encoder=replace(enc, loss="infonce"), trainer=replace(tr, use_diffusion=True))
    if mode == "B4":
        total = sum(e for _, e in tr.stages)
        return base.replace(encoder=replace(enc, loss="scl"),
                            trainer=replace(tr, use_diffusion=True, stages=(("AB", total),)))
    if mode == "B5":
        return base.replace(encoder=replace(enc, loss="scl"), trainer=replace(tr, use_diffusion=True))
    raise ParameterError(f"unknown ablation mode {mode!r}")
