"""ConvergeSmooth: loss-drift constraints between adjacent epochs, and weight centralization.

Epoch-level bookkeeping tracks the dataset-mean benign loss ``u`` and
adversarial loss ``u_adv`` of the previous epoch. A sample (example variant)
or a whole batch (batch variant) is penalized only when its benign loss drifts
from ``u`` by more than the convergence stride ``gamma``; ``gamma`` follows the
previous epoch-to-epoch change of ``u``, clamped to ``[gamma_min, gamma_max]``.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attacks import input_gradient

log = logging.getLogger(__name__)

VARIANTS = ("none", "example", "batch")


@dataclass(frozen=True)
class SmoothConfig:
    variant: str = "none"
    w1: float = 0.0              # weight on adversarial-loss drift
    w2: float = 1.0              # weight on benign-loss drift
    w3: float = 0.1              # weight-centralization coefficient
    gamma_max: float = 0.03
    gamma_min: float = 0.02      # gamma_max / 1.5
    centralization: bool = False
    mep_reg: float = 0.0         # weight of the MEP logit regularizer

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("w1", "w2"):
            v = getattr(self, name)
            if not 0 <= v <= 1.5:
                raise ValueError(f"{name} must lie in [0, 1.5], got {v}")
        if self.w3 < 0 or self.mep_reg < 0:
            raise ValueError("w3 and mep_reg must be non-negative")
        if not 0 <= self.gamma_min <= self.gamma_max:
            raise ValueError("need 0 <= gamma_min <= gamma_max")
        if self.centralization and self.mep_reg > 0:
            raise ValueError("weight centralization and the MEP logit regularizer are mutually exclusive")


@dataclass(frozen=True)
class EpochStats:
    """Statistics of the last completed epoch, feeding the next epoch's constraint.

    ``epoch`` counts completed epochs. ``u_prev``/``u_adv_prev`` are undefined
    (None) before the first epoch completes, ``d_prev`` before the second.
    ``gamma`` is the stride the next epoch will use.
    """

    epoch: int = 0
    u_prev: float = None
    u_adv_prev: float = None
    d_prev: float = None
    gamma: float = None

    @property
    def active(self):
        return self.u_prev is not None


def convergence_stride(d_prev, gamma_min, gamma_max):
    return min(max(d_prev, gamma_min), gamma_max)


def condition(ben_loss, u_prev, gamma):
    """True where the benign loss drifted strictly more than ``gamma`` from ``u_prev``."""
    return np.abs(np.asarray(ben_loss, dtype=np.float64) - u_prev) > gamma


class EpochAccumulator:
    """Running size-weighted sums of per-batch mean losses."""

    def __init__(self):
        self.count = 0
        self.ben_sum = 0.0
        self.adv_sum = 0.0
        self.batches = 0

    def add(self, size, ben_mean, adv_mean):
        self.count += int(size)
        self.ben_sum += float(size) * float(ben_mean)
        self.adv_sum += float(size) * float(adv_mean)
        self.batches += 1

    def means(self):
        if self.count == 0:
            raise ValueError("epoch has no batches")
        return self.ben_sum / self.count, self.adv_sum / self.count


def update_epoch_stats(stats, records, gamma_min, gamma_max):
    """Close an epoch. ``records`` is an :class:`EpochAccumulator` or ``(size, ben, adv)`` tuples."""
    if not isinstance(records, EpochAccumulator):
        acc = EpochAccumulator()
        for size, ben, adv in records:
            acc.add(size, ben, adv)
        records = acc
    u, u_adv = records.means()
    if stats.u_prev is None:
        # no drift measured yet: next epoch runs at the widest stride
        d, gamma = None, gamma_max
    else:
        d = abs(u - stats.u_prev)
        gamma = convergence_stride(d, gamma_min, gamma_max)
    return replace(stats, epoch=stats.epoch + 1, u_prev=u, u_adv_prev=u_adv, d_prev=d, gamma=gamma)


def loss_cs_example(adv_losses, ben_losses, stats, w1, w2):
    """Per-sample constraint averaged over the selected samples.

    Returns ``(loss, selected)`` where ``selected`` is the boolean mask of
    samples whose benign loss tripped the condition. ``u`` terms are constants.
    """
    ben = ben_losses.data if isinstance(ben_losses, ad.Tensor) else np.asarray(ben_losses)
    adv = adv_losses.data if isinstance(adv_losses, ad.Tensor) else np.asarray(adv_losses)
    if ben.shape != adv.shape:
        raise ad.ShapeError(f"adv losses {adv.shape} vs benign losses {ben.shape}")
    selected = condition(ben, stats.u_prev, stats.gamma)
    k = int(selected.sum())
    if k == 0:
        return ad.constant(np.zeros((), dtype=ben.dtype)), selected
    mask = selected.astype(ben.dtype) / ben.dtype.type(k)
    per_sample = w2 * (ben_losses - stats.u_prev).abs()
    if w1:
        per_sample = per_sample + w1 * (adv_losses - stats.u_adv_prev).abs()
    return (per_sample * mask).sum(), selected


def loss_cs_batch(adv_mean, ben_mean, stats, w1, w2):
    """Constraint on batch-mean losses; ``(loss, fired)``."""
    ub = float(ben_mean.data if isinstance(ben_mean, ad.Tensor) else ben_mean)
    fired = bool(condition(ub, stats.u_prev, stats.gamma))
    if not fired:
        return ad.constant(np.zeros((), dtype=np.float32)), False
    loss = w2 * (ben_mean - stats.u_prev).abs()
    if w1:
        loss = loss + w1 * (adv_mean - stats.u_adv_prev).abs()
    return loss, True


@dataclass
class WeightCenter:
    """Running mean of flat parameter vectors from completed epochs."""

    mean: np.ndarray = field(default=None, repr=False)
    count: int = 0

    def update(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if self.mean is None:
            self.mean = flat.copy()
            self.count = 1
            return self
        if flat.shape != self.mean.shape:
            raise ad.ShapeError(f"flat vector {flat.shape} vs center {self.mean.shape}")
        self.count += 1
        self.mean += (flat - self.mean) / self.count
        return self


def weight_centralization(flat_theta, center, w3):
    """``w3 * ||theta - center||_2``; zero (and logged) while the center is empty."""
    if center.count == 0:
        log.debug("weight centralization inactive: no completed epochs yet")
        return ad.constant(np.zeros((), dtype=np.float32))
    if not isinstance(flat_theta, ad.Tensor):
        flat_theta = ad.constant(flat_theta)
    c = center.mean.astype(flat_theta.dtype)
    return w3 * ad.pnorm(flat_theta - c, p=2)


def mep_logit_reg(logits_adv, logits_init, weight):
    """``weight`` times the batch-mean squared l2 distance between two logit batches."""
    return weight * ad.sqdist(logits_adv, logits_init).mean()


def cosine(a, b):
    """Cosine similarity of two arrays viewed as flat vectors; None if either is ~0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return None
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def grad_align_metric(params, x, y, delta0):
    """Cosine between input gradients at ``x`` and ``x + delta0`` (whole batch flattened).

    Diagnostic only; never part of a training objective. None when either
    gradient is numerically zero.
    """
    cos = cosine(input_gradient(params, x, y), input_gradient(params, x + delta0, y))
    if cos is None:
        log.debug("gradient alignment undefined: zero gradient")
    return cos
