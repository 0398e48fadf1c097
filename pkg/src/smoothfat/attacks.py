"""l-inf attacks (FGSM, PGD) and attack initializations (zero, RS, BP, MEP)."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from .models import forward

log = logging.getLogger(__name__)

INIT_STRATEGIES = ("zero", "rs", "bp", "mep")


@dataclass(frozen=True)
class AttackConfig:
    xi: float = 16 / 255         # l-inf budget
    step: float = 16 / 255       # per-iteration stride (PGD); FGSM always steps by xi
    steps: int = 1
    init: str = "zero"
    momentum: float = 0.3        # MEP momentum mu

    def __post_init__(self):
        if not 0 < self.xi <= 1:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        if not 0 < self.step <= self.xi * (1 + 1e-12):
            raise ValueError(f"step must lie in (0, xi], got {self.step}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.init not in INIT_STRATEGIES:
            raise ValueError(f"unknown init {self.init!r}; choose from {INIT_STRATEGIES}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def project(x, delta, xi):
    """Clamp ``delta`` to [-xi, xi], then so that ``x + delta`` stays in [0, 1]. Idempotent."""
    x = np.asarray(x)
    return _kernels.project(x, np.asarray(delta), xi)


@dataclass
class PerturbationStore:
    """Cross-batch attack state.

    ``bp_delta`` holds the final perturbation of the most recent batch (BP init);
    ``mep`` holds one momentum perturbation per training sample (MEP init).
    """

    xi: float
    sample_shape: tuple
    num_samples: int
    bp_delta: np.ndarray = None
    bp_batch: int = -1
    mep: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mep is None:
            self.mep = np.zeros((self.num_samples, *self.sample_shape), dtype=np.float32)


def init_perturbation(strategy, x, store=None, rng=None, indices=None, xi=None):
    """Starting perturbation for FGSM; always inside the xi-ball and the [0, 1] box."""
    if xi is None:
        xi = store.xi
    if strategy == "zero":
        return np.zeros_like(x)
    if strategy == "rs":
        d = rng.uniform(-xi, xi, size=x.shape).astype(x.dtype)
        return project(x, d, xi)
    if strategy == "bp":
        prev = store.bp_delta
        if prev is None:
            return np.zeros_like(x)
        if prev.shape != x.shape:
            log.info("BP init: stored shape %s != batch shape %s, using zero init", prev.shape, x.shape)
            return np.zeros_like(x)
        return project(x, prev, xi)
    if strategy == "mep":
        return project(x, store.mep[indices], xi)
    raise ValueError(f"unknown init strategy {strategy!r}")


def update_store(store, batch_id, delta, mu, indices=None):
    """Record a batch's final perturbation for BP and fold it into the MEP momentum."""
    delta = np.asarray(delta, dtype=np.float32)
    store.bp_delta = delta.copy()
    store.bp_batch = batch_id
    if indices is not None:
        m = np.float32(mu) * store.mep[indices] + delta
        store.mep[indices] = np.clip(m, -store.xi, store.xi)
    return store


def input_gradient(params, x, y):
    """Gradient of the summed cross-entropy w.r.t. the input batch; weights are held fixed."""
    tape = ad.Tape()
    xt = tape.leaf(x)
    loss = ad.softmax_cross_entropy(forward(params, xt), y).sum()
    (g,) = tape.gradient(loss, xt)
    if not np.all(np.isfinite(g)):
        raise ad.NonFiniteError("non-finite input gradient")
    return g


def _signed_steps(params, x, y, delta, stride, xi, steps):
    for _ in range(steps):
        g = input_gradient(params, x + delta, y)
        delta = project(x, delta + np.float32(stride) * np.sign(g).astype(x.dtype), xi)
    return delta


def fgsm(params, x, y, delta0, config):
    """One signed-gradient step of size xi from ``x + delta0``; returns the adversarial batch."""
    delta = _signed_steps(params, x, y, delta0.astype(x.dtype), config.xi, config.xi, 1)
    return np.clip(x + delta, 0.0, 1.0)


def pgd(params, x, y, delta0, config, steps=None):
    """``steps`` (default ``config.steps``) projected signed-gradient steps of stride ``config.step``."""
    steps = config.steps if steps is None else steps
    delta = _signed_steps(params, x, y, delta0.astype(x.dtype), config.step, config.xi, steps)
    return np.clip(x + delta, 0.0, 1.0)
