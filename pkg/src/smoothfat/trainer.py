"""Fast adversarial training loop with ConvergeSmooth, telemetry and an overfitting detector."""

import csv
import io
import logging
import time
from fractions import Fraction
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .attacks import AttackConfig, PerturbationStore, fgsm, init_perturbation, update_store
from .data import BatchPlan, batches
from .evaluation import evaluate
from .models import ModelSpec, build_model, forward
from .smoothing import (EpochAccumulator, EpochStats, SmoothConfig, WeightCenter, condition,
                        grad_align_metric, loss_cs_batch, loss_cs_example, mep_logit_reg,
                        update_epoch_stats, weight_centralization)

log = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "ben_loss", "adv_loss", "gamma", "selected_frac", "train_ben_acc",
              "eval_ben_acc", "eval_adv_acc", "grad_align", "lr", "seconds")


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 3
    threshold: float = 0.2
    ben_keep: float = 0.8

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("detector threshold must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("detector window must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    attack: AttackConfig = field(default_factory=AttackConfig)
    smooth: SmoothConfig = field(default_factory=SmoothConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple = (24, 27)
    lr_decay_factor: float = 0.1
    seed: int = 0
    eval_samples: int = 1000
    eval_steps: int = 10
    eval_step_frac: float = 0.25
    log_seconds: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(b <= a for a, b in zip(self.lr_decay_epochs, self.lr_decay_epochs[1:])):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if self.eval_samples < 1:
            raise ValueError("eval_samples must be >= 1")


@dataclass
class RunLogRow:
    epoch: int
    ben_loss: float
    adv_loss: float
    gamma: float
    selected_frac: float
    train_ben_acc: float
    eval_ben_acc: float
    eval_adv_acc: float
    grad_align: float
    lr: float
    seconds: float = None

    def csv_cells(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                out.append("")
            elif isinstance(v, int):
                out.append(str(v))
            else:
                out.append(repr(float(v)))
        return out


@dataclass
class BatchRecord:
    size: int
    ben_mean: float
    adv_mean: float
    selected: int
    ce: float
    cs: float
    wc: float
    mep: float
    total: float


@dataclass
class TrainState:
    params: object
    velocity: dict
    stats: EpochStats
    store: PerturbationStore
    center: WeightCenter


def lr_at(epoch, base_lr, decay_epochs, factor):
    """Piecewise-constant rate: multiplied by ``factor`` from each decay epoch onward (1-indexed).

    The product is formed on the decimal values as written (0.1 * 0.1 -> 0.01,
    not 0.010000000000000002), then rounded once to float.
    """
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    k = sum(1 for e in decay_epochs if epoch >= e)
    return float(Fraction(repr(float(base_lr))) * Fraction(repr(float(factor))) ** k)


def sgd_step(params, grads, lr, momentum, weight_decay, velocity):
    """SGD with heavy-ball momentum and coupled L2 weight decay, in place.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    """
    for name, p in params.items():
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        upd = grads[name] + p.dtype.type(weight_decay) * p
        v *= p.dtype.type(momentum)
        v += upd
        if not np.all(np.isfinite(v)):
            raise TrainingAborted(f"non-finite SGD update for parameter {name}")
        p -= p.dtype.type(lr) * v
    return params, velocity


def _batch_rng(seed, epoch, batch_no):
    return np.random.default_rng([seed, epoch, batch_no, 0xA77])


def train_step(state, x, y, idx, batch_no, config, epoch, lr):
    """One batch: attack against frozen weights, composite loss, SGD, store update."""
    params, atk, sm = state.params, config.attack, config.smooth
    delta0 = init_perturbation(atk.init, x, state.store, _batch_rng(config.seed, epoch, batch_no), idx)
    x_adv = fgsm(params, x, y, delta0, atk)

    tape = ad.Tape()
    weights = params.on_tape(tape)
    adv_logits = forward(params, x_adv, weights)
    adv_losses = ad.softmax_cross_entropy(adv_logits, y)
    ce = adv_losses.mean()
    needs_ben_grad = sm.variant != "none" and state.stats.active
    ben_logits = forward(params, x, weights if needs_ben_grad else None)
    ben_losses = ad.softmax_cross_entropy(ben_logits, y)
    ben_mean = ben_losses.mean()

    terms = {"cs": None, "wc": None, "mep": None}
    selected = 0
    if state.stats.active:
        if sm.variant == "example":
            terms["cs"], mask = loss_cs_example(adv_losses, ben_losses, state.stats, sm.w1, sm.w2)
            selected = int(mask.sum())
        elif sm.variant == "batch":
            terms["cs"], fired = loss_cs_batch(ce, ben_mean, state.stats, sm.w1, sm.w2)
            selected = len(y) if fired else 0
        else:
            selected = int(condition(ben_losses.data, state.stats.u_prev, state.stats.gamma).sum())
    if sm.centralization and state.center.count:
        flat = ad.concat(list(weights.values()))
        terms["wc"] = weight_centralization(flat, state.center, sm.w3)
    if sm.mep_reg > 0:
        init_logits = forward(params, x + delta0, weights)
        terms["mep"] = mep_logit_reg(adv_logits, init_logits, sm.mep_reg)

    total = ce
    for t in terms.values():
        if t is not None:
            total = total + t
    if not np.isfinite(total.item()):
        raise TrainingAborted(f"non-finite loss at epoch {epoch}, batch {batch_no}")
    grads = tape.backward(total)
    sgd_step(params.arrays, {k: grads[w] for k, w in weights.items()}, lr,
             config.momentum, config.weight_decay, state.velocity)
    update_store(state.store, batch_no, x_adv - x, atk.momentum, idx)

    correct = int((np.argmax(ben_logits.data, axis=1) == y).sum())
    rec = BatchRecord(
        size=len(y), ben_mean=float(ben_mean.item()), adv_mean=float(ce.item()), selected=selected,
        ce=float(ce.item()),
        cs=0.0 if terms["cs"] is None else float(terms["cs"].item()),
        wc=0.0 if terms["wc"] is None else float(terms["wc"].item()),
        mep=0.0 if terms["mep"] is None else float(terms["mep"].item()),
        total=float(total.item()),
    )
    return rec, correct


def eval_subset(dataset, n):
    return dataset if len(dataset) <= n else dataset.subset(np.arange(n))


def epoch_eval(params, eval_set, config):
    """Clean and PGD-n accuracy (zero init, stride xi * eval_step_frac) plus gradient alignment."""
    xi = config.attack.xi
    pgd_cfg = AttackConfig(xi=xi, step=xi * config.eval_step_frac, steps=config.eval_steps)
    rep = evaluate(params, eval_set, {"pgd": pgd_cfg})
    probe = eval_set.subset(np.arange(min(len(eval_set), 128)))
    rng = np.random.default_rng([config.seed, 0x6A])
    d0 = init_perturbation("rs", probe.images, rng=rng, xi=xi)
    align = grad_align_metric(params, probe.images, probe.labels, d0)
    return rep.accuracy["clean"], rep.accuracy["pgd"], align


def train_epoch(state, dataset, eval_set, config, epoch):
    """Run one epoch; returns ``(row, batch_records)`` and advances ``state`` in place."""
    t0 = time.perf_counter()
    lr = lr_at(epoch, config.lr, config.lr_decay_epochs, config.lr_decay_factor)
    gamma_used = state.stats.gamma
    plan = BatchPlan(config.seed, min(config.batch_size, len(dataset)))
    acc = EpochAccumulator()
    records, selected, correct = [], 0, 0
    for batch_no, (idx, x, y) in enumerate(batches(dataset, plan, epoch)):
        rec, ok = train_step(state, x, y, idx, batch_no, config, epoch, lr)
        acc.add(rec.size, rec.ben_mean, rec.adv_mean)
        records.append(rec)
        selected += rec.selected
        correct += ok
    state.stats = update_epoch_stats(state.stats, acc, config.smooth.gamma_min, config.smooth.gamma_max)
    if config.smooth.centralization:
        state.center.update(state.params.flatten())
    ben_acc, adv_acc, align = epoch_eval(state.params, eval_set, config)
    seconds = time.perf_counter() - t0
    log.info("epoch %d: ben %.4f adv %.4f gamma %s sel %.3f | eval ben %.3f adv %.3f (%.1fs)",
             epoch, state.stats.u_prev, state.stats.u_adv_prev, gamma_used, selected / len(dataset),
             ben_acc, adv_acc, seconds)
    row = RunLogRow(
        epoch=epoch, ben_loss=state.stats.u_prev, adv_loss=state.stats.u_adv_prev, gamma=gamma_used,
        selected_frac=selected / len(dataset), train_ben_acc=correct / len(dataset),
        eval_ben_acc=ben_acc, eval_adv_acc=adv_acc, grad_align=align, lr=lr,
        seconds=seconds if config.log_seconds else None,
    )
    return row, records


def detect_overfit(history, detector=DetectorConfig()):
    """First epoch of a catastrophic-overfitting collapse, or None if the run looks stable.

    An epoch is collapsed when its eval adversarial accuracy is below
    ``threshold`` times the best adversarial accuracy of all earlier epochs
    while its clean accuracy stays within ``ben_keep`` of the best clean
    accuracy so far. ``window`` consecutive collapsed epochs trigger the detector.
    """
    if not history:
        raise ValueError("empty history")
    streak = 0
    best_adv = best_ben = 0.0
    for i, row in enumerate(history):
        best_ben = max(best_ben, row.eval_ben_acc)
        collapsed = (best_adv > 0 and row.eval_adv_acc < detector.threshold * best_adv
                     and row.eval_ben_acc >= detector.ben_keep * best_ben)
        streak = streak + 1 if collapsed else 0
        if streak >= detector.window:
            return history[i - detector.window + 1].epoch
        best_adv = max(best_adv, row.eval_adv_acc)
    return None


@dataclass
class RunResult:
    final_params: object
    best_params: object
    best_epoch: int
    history: list
    collapsed_at: int
    batch_log: list = field(default_factory=list, repr=False)


def run(config, train_set, eval_set, on_epoch=None):
    """Train for ``config.epochs`` epochs; keep the checkpoint with the best eval PGD accuracy."""
    params = build_model(config.model, config.seed)
    store = PerturbationStore(config.attack.xi, train_set.input_shape, len(train_set))
    state = TrainState(params, {}, EpochStats(), store, WeightCenter())
    eval_set = eval_subset(eval_set, config.eval_samples)
    history, batch_log = [], []
    best_params, best_epoch, best_adv = params.copy(), 0, -1.0
    for epoch in range(1, config.epochs + 1):
        row, records = train_epoch(state, train_set, eval_set, config, epoch)
        history.append(row)
        batch_log.append(records)
        if row.eval_adv_acc > best_adv:
            best_adv, best_epoch, best_params = row.eval_adv_acc, epoch, state.params.copy()
        if on_epoch is not None:
            on_epoch(row, state)
    return RunResult(state.params, best_params, best_epoch, history,
                     detect_overfit(history, config.detector), batch_log)


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in history:
        w.writerow(row.csv_cells())
    return buf.getvalue()
