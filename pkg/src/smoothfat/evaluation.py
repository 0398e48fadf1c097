"""Robustness evaluation (clean / FGSM / PGD-n accuracy) and multi-run aggregation."""

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, fgsm, pgd
from .models import forward

ATTACK_RE = re.compile(r"^(clean|fgsm|pgd(\d+))$")
TABLE_COLUMNS = ("clean", "fgsm", "pgd10", "pgd20", "pgd50")


@dataclass
class EvalReport:
    accuracy: dict                      # attack name -> accuracy
    correct: dict                       # attack name -> number of correct predictions
    samples: int
    attacks: dict = field(default_factory=dict)  # attack name -> config dict
    checkpoint: str = None

    def to_dict(self):
        return {
            "checkpoint": self.checkpoint,
            "samples": self.samples,
            "accuracy": {k: round(v, 8) for k, v in self.accuracy.items()},
            "correct": dict(self.correct),
            "attacks": self.attacks,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def parse_attacks(spec, xi, step_frac=0.25):
    """``"clean,fgsm,pgd10"`` -> ordered {name: AttackConfig or None}."""
    names = [s.strip() for s in spec.split(",")] if isinstance(spec, str) else list(spec)
    out = {}
    for name in names:
        if not name:
            continue
        m = ATTACK_RE.match(name)
        if not m:
            raise ValueError(f"unknown attack {name!r}; use clean, fgsm or pgd<N>")
        if name == "clean":
            out[name] = None
        elif name == "fgsm":
            out[name] = AttackConfig(xi=xi, step=xi, steps=1, init="zero")
        else:
            out[name] = AttackConfig(xi=xi, step=xi * step_frac, steps=int(m.group(2)), init="zero")
    return out


def predict_labels(params, x):
    # np.argmax returns the first maximum: ties resolve to the lowest class index
    return np.argmax(forward(params, x).data, axis=1)


def attacked_inputs(params, x, y, config):
    zero = np.zeros_like(x)
    if config.steps == 1 and config.step == config.xi:
        return fgsm(params, x, y, zero, config)
    return pgd(params, x, y, zero, config)


def evaluate(params, dataset, attacks, batch_size=250, checkpoint=None):
    """Accuracy on clean inputs plus every attack in ``attacks`` (name -> AttackConfig).

    Attacks start from zero perturbation. Clean accuracy is always reported.
    """
    attacks = dict(attacks or {})
    attacks.setdefault("clean", None)
    correct = {name: 0 for name in attacks}
    n = len(dataset)
    for start in range(0, n, batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        for name, cfg in attacks.items():
            xa = x if cfg is None else attacked_inputs(params, x, y, cfg)
            correct[name] += int((predict_labels(params, xa) == y).sum())
    ordered = ["clean"] + [k for k in attacks if k != "clean"]
    return EvalReport(
        accuracy={k: correct[k] / n for k in ordered},
        correct={k: correct[k] for k in ordered},
        samples=n,
        attacks={k: None if attacks[k] is None else {
            "xi": attacks[k].xi, "step": attacks[k].step, "steps": attacks[k].steps}
            for k in ordered},
        checkpoint=checkpoint,
    )


def aggregate(reports, mode):
    """Combine per-run reports.

    ``reports`` is a list of dicts with ``"best"`` and ``"final"`` EvalReports.
    ``mbest``/``mfinal`` average the best/final checkpoints across runs;
    ``best`` takes the run whose best checkpoint has the highest accuracy per attack.
    """
    if not reports:
        raise ValueError("need at least one run")
    if mode not in ("mbest", "mfinal", "best"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    key = "final" if mode == "mfinal" else "best"
    picked = [r[key] for r in reports]
    names = list(picked[0].accuracy)
    if mode == "best":
        acc = {k: max(p.accuracy[k] for p in picked) for k in names}
    else:
        acc = {k: float(np.mean([p.accuracy[k] for p in picked])) for k in names}
    return {"mode": mode, "runs": len(picked), "accuracy": acc}


def table_row(method, report):
    """CSV row ``method,clean,fgsm,pgd10,pgd20,pgd50`` (missing attacks left blank).

    ``report`` is an :class:`EvalReport` or a plain accuracy dict.
    """
    acc = report if isinstance(report, dict) else report.accuracy
    cells = [f"{acc[c]:.6f}" if c in acc else "" for c in TABLE_COLUMNS]
    return ",".join([method, *cells])
