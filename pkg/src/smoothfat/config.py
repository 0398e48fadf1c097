"""Experiment configuration: JSON documents validated against ``schema.json``, dotted overrides."""

import copy
import json
import os
from fractions import Fraction
from importlib import resources

import jsonschema
import numpy as np

from .attacks import AttackConfig
from .data import load_idx_dir, make_blobs
from .models import ModelSpec
from .smoothing import SmoothConfig
from .trainer import DetectorConfig, TrainConfig

DEFAULTS = {
    "model": {"kind": "cnn", "input_shape": [1, 28, 28], "num_classes": 2, "hidden": [256],
              "channels": [8, 16]},
    "data": {"kind": "idx", "path": "data/mnist2", "train_split": "train", "test_split": "t10k",
             "num_classes": 2, "per_class": 500, "test_per_class": 250, "dim": 20,
             "separation": 1.0, "noise": 0.1, "seed": 0},
    "attack": {"xi": "64/255", "init": "rs", "momentum": 0.3, "steps": 1},
    "smooth": {"variant": "none", "w1": 0.0, "w2": 1.0, "w3": 0.1, "gamma_max": 0.03,
               "gamma_ratio": 1.5, "centralization": False, "mep_reg": 0.0},
    "train": {"epochs": 30, "batch_size": 128, "momentum": 0.9, "weight_decay": 5e-4,
              "lr_decay_epochs": [24, 27], "lr_decay_factor": 0.1, "seed": 0, "log_seconds": False},
    "eval": {"samples": 1000, "steps": 10, "step_frac": 0.25,
             "attacks": ["clean", "fgsm", "pgd10", "pgd20", "pgd50"],
             "detector": {"window": 3, "threshold": 0.2, "ben_keep": 0.8}},
    "repeats": 3,
    "output_dir": "runs/experiment",
}


class ConfigError(ValueError):
    """Invalid configuration. ``path`` is the dotted location of the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


def schema():
    return json.loads(resources.files("smoothfat").joinpath("schema.json").read_text())


def fraction(value):
    """Numbers pass through; strings like ``"64/255"`` become floats."""
    if isinstance(value, str):
        return float(Fraction(value))
    return float(value)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, overrides):
    """Apply ``dotted.key=value`` strings in order; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like dotted.key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot descend into a non-object")
        node[parts[-1]] = _parse_value(text)
    return doc


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(doc):
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(".".join(str(p) for p in err.absolute_path), err.message)
    smooth = doc.get("smooth", {})
    if smooth.get("centralization") and smooth.get("mep_reg", 0) > 0:
        raise ConfigError("smooth", "centralization and mep_reg cannot be enabled together")
    if "gamma_min" in smooth and "gamma_ratio" in smooth:
        raise ConfigError("smooth", "give gamma_min or gamma_ratio, not both")


def resolve(doc):
    """Schema-check ``doc`` (user keys only) and fill in defaults."""
    validate(doc)
    full = _merge(DEFAULTS, doc)
    if "gamma_min" in doc.get("smooth", {}):
        full["smooth"].pop("gamma_ratio", None)
    if "lr" not in full["train"]:
        full["train"]["lr"] = 0.05 if full["model"]["kind"] == "cnn" else 0.1
    return full


def load(path, overrides=()):
    """Read, override, validate. Returns ``(resolved_doc, base_dir)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be an object")
    doc = apply_overrides(doc, overrides)
    return resolve(doc), os.path.dirname(os.path.abspath(path))


def train_config(doc, seed=None):
    """Build a :class:`TrainConfig` from a resolved document."""
    m, a, s, t, e = doc["model"], doc["attack"], doc["smooth"], doc["train"], doc["eval"]
    try:
        xi = fraction(a["xi"])
        sm = dict(s)
        ratio = sm.pop("gamma_ratio", None)
        if "gamma_min" not in sm:
            sm["gamma_min"] = sm["gamma_max"] / ratio
        return TrainConfig(
            model=ModelSpec(kind=m["kind"], input_shape=tuple(m["input_shape"]),
                            num_classes=m["num_classes"], hidden=tuple(m["hidden"]),
                            channels=tuple(m["channels"])),
            attack=AttackConfig(xi=xi, step=fraction(a.get("step", xi)), steps=a["steps"],
                                init=a["init"], momentum=a["momentum"]),
            smooth=SmoothConfig(**sm),
            detector=DetectorConfig(**e["detector"]),
            epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], momentum=t["momentum"],
            weight_decay=t["weight_decay"], lr_decay_epochs=tuple(t["lr_decay_epochs"]),
            lr_decay_factor=t["lr_decay_factor"], seed=t["seed"] if seed is None else seed,
            eval_samples=e["samples"], eval_steps=e["steps"], eval_step_frac=e["step_frac"],
            log_seconds=t["log_seconds"],
        )
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None


def load_data(doc, base_dir="."):
    """``(train, test)`` datasets described by the ``data`` section."""
    d = doc["data"]
    if d["kind"] == "idx":
        path = d["path"] if os.path.isabs(d["path"]) else os.path.join(base_dir, d["path"])
        return (load_idx_dir(path, d["train_split"], d["num_classes"]),
                load_idx_dir(path, d["test_split"], d["num_classes"]))
    per = d["per_class"] + d["test_per_class"]
    full = make_blobs(d["num_classes"], per, d["dim"], d["separation"], d["seed"], noise=d["noise"])
    # make_blobs groups samples by class: split each class block, then shuffle each
    # split so that a leading evaluation subset still covers every class
    idx = np.arange(len(full)).reshape(d["num_classes"], per)
    rng = np.random.default_rng([d["seed"], 1])
    train = rng.permutation(idx[:, :d["per_class"]].ravel())
    test = rng.permutation(idx[:, d["per_class"]:].ravel())
    return full.subset(train), full.subset(test)
