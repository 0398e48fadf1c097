import json
from fractions import Fraction

import numpy as np
import pytest

from smoothfat.attacks import AttackConfig
from smoothfat.data import Dataset, make_blobs
from smoothfat.evaluation import EvalReport, aggregate, evaluate, parse_attacks, table_row
from smoothfat.models import ModelSpec, build_model, unflatten

XI = 16 / 255


def test_constant_model_tie_breaks_low():
    spec = ModelSpec(kind="mlp", input_shape=(4,), num_classes=2, hidden=(3,))
    params = unflatten(spec, np.zeros(spec.param_count()))
    ds = Dataset(np.full((10, 4), 0.5), [0, 1] * 5, 2)
    rep = evaluate(params, ds, parse_attacks("fgsm,pgd5", XI))
    assert rep.accuracy == {"clean": 0.5, "fgsm": 0.5, "pgd5": 0.5}


def test_empty_attack_list_is_clean_only(blobs):
    params = build_model(ModelSpec(kind="mlp", input_shape=(6,), num_classes=2), 0)
    rep = evaluate(params, blobs, {})
    assert list(rep.accuracy) == ["clean"]
    assert list(json.loads(rep.to_json())["accuracy"]) == ["clean"]


def test_linear_model_margin_rule(rng):
    # oracle: a linear 2-class model is robust at x iff its margin exceeds xi * ||w1 - w0||_1
    spec = ModelSpec(kind="mlp", input_shape=(8,), num_classes=2, hidden=())
    params = build_model(spec, 5)
    W = params.arrays["fc1.w"].astype(np.float64)
    x = rng.uniform(XI, 1 - XI, size=(2000, 8)).astype(np.float32)  # box never binds
    y = rng.integers(0, 2, size=2000)
    signed = (x.astype(np.float64) @ (W[:, 1] - W[:, 0])) * np.where(y == 1, 1, -1)
    gap = XI * np.abs(W[:, 1] - W[:, 0]).sum()
    keep = np.abs(signed - gap) > 1e-4  # drop points numerically on the decision edge
    ds = Dataset(x[keep], y[keep], 2)
    rep = evaluate(params, ds, {"pgd10": AttackConfig(xi=XI, step=XI / 4, steps=10),
                                "fgsm": AttackConfig(xi=XI, step=XI)})
    expected = (signed[keep] > gap).mean()
    assert rep.accuracy["pgd10"] == expected
    assert rep.accuracy["fgsm"] == expected


def test_stronger_attack_not_weaker():
    # Monte-Carlo slack: 2 points on n = 1000
    ds = make_blobs(2, 500, 10, 0.5, seed=2, noise=0.15)
    params = build_model(ModelSpec(kind="mlp", input_shape=(10,), num_classes=2, hidden=(16,)), 1)
    rep = evaluate(params, ds, parse_attacks("fgsm,pgd10,pgd50", 32 / 255))
    assert rep.accuracy["pgd50"] <= rep.accuracy["fgsm"] + 0.02
    assert rep.accuracy["pgd50"] <= rep.accuracy["pgd10"] + 0.02


def test_exact_rationals_and_no_mutation(blobs):
    params = build_model(ModelSpec(kind="mlp", input_shape=(6,), num_classes=2, hidden=(5,)), 3)
    before = params.flatten().copy()
    rep = evaluate(params, blobs, parse_attacks("pgd7", XI), batch_size=7)
    assert np.array_equal(before, params.flatten())
    for k, acc in rep.accuracy.items():
        assert Fraction(rep.correct[k], rep.samples) == Fraction(acc).limit_denominator(10_000)
        assert 0 <= acc <= 1
    assert rep.samples == len(blobs)


def test_batching_does_not_change_results(blobs):
    params = build_model(ModelSpec(kind="mlp", input_shape=(6,), num_classes=2, hidden=(5,)), 3)
    atk = parse_attacks("fgsm,pgd10", XI)
    a = evaluate(params, blobs, atk, batch_size=250)
    b = evaluate(params, blobs, atk, batch_size=9)
    assert a.correct == b.correct


def test_parse_attacks():
    atk = parse_attacks("clean, fgsm,pgd20", 0.25)
    assert atk["clean"] is None
    assert atk["fgsm"].step == 0.25 and atk["fgsm"].steps == 1
    assert atk["pgd20"].step == 0.0625 and atk["pgd20"].steps == 20
    with pytest.raises(ValueError):
        parse_attacks("cw", 0.25)


def rep(**acc):
    return EvalReport(accuracy={"clean": 0.9, **acc}, correct={}, samples=10)


def test_aggregate_modes():
    runs = [{"best": rep(pgd10=a), "final": rep(pgd10=a / 2)} for a in (0.2, 0.3, 0.4)]
    assert aggregate(runs, "mbest")["accuracy"]["pgd10"] == pytest.approx(0.3)
    assert aggregate(runs, "mfinal")["accuracy"]["pgd10"] == pytest.approx(0.15)
    assert aggregate(runs, "best")["accuracy"]["pgd10"] == 0.4


def test_aggregate_single_run_is_identity():
    r = rep(pgd10=0.37)
    assert aggregate([{"best": r, "final": r}], "mbest")["accuracy"] == r.accuracy


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([], "mbest")
    with pytest.raises(ValueError):
        aggregate([{"best": rep(), "final": rep()}], "median")


def test_table_row():
    assert table_row("B-RS", rep(fgsm=0.5, pgd10=1 / 3)) == "B-RS,0.900000,0.500000,0.333333,,"
