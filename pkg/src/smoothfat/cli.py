"""Command-line driver: ``smoothfat train | eval | verify``."""

import argparse
import json
import logging
import os
import sys

from . import config as cfgmod
from . import verify as verify_mod
from .data import IdxFormatError, load_idx, load_idx_dir
from .evaluation import TABLE_COLUMNS, aggregate, evaluate, parse_attacks, table_row
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .trainer import TrainingAborted, history_csv, run

log = logging.getLogger("smoothfat")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _method_name(doc):
    s, a = doc["smooth"], doc["attack"]
    prefix = {"none": "FGSM", "example": "E", "batch": "B"}[s["variant"]]
    return f"{prefix}-{a['init'].upper()}"


def cmd_train(args):
    try:
        doc, base = cfgmod.load(args.config, args.set)
        train_set, test_set = cfgmod.load_data(doc, base)
        configs = [cfgmod.train_config(doc, seed=doc["train"]["seed"] + r) for r in range(doc["repeats"])]
        attacks = parse_attacks(doc["eval"]["attacks"], configs[0].attack.xi, doc["eval"]["step_frac"])
    except cfgmod.ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, IdxFormatError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out_dir = doc["output_dir"]
    if not os.path.isabs(out_dir):
        out_dir = os.path.join(os.getcwd(), out_dir)
    os.makedirs(out_dir, exist_ok=True)
    reports = []
    for r, tc in enumerate(configs):
        run_dir = os.path.join(out_dir, f"run{r}")
        os.makedirs(run_dir, exist_ok=True)
        log.info("run %d/%d (seed %d)", r + 1, len(configs), tc.seed)
        try:
            res = run(tc, train_set, test_set)
        except TrainingAborted as exc:
            print(f"training aborted (run {r}, seed {tc.seed}): {exc}", file=sys.stderr)
            return EXIT_ABORT
        _write(os.path.join(run_dir, "log.csv"), history_csv(res.history))
        meta = {"xi": tc.attack.xi}
        save_checkpoint(os.path.join(run_dir, "final.ckpt"), res.final_params, tc.seed, tc.epochs, meta)
        save_checkpoint(os.path.join(run_dir, "best.ckpt"), res.best_params, tc.seed, res.best_epoch, meta)
        best = evaluate(res.best_params, test_set, attacks, checkpoint="best.ckpt")
        final = evaluate(res.final_params, test_set, attacks, checkpoint="final.ckpt")
        reports.append({"best": best, "final": final})
        summary = {
            "seed": tc.seed,
            "best_epoch": res.best_epoch,
            "collapsed_at": res.collapsed_at,
            "verdict": "stable" if res.collapsed_at is None else f"collapsed at epoch {res.collapsed_at}",
            "best": best.to_dict(),
            "final": final.to_dict(),
            "overrides": list(args.set or []),
            "config": doc,
        }
        _write(os.path.join(run_dir, "summary.json"), _dump(summary))
        log.info("run %d: best epoch %d, %s", r, res.best_epoch, summary["verdict"])

    agg = {mode: aggregate(reports, mode) for mode in ("mbest", "mfinal", "best")}
    agg["overrides"] = list(args.set or [])
    _write(os.path.join(out_dir, "aggregate.json"), _dump(agg))
    method = _method_name(doc)
    rows = ["method," + ",".join(TABLE_COLUMNS)]
    for mode in ("mbest", "mfinal"):
        rows.append(table_row(f"{method}/{mode}", agg[mode]["accuracy"]))
    _write(os.path.join(out_dir, "table.csv"), "\n".join(rows) + "\n")
    print(_dump(agg), end="")
    return EXIT_OK


def _load_eval_data(path, num_classes):
    """``path`` is an IDX directory (test split ``t10k``) or ``images,labels`` file pair."""
    if "," in path:
        images, labels = path.split(",", 1)
        return load_idx(images, labels, num_classes)
    return load_idx_dir(path, "t10k", num_classes)


def cmd_eval(args):
    try:
        params, header = load_checkpoint(args.ckpt)
        data = _load_eval_data(args.data, params.spec.num_classes)
        xi = cfgmod.fraction(args.xi) if args.xi is not None else header.get("xi", 16 / 255)
        attacks = parse_attacks(args.attacks, xi, args.step_frac)
    except (CheckpointError, OSError, IdxFormatError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if data.input_shape != params.spec.input_shape:
        print(f"input error: data shape {data.input_shape} != model input {params.spec.input_shape}",
              file=sys.stderr)
        return EXIT_INPUT
    report = evaluate(params, data, attacks, checkpoint=os.path.basename(args.ckpt))
    print(report.to_json())
    return EXIT_OK


def cmd_verify(args):
    code = verify_mod.main(quick=not args.full, seed=args.seed)
    return EXIT_OK if code == 0 else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="smoothfat", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run repeated training from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. smooth.variant=batch (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="IDX directory or 'images,labels' file pair")
    e.add_argument("--attacks", default="clean,fgsm,pgd10,pgd20,pgd50")
    e.add_argument("--xi", default=None, help="budget, e.g. 64/255 (default: from checkpoint)")
    e.add_argument("--step-frac", type=float, default=0.25)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the built-in property suite")
    v.add_argument("--full", action="store_true", help="acceptance-size instance counts")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    # train also accepts overrides spelled as flags: --smooth.variant=none
    for item in extra:
        if args.command != "train" or not item.startswith("--") or "=" not in item:
            parser.error(f"unrecognized argument {item}")
        args.set.append(item[2:])
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
