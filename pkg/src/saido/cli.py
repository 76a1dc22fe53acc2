"""Command-line entry point: ``saido {gen-data,train,eval,report}``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .data import generate_task, write_feature_file
from .harness import ConfigError, NumericError, emit_report, format_summary, load_config, load_report, run_openworld, train_protocol

log = logging.getLogger("saido")


def cmd_gen_data(args):
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    for role, specs in (("task", cfg.protocol.tasks), ("heldout", cfg.protocol.heldout)):
        for spec in specs:
            train, test = generate_task(spec)
            for split, samples in (("train", train), ("test", test)):
                path = os.path.join(args.out, f"{role}_{spec.name}_{split}.csv")
                write_feature_file(samples, path)
                print(path)


def _apply_overrides(cfg, args):
    changes = {k: getattr(args, k) for k in ("seed", "alpha", "e", "lr", "epochs") if getattr(args, k) is not None}
    if args.no_idom:
        changes["idom_on"] = False
    if args.no_saem:
        changes["saem_on"] = False
    return dataclasses.replace(cfg, **changes).validate()


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    report, system = train_protocol(cfg)
    paths = emit_report(report, args.out)
    save_checkpoint(system, os.path.join(args.out, "model"))
    print(format_summary(report))
    print(f"\nwrote {', '.join(sorted(paths.values()))} and {os.path.join(args.out, 'model')}")


def cmd_eval(args):
    cfg = load_config(args.config)
    system = load_checkpoint(args.model)
    rows = run_openworld(cfg, system)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "openworld.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "accuracy"])
        for r in rows:
            w.writerow([r["task"], repr(r["accuracy"])])
            print(f"{r['task']:<14}{100 * r['accuracy']:8.2f}")
    print(f"wrote {path}")


def cmd_report(args):
    print(format_summary(load_report(args.inp)))


def build_parser():
    p = argparse.ArgumentParser(prog="saido", description="Continual synthetic-image detection experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-session progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the protocol's synthetic tasks as feature CSV files")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the continual protocol and write reports plus a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--e", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--no-idom", action="store_true")
    t.add_argument("--no-saem", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="open-world accuracy of a checkpoint on the held-out tasks")
    e.add_argument("--model", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print the summary table of a finished run")
    r.add_argument("--in", dest="inp", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
