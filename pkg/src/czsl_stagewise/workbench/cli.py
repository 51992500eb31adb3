"""Command-line entry point: ``czsl-stagewise <subcommand> ...``.

Exit status is 0 on success, 1 on a failed check and 2 on bad input, with a
one-line cause on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import (ConfigurationError, GenerationError, IntegrityError, ParameterError,
                      UsageError, VocabularyError)
from ..model import VARIANTS
from . import experiments as ex
from .config import load_config
from .diagnostics import op_checks, run_gradcheck
from .splits import write_manifest
from .synthetic import gen_synthetic


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _theta(text: str):
    return text if text == "auto" else float(text)


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    data = gen_synthetic(cfg.data)
    out = write_manifest(args.out, data)
    np.savez(out / "features.npz", features=data.features, states=data.states,
             objects=data.objects, split=data.split)
    (out / "spec.json").write_text(json.dumps(cfg.data.to_dict(), indent=2, sort_keys=True) + "\n")
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    res = ex.run_single(cfg, args.seed, args.root)
    print(json.dumps({"run": str(res.directory), "val": res.fit.best_val,
                      "test": res.test.curve.summary(), "seconds": round(res.seconds, 2)}))
    return 0


def cmd_eval(args) -> int:
    summary = ex.eval_run(args.run, args.split, args.world, args.beta, args.theta)
    print(json.dumps(summary, sort_keys=True))
    if args.check:
        stored = json.loads((Path(args.run) / "metrics.json").read_text())["val"]
        if summary != stored:
            diff = sorted(k for k in stored if summary.get(k) != stored[k])
            print(f"error: metrics differ from the stored validation summary: {diff}", file=sys.stderr)
            return 1
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    rep = ex.run_ablation(cfg, args.variants.split(","), args.seeds, args.root)
    print(ex.format_table(rep.table(), "variant"))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    res = ex.run_layer_sweep(cfg, args.n, args.seeds, args.root)
    print("n   AUC_mean  AUC_std")
    for r in res.rows:
        print(f"{r['n']:<3} {r['AUC']:.4f}    {r['AUC_std']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = {} if args.skip_ops else op_checks(args.seed, args.tolerance)
    reports["full_loss"] = run_gradcheck(args.seed, args.tolerance, max_coords=args.max_coords)
    for name, rep in reports.items():
        print(f"{name:<24} {rep.summary()}")
    failed = [n for n, r in reports.items() if not r.passed]
    if failed:
        print(f"error: gradient check above tolerance {args.tolerance} in {failed}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    table = ex.report(args.root)
    if not table:
        print(f"error: no run summaries under {ex.runs_root(args.root)}", file=sys.stderr)
        return 1
    print(ex.format_table(table, "config:variant"))
    if args.out:
        ex.write_table(args.out, table, "group")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="czsl-stagewise")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON experiment config (defaults if omitted)")
        sp.add_argument("--root", help=f"run directory root (default ${ex.RUNS_ENV} or ./runs)")

    sp = sub.add_parser("gen-data", help="write a synthetic dataset as a split manifest")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train one seed and store the run")
    with_config(sp)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="re-evaluate a stored run")
    sp.add_argument("run")
    sp.add_argument("--split", choices=("val", "test"), default="val")
    sp.add_argument("--world", choices=("closed", "open"))
    sp.add_argument("--beta", type=float)
    sp.add_argument("--theta", type=_theta)
    sp.add_argument("--check", action="store_true",
                    help="fail unless the result equals the stored validation summary")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="train every variant over a seed set")
    with_config(sp)
    sp.add_argument("--variants", default=",".join(VARIANTS))
    sp.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("sweep-layers", help="AUC against window size N = M")
    with_config(sp)
    sp.add_argument("--n", type=_ints, default=[1, 2, 3, 4])
    sp.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--max-coords", type=int, default=24)
    sp.add_argument("--skip-ops", action="store_true")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("report", help="merge per-seed summaries into mean and stddev")
    sp.add_argument("--root")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigurationError, ParameterError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrityError, VocabularyError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
