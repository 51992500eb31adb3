"""Run drivers: single training runs, variant ablations, layer-window sweeps, reports.

Every run writes into ``<root>/<config digest>-seed<seed>/`` where ``root``
comes from the ``CZSL_RUNS`` environment variable (default ``./runs``):

    config.json     full config snapshot (seeds included)
    seed.txt
    history.csv     one row per epoch
    metrics.json    best-epoch validation summary and test summary
    summary.csv     test S/U/HM/AUC
    curve_val.csv, curve_test.csv
    checkpoint.npz
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigurationError, UsageError
from ..evaluation import EvalResult, evaluate, write_curve, write_summary, read_summary
from ..model import VARIANTS, CompositionalModel
from ..training import FitResult, fit, load_checkpoint, save_checkpoint, validation_summary
from .config import ExperimentConfig, config_from_dict, save_config
from .synthetic import gen_synthetic

log = logging.getLogger(__name__)

RUNS_ENV = "CZSL_RUNS"
METRICS = ("S", "U", "HM", "AUC")


def runs_root(root: str | Path | None = None) -> Path:
    return Path(root if root is not None else os.environ.get(RUNS_ENV, "runs"))


def run_dir_for(cfg: ExperimentConfig, root: str | Path | None = None) -> Path:
    return runs_root(root) / f"{cfg.digest()}-seed{cfg.train.seed}"


@dataclass
class RunResult:
    config: ExperimentConfig
    fit: FitResult
    test: EvalResult
    directory: Path | None
    seconds: float

    @property
    def seed(self) -> int:
        return self.config.train.seed


def run_single(cfg: ExperimentConfig, seed: int | None = None,
               root: str | Path | None = None, write: bool = True) -> RunResult:
    """Generate data, train, evaluate on test and (optionally) persist the run."""
    if seed is not None:
        cfg = cfg.with_seed(seed)
    cfg.validate()
    start = time.perf_counter()
    data = gen_synthetic(cfg.data)
    result = fit(cfg.model_config(), cfg.train, data)
    ev = cfg.eval
    test = evaluate(result.model, data, "test", ev.world, ev.beta, ev.theta, ev.batch_size)
    seconds = time.perf_counter() - start
    directory = None
    if write:
        directory = run_dir_for(cfg, root)
        directory.mkdir(parents=True, exist_ok=True)
        _write_run(directory, cfg, result, test, data)
    log.info("%s seed %d: test AUC %.4f (%.1fs)", cfg.variant, cfg.train.seed, test.curve.AUC, seconds)
    return RunResult(cfg, result, test, directory, seconds)


def _write_run(directory: Path, cfg: ExperimentConfig, result: FitResult, test: EvalResult,
               data) -> None:
    save_config(directory / "config.json", cfg)
    (directory / "seed.txt").write_text(f"{cfg.train.seed}\n")
    if result.history:
        with open(directory / "history.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(result.history[0]))
            w.writeheader()
            for row in result.history:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    metrics = {"variant": cfg.variant, "seed": cfg.train.seed, "best_epoch": result.best_epoch,
               "val": result.best_val, "test": test.summary(), "theta": test.theta}
    (directory / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    write_summary(directory / "summary.csv",
                  [{"dataset": data.name, "world": cfg.eval.world, "seed": cfg.train.seed,
                    **test.curve.summary()}])
    write_curve(directory / "curve_test.csv", test.curve)
    model = result.model
    val = evaluate(model, data, "val", "closed", cfg.train.beta,
                   batch_size=cfg.train.eval_batch_size)
    write_curve(directory / "curve_val.csv", val.curve)
    save_checkpoint(directory / "checkpoint.npz", model,
                    {"config": cfg.to_dict(), "best_epoch": result.best_epoch})


def load_run(directory: str | Path) -> tuple[ExperimentConfig, CompositionalModel]:
    """Rebuild the config and trained model stored in a run directory."""
    directory = Path(directory)
    state, meta = load_checkpoint(directory / "checkpoint.npz")
    cfg = config_from_dict(meta["config"])
    model = CompositionalModel(cfg.model_config(), cfg.data.n_states, cfg.data.n_objects,
                               cfg.train.seed)
    model.load_state_dict(state)
    return cfg, model


def eval_run(directory: str | Path, split: str = "val", world: str | None = None,
             beta: float | None = None, theta=None) -> dict:
    """Re-evaluate a stored run.

    With ``split="val"`` and no overrides this recomputes the validation
    summary the same way training did, so it matches ``metrics.json`` exactly.
    """
    cfg, model = load_run(directory)
    data = gen_synthetic(cfg.data)
    if split == "val" and world is None and beta is None and theta is None:
        return validation_summary(model, data, cfg.train)
    ev = cfg.eval
    res = evaluate(model, data, split, world or ev.world, ev.beta if beta is None else beta,
                   theta if theta is not None else (ev.theta if (world or ev.world) == "open" else None),
                   ev.batch_size)
    return res.summary()


# -- ablation ------------------------------------------------------------------------------

@dataclass
class AblationReport:
    rows: list[dict]  # one per (variant, seed)

    def table(self) -> dict[str, dict[str, tuple[float, float]]]:
        """variant -> metric -> (mean, stddev) over seeds."""
        return aggregate_rows(self.rows, "variant")

    def mean_auc(self, variant: str) -> float:
        return self.table()[variant]["AUC"][0]


def aggregate_rows(rows: list[dict], key: str) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    out = {}
    for k in sorted(groups, key=str):
        rs = groups[k]
        out[k] = {m: (statistics.fmean(r[m] for r in rs),
                      statistics.stdev(r[m] for r in rs) if len(rs) > 1 else 0.0) for m in METRICS}
        out[k]["n"] = len(rs)
    return out


def run_ablation(cfg: ExperimentConfig, variants, seeds, root: str | Path | None = None,
                 write: bool = True) -> AblationReport:
    variants = [variants] if isinstance(variants, str) else list(variants)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; expected a subset of {VARIANTS}")
    rows = []
    for variant in variants:
        for seed in seeds:
            c = copy.deepcopy(cfg)
            c.variant = variant
            res = run_single(c, seed, root, write)
            rows.append({"variant": variant, "seed": seed, **res.test.summary(),
                         "seconds": res.seconds})
    rows.sort(key=lambda r: (VARIANTS.index(r["variant"]), r["seed"]))
    report = AblationReport(rows)
    if write:
        out = runs_root(root) / f"ablation-{cfg.digest()}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_table(out, report.table(), "variant")
    return report


# -- layer sweep ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    rows: list[dict]  # one per n: n, AUC mean/std and per-seed AUCs

    def best_n(self) -> int:
        return max(self.rows, key=lambda r: r["AUC"])["n"]

    def auc_at(self, n: int) -> float:
        return next(r["AUC"] for r in self.rows if r["n"] == n)


# Window sizes that worked best on the real benchmarks (reference only).
REFERENCE_BEST_N = {"ut-zappos": 3, "mit-states": 4, "cgqa": 4}


def run_layer_sweep(cfg: ExperimentConfig, n_values, seeds=(0,), root: str | Path | None = None,
                    write: bool = True) -> SweepResult:
    """Train with ``N = M = n`` for each n and record the seed-averaged test AUC."""
    depth = cfg.encoder.layers
    bad = [n for n in n_values if not 1 <= n or 2 * n > depth]
    if bad:
        raise ConfigurationError(f"window sizes {bad} violate 1 <= n and 2n <= S={depth}")
    rows = []
    for n in n_values:
        c = copy.deepcopy(cfg)
        c.aggregation.n_low = c.aggregation.m_high = n
        aucs = [run_single(c, s, root, write).test.curve.AUC for s in seeds]
        rows.append({"n": n, "AUC": statistics.fmean(aucs),
                     "AUC_std": statistics.stdev(aucs) if len(aucs) > 1 else 0.0,
                     "per_seed": aucs})
    result = SweepResult(rows)
    if write:
        out = runs_root(root) / f"sweep-{cfg.digest()}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "AUC_mean", "AUC_std", "n_seeds"])
            for r in rows:
                w.writerow([r["n"], repr(r["AUC"]), repr(r["AUC_std"]), len(r["per_seed"])])
    return result


# -- reporting -----------------------------------------------------------------------------

def collect_runs(root: str | Path | None = None) -> list[dict]:
    """One row per run directory under ``root`` holding a summary."""
    rows = []
    for summary in sorted(runs_root(root).glob("*/summary.csv")):
        cfg = json.loads((summary.parent / "config.json").read_text())
        for r in read_summary(summary):
            rows.append({"variant": cfg["variant"], "run": summary.parent.name,
                         "group": f"{summary.parent.name.rsplit('-seed', 1)[0]}:{cfg['variant']}",
                         **r})
    return rows


def report(root: str | Path | None = None) -> dict:
    """Merge per-seed summaries into mean and stddev per config (digest + variant)."""
    rows = collect_runs(root)
    return aggregate_rows(rows, "group")


def format_table(table: dict, key: str) -> str:
    lines = [f"{key:<24}" + "".join(f"{m:>18}" for m in METRICS) + "   n"]
    for k, stats in table.items():
        cells = "".join(f"{stats[m][0]:>10.4f} ± {stats[m][1]:<5.3f}" for m in METRICS)
        lines.append(f"{str(k):<24}{cells}   {stats['n']}")
    return "\n".join(lines)


def write_table(path: str | Path, table: dict, key: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["n"])
        for k, stats in table.items():
            w.writerow([k] + [repr(float(stats[m][i])) for m in METRICS for i in (0, 1)]
                       + [stats["n"]])

