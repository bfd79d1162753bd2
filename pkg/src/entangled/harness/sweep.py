"""Entanglement x seed sweeps with mean/std summaries."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..entangle import EntanglementSpec
from .config import ExperimentConfig, spec_token
from .data import gen_dataset
from .train import RunMetrics, fit, write_checkpoint, write_metrics_csv

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("spec", "mean_acc", "std_acc", "n_seeds", "failures")


@dataclass
class SweepCell:
    spec_index: int
    spec: EntanglementSpec
    seed: int
    metrics: RunMetrics | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None or self.metrics is None or self.metrics.failed

    @property
    def acc(self) -> float:
        return math.nan if self.metrics is None else self.metrics.best_test_acc


def _run_dir(out: Path, cell: SweepCell) -> Path:
    return out / "runs" / f"{cell.spec_index:02d}_{cell.spec.kind}_seed{cell.seed}"


def _run_cell(cfg: ExperimentConfig, cell: SweepCell, out: Path | None, data=None) -> SweepCell:
    run_cfg = cfg.with_entanglement(cell.spec)
    try:
        metrics, model = fit(run_cfg, cell.seed, data)
    except Exception as exc:  # record-and-continue
        log.exception("sweep cell %s seed %d failed", cell.spec.label(), cell.seed)
        cell.error = f"{type(exc).__name__}: {exc}"
        return cell
    cell.metrics = metrics
    if out is not None:
        d = _run_dir(out, cell)
        d.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(metrics, d / "metrics.csv")
        (d / "run.json").write_text(json.dumps({"spec": spec_token(cell.spec), **metrics.summary()},
                                               indent=2) + "\n", encoding="utf-8")
        write_checkpoint(model, run_cfg, d / "final.ckpt")
    return cell


def _pool_cell(args):
    cfg, cell, out = args
    return _run_cell(cfg, cell, out)


def summarize(cells: list[SweepCell], n_specs: int) -> list[dict]:
    """One row per spec entry (duplicates kept), mean and sample std of best test accuracy."""
    rows = []
    for i in range(n_specs):
        mine = [c for c in cells if c.spec_index == i]
        accs = np.array([c.acc for c in mine if not math.isnan(c.acc)])
        rows.append({
            "spec": mine[0].spec.label() if mine else "",
            "mean_acc": float(accs.mean()) if accs.size else math.nan,
            "std_acc": float(accs.std(ddof=1)) if accs.size > 1 else 0.0,
            "n_seeds": len(mine),
            "failures": sum(c.failed for c in mine),
        })
    return rows


def sweep(cfg: ExperimentConfig, specs=None, seeds=None, out_dir=None, jobs: int = 1):
    """Train every (spec, seed) pair independently and summarise per spec.

    Returns ``(cells, summary_rows)``. With ``out_dir`` each run gets its own
    directory under ``runs/`` and the summary lands in ``summary.csv``.
    """
    specs = list(specs if specs is not None else (cfg.sweep_specs or (cfg.entanglement,)))
    seeds = list(seeds if seeds is not None else cfg.seeds)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cells = [SweepCell(i, s, seed) for seed in seeds for i, s in enumerate(specs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_pool_cell, [(cfg, c, out) for c in cells]))
    else:
        cache = {}
        for c in cells:
            if c.seed not in cache:
                cache = {c.seed: gen_dataset(cfg.task, c.seed, cfg.n_train, cfg.n_test)}
            _run_cell(cfg, c, out, cache[c.seed])
    cells.sort(key=lambda c: (c.spec_index, seeds.index(c.seed)))
    rows = summarize(cells, len(specs))
    if out is not None:
        write_summary_csv(rows, out / "summary.csv")
    return cells, rows


def write_summary_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path
