"""Single training runs and their persisted metrics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..formats import dump_checkpoint
from .config import ExperimentConfig
from .data import Dataset, Split, gen_dataset
from .models import Model, build_model
from .optim import clip_grad_norm, make_optimizer

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc")
EVAL_BATCH = 500


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float


@dataclass
class RunMetrics:
    """Per-epoch metrics of one run; epoch 0 is the evaluation at initialisation."""

    seed: int
    config_hash: str
    epochs: list[EpochRecord] = field(default_factory=list)
    status: str = "ok"
    wall_time: float = 0.0
    operator_hash_before: str = ""
    operator_hash_after: str = ""

    @property
    def best_test_acc(self) -> float:
        return max((r.test_acc for r in self.epochs), default=math.nan)

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1].test_acc if self.epochs else math.nan

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "status": self.status,
            "best_test_acc": self.best_test_acc,
            "final_test_acc": self.final_test_acc,
            "wall_time": self.wall_time,
            "operator_hash_before": self.operator_hash_before,
            "operator_hash_after": self.operator_hash_after,
        }


def operator_hash(model: Model) -> str:
    h = hashlib.sha256()
    for op in model.operators():
        h.update(b"-" if op is None else op.tobytes())
    return h.hexdigest()


def _batch_loss(model: Model, x: np.ndarray, y: np.ndarray):
    logits = model.forward(x)
    loss = ad.cross_entropy_with_logits(logits, y)
    return loss, logits.data


def _correct(logits: np.ndarray, y: np.ndarray, score_from: int) -> tuple[int, int]:
    pred = logits.argmax(axis=-1)
    if y.ndim == 2:
        pred, y = pred[:, score_from:], y[:, score_from:]
    return int(np.sum(pred == y)), int(y.size)


def evaluate(model: Model, split: Split, score_from: int = 0) -> tuple[float, float]:
    """Mean loss and accuracy on ``split`` without building gradients."""
    total_loss, correct, count, n = 0.0, 0, 0, len(split)
    for start in range(0, n, EVAL_BATCH):
        xb, yb = split.x[start:start + EVAL_BATCH], split.y[start:start + EVAL_BATCH]
        loss, logits = _batch_loss(model, xb, yb)
        total_loss += float(loss.data) * len(yb)
        c, m = _correct(logits, yb, score_from)
        correct, count = correct + c, count + m
    return total_loss / n, correct / max(count, 1)


def fit(cfg: ExperimentConfig, seed: int, data: Dataset | None = None,
        checkpoint_dir: Path | None = None) -> tuple[RunMetrics, Model]:
    """Train ``cfg`` with ``seed``; returns metrics and the trained model.

    A non-finite loss stops the run with status ``diverged``; metrics recorded
    up to that point are kept.
    """
    if data is None:
        data = gen_dataset(cfg.task, seed, cfg.n_train, cfg.n_test)
    start = time.perf_counter()
    model = build_model(cfg, data, seed)
    metrics = RunMetrics(seed=seed, config_hash=cfg.digest(), operator_hash_before=operator_hash(model))
    params = model.parameters()
    opt = make_optimizer(cfg.optimizer, params)
    order_rng = np.random.default_rng([int(seed), 202])

    loss0, acc0 = evaluate(model, data.train, data.score_from)
    _, test0 = evaluate(model, data.test, data.score_from)
    metrics.epochs.append(EpochRecord(0, loss0, acc0, test0))
    n = len(data.train)
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(n)
        tot_loss, correct, count = 0.0, 0, 0
        for b in range(0, n, cfg.batch_size):
            idx = perm[b:b + cfg.batch_size]
            xb, yb = data.train.x[idx], data.train.y[idx]
            for p in params:
                p.grad = None
            loss, logits = _batch_loss(model, xb, yb)
            value = float(loss.data)
            if not math.isfinite(value):
                metrics.status = f"diverged@epoch{epoch}"
                break
            ad.backward(loss)
            if cfg.optimizer.clip_norm > 0:
                clip_grad_norm(params, cfg.optimizer.clip_norm)
            opt.step()
            tot_loss += value * len(idx)
            c, m = _correct(logits, yb, data.score_from)
            correct, count = correct + c, count + m
        if metrics.failed:
            log.warning("seed %d diverged in epoch %d", seed, epoch)
            break
        _, test_acc = evaluate(model, data.test, data.score_from)
        metrics.epochs.append(EpochRecord(epoch, tot_loss / n, correct / max(count, 1), test_acc))
        log.info("seed %d epoch %d loss %.4f train %.3f test %.3f", seed, epoch, tot_loss / n,
                 correct / max(count, 1), test_acc)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            write_checkpoint(model, cfg, Path(checkpoint_dir) / f"checkpoint_epoch{epoch:03d}.ckpt")
    metrics.operator_hash_after = operator_hash(model)
    metrics.wall_time = time.perf_counter() - start
    return metrics, model


def train(cfg: ExperimentConfig, seed: int, out_dir=None, data: Dataset | None = None) -> RunMetrics:
    """Run one seed; with ``out_dir`` also write ``metrics.csv``, ``run.json`` and a checkpoint."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics, model = fit(cfg, seed, data, checkpoint_dir=out)
    if out is not None:
        write_metrics_csv(metrics, out / "metrics.csv")
        (out / "run.json").write_text(json.dumps(metrics.summary(), indent=2) + "\n", encoding="utf-8")
        write_checkpoint(model, cfg, out / "final.ckpt")
    return metrics


def write_metrics_csv(metrics: RunMetrics, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for r in metrics.epochs:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.test_acc)])
    return path


def write_checkpoint(model: Model, cfg: ExperimentConfig, path) -> Path:
    meta = {
        "task": cfg.task,
        "model": cfg.model,
        "per_step": int(model.per_step),
        "n_train": cfg.n_train if cfg.n_train is not None else "-",
        "n_test": cfg.n_test if cfg.n_test is not None else "-",
    }
    path = Path(path)
    path.write_text(dump_checkpoint(model.blocks, model.named_tensors(), meta), encoding="utf-8")
    return path
