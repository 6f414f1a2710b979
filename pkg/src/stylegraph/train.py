"""Mini-batch Adam training with model selection on validation micro F1."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .corpus import Dataset
from .labelgraph import select_labels
from .metrics import EvalInstance, MetricsReport, evaluate
from .model import StyleClassifier, dataset_targets

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"loss became NaN at epoch {epoch} (step {step})")
        self.epoch = epoch
        self.step = step


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None  # stop after this many epochs without improvement

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1; there is nothing to select otherwise")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class TrainResult:
    best_epoch: int
    best_val: dict
    history: list[dict] = field(default_factory=list)


def instances_from_scores(scores: np.ndarray, gold: np.ndarray, threshold: float, fallback: bool = True) -> list[EvalInstance]:
    out = []
    for e, y in zip(scores, gold):
        pred = select_labels(e, threshold, fallback)
        out.append(EvalInstance.of(np.flatnonzero(y), pred.selected, e))
    return out


def evaluate_model(model: StyleClassifier, dataset: Dataset, threshold: float | None = None, train_frequency=None) -> MetricsReport:
    scores = model.scores(dataset.samples)
    gold = dataset_targets(dataset, model.label_space)
    p = model.config.threshold if threshold is None else threshold
    return evaluate(instances_from_scores(scores, gold, p, model.config.fallback), model.label_space, train_frequency)


def train(
    model: StyleClassifier,
    train_set: Dataset,
    val_set: Dataset,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train in place; on return ``model`` holds the best-validation snapshot."""
    rng = np.random.default_rng(cfg.seed)
    items = model.items(train_set.samples)
    targets = dataset_targets(train_set, model.label_space)
    params = model.trainable()
    opt = ag.Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    best_f1, best_epoch, best_snapshot, best_val = -1.0, 0, None, {}
    history = []
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(items))
        total, batches = 0.0, 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            with ag.Tape() as tape:
                loss = model.loss([items[i] for i in idx], targets[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(epoch, step)
            tape.backward(loss)
            opt.step()
            total += value
            batches += 1
        report = evaluate_model(model, val_set)
        record = {"epoch": epoch, "train_loss": total / batches, "val": report.headline()}
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        logger.info("epoch %d loss %.4f val micro F1 %.3f", epoch, record["train_loss"], report.micro_f1)
        if report.micro_f1 > best_f1:
            best_f1, best_epoch, best_val = report.micro_f1, epoch, record["val"]
            best_snapshot = model.snapshot()
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    model.restore(best_snapshot)
    return TrainResult(best_epoch, best_val, history)


def log_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
