"""Mini-batch training, fine-tuning and the optimisers they use."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..preprocess import DatapointSet
from ..tasks import Task
from .losses import cross_entropy, l2_loss
from .network import TwoStreamNet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"
    weight_decay: float = 0.0
    momentum: float = 0.9  # sgd only
    beta1: float = 0.9
    beta2: float = 0.999
    cosine_decay: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(layer.params[k]) for _, layer, k in params]
        self.v = [np.zeros_like(layer.params[k]) for _, layer, k in params]
        self.t = 0

    def step(self):
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for i, (_, layer, k) in enumerate(self.params):
            p, g = layer.params[k], layer.grads[k]
            if self.wd:
                g = g + self.wd * p
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            step = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            layer.params[k] = (p - step).astype(p.dtype)


class SGD:
    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = params
        self.lr, self.mu, self.wd = lr, momentum, weight_decay
        self.vel = [np.zeros_like(layer.params[k]) for _, layer, k in params]

    def step(self):
        if self.lr == 0:
            return
        for i, (_, layer, k) in enumerate(self.params):
            p, g = layer.params[k], layer.grads[k]
            if self.wd:
                g = g + self.wd * p
            self.vel[i] = self.mu * self.vel[i] + g
            layer.params[k] = (p - self.lr * self.vel[i]).astype(p.dtype)


def make_optimizer(model: TwoStreamNet, cfg: TrainConfig):
    params = model.parameters()
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    return SGD(params, cfg.learning_rate, cfg.momentum, cfg.weight_decay)


def targets_for(task: Task, labels: np.ndarray) -> np.ndarray:
    return np.asarray(labels, dtype=float) if task is Task.LOCALIZATION else task.class_index(labels)


def task_loss(task: Task, pred, target):
    if task is Task.LOCALIZATION:
        return l2_loss(pred, target)
    return cross_entropy(pred, target)


def backward(model: TwoStreamNet, x, target) -> tuple[float, dict[str, np.ndarray]]:
    """Train-mode forward, loss and exact gradients for every parameter."""
    pred = model.forward(x, train=True)
    loss, dpred = task_loss(model.task, pred, target)
    model.backward(dpred)
    return loss, {name: layer.grads[k] for name, layer, k in model.parameters()}


def val_metric(task: Task, pred, target) -> float:
    """Mean error in metres for localization, accuracy otherwise."""
    if task is Task.LOCALIZATION:
        return float(np.hypot(*(pred - target).T).mean())
    return float((pred.argmax(axis=1) == target).mean())


def _better(task: Task, new: float, best: float | None) -> bool:
    if best is None:
        return True
    return new < best if task is Task.LOCALIZATION else new > best


def evaluate(model: TwoStreamNet, ds: DatapointSet, batch_size: int = 64) -> tuple[float, float]:
    target = targets_for(model.task, ds.labels)
    pred = model.predict(ds.x, batch_size)
    loss, _ = task_loss(model.task, pred.astype(np.float64), target)
    return loss, val_metric(model.task, pred.astype(np.float64), target)


def train(model: TwoStreamNet, train_set: DatapointSet, val_set: DatapointSet | None,
          cfg: TrainConfig, progress=None) -> tuple[TwoStreamNet, list[dict]]:
    """Optimise ``model`` in place; return the best-validation copy and the history.

    Without a validation set the final model is returned. ``progress`` is
    called with each history row.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if val_set is not None and len(val_set) == 0:
        raise ValueError("empty validation set")
    if train_set.task is not model.task:
        raise ValueError(f"model task {model.task.value} != data task {train_set.task.value}")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model, cfg)
    y = targets_for(model.task, train_set.labels)
    n = len(train_set)
    history: list[dict] = []
    best, best_model = None, model.copy()
    for epoch in range(1, cfg.epochs + 1):
        if cfg.cosine_decay and cfg.epochs > 1:
            opt.lr = cfg.learning_rate * 0.5 * (1 + np.cos(np.pi * (epoch - 1) / cfg.epochs))
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            loss, _ = backward(model, train_set.x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch {i // cfg.batch_size}")
            opt.step()
            total += loss * len(idx)
        row = {"epoch": epoch, "train_loss": total / n}
        if val_set is not None:
            row["val_loss"], row["val_metric"] = evaluate(model, val_set)
            if _better(model.task, row["val_metric"], best):
                best, best_model = row["val_metric"], model.copy()
        else:
            row["val_loss"], row["val_metric"] = float("nan"), float("nan")
            best_model = model
        history.append(row)
        log.info("epoch %d train %.4f val %.4f metric %.4f", epoch, row["train_loss"],
                 row["val_loss"], row["val_metric"])
        if progress is not None:
            progress(row)
    if val_set is None or not history:
        return model.copy(), history
    return best_model, history


def finetune(model: TwoStreamNet, small_set: DatapointSet, epochs: int, cfg: TrainConfig,
             val_set: DatapointSet | None = None, lr_scale: float = 0.1,
             progress=None) -> tuple[TwoStreamNet, list[dict]]:
    """Continue training a copy of ``model`` at ``lr_scale`` times the learning rate."""
    if len(small_set) == 0:
        raise ValueError("empty fine-tuning set")
    if not 0 <= epochs <= 50:
        raise ValueError("fine-tuning is limited to 0..50 epochs")
    start = model.copy()
    if epochs == 0:
        return start, []
    ft_cfg = replace(cfg, epochs=epochs, learning_rate=cfg.learning_rate * lr_scale)
    return train(start, small_set, val_set, ft_cfg, progress)


def time_split(ds: DatapointSet, train: float = 0.70, val: float = 0.15
               ) -> tuple[DatapointSet, DatapointSet, DatapointSet]:
    """Contiguous train/validation/test split in datapoint time order.

    Contiguous blocks keep overlapping windows from leaking across splits
    more than once per boundary.
    """
    if not (0 < train and 0 <= val and train + val <= 1):
        raise ValueError("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1")
    order = np.argsort(ds.t_end, kind="stable")
    n = len(order)
    a = int(round(train * n))
    b = int(round((train + val) * n))
    return ds.subset(order[:a]), ds.subset(order[a:b]), ds.subset(order[b:])


def first_minutes(ds: DatapointSet, minutes: float) -> DatapointSet:
    """Datapoints whose window ends within ``minutes`` of the earliest one."""
    if len(ds) == 0:
        return ds
    t0 = ds.t_end.min()
    return ds.subset(np.flatnonzero(ds.t_end - t0 <= minutes * 60e6))


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for row in history:
            w.writerow([row["epoch"], f"{row['train_loss']:.9g}", f"{row['val_loss']:.9g}",
                        f"{row['val_metric']:.9g}"])
