"""Loss, Adam, mini-batch training and the cross-validation driver."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graphs import Dataset, Graph, stratified_kfold
from .model import ModelConfig, ModelParams, init_params, model_forward

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

TRACE_COLUMNS = ("fold", "epoch", "train_loss", "train_acc", "test_acc")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    l2: float = 1e-4
    batch_size: int = 50
    epochs: int = 200
    folds: int = 10
    seed: int = 0
    lr_grid: list[float] | None = None
    # model hyperparameters; feature_dim and num_classes come from the dataset
    k: int = 3
    m: int = 2
    hidden: int = 64
    r: int = 8
    nonlinearity: str = "relu"
    hop_attention: str = "additive"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.lr_grid is not None:
            self.lr_grid = [float(x) for x in self.lr_grid]
            if not self.lr_grid or any(not x > 0 for x in self.lr_grid):
                raise ValueError("lr_grid entries must be > 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def model_config(self, feature_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(feature_dim=feature_dim, num_classes=num_classes, k=self.k,
                           m=self.m, hidden=self.hidden, r=self.r,
                           nonlinearity=self.nonlinearity, hop_attention=self.hop_attention)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochStats:
    loss: float
    accuracy: float
    steps: int


@dataclass
class FoldReport:
    fold: int
    test_accuracy: float
    learning_rate: float
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    test_indices: list[int] = field(default_factory=list)
    params: ModelParams | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["params"]
        return d


@dataclass
class CVReport:
    folds: list[FoldReport]
    mean: float
    std: float
    config: dict

    @staticmethod
    def aggregate(accuracies: Sequence[float]) -> tuple[float, float]:
        acc = np.asarray(accuracies, dtype=np.float64)
        return float(acc.mean()), float(acc.std())

    def to_dict(self) -> dict:
        return {
            "note": "std is the population standard deviation over folds",
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
            "fold_accuracies": [f.test_accuracy for f in self.folds],
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
        }

    def summary(self) -> str:
        return f"{100 * self.mean:.2f} ± {100 * self.std:.2f} ({len(self.folds)} folds)"

    def write_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_trace_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for f in self.folds:
                for e, row in enumerate(zip(f.train_loss, f.train_acc, f.test_acc), start=1):
                    writer.writerow([f.fold, e, *(repr(float(v)) for v in row)])


def cross_entropy_loss(probs: Tensor, label: int) -> Tensor:
    if not 0 <= label < probs.cols:
        raise ValueError(f"label {label} outside [0, {probs.cols})")
    return ad.scale(ad.log(ad.pick(probs, 0, label), floor=PROB_FLOOR), -1.0)


class AdamState:
    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, l2: float) -> None:
    """In-place Adam update with L2 folded into the gradient (g + l2 * w)."""
    state.t += 1
    c1 = 1.0 - ADAM_BETA1 ** state.t
    c2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        if l2:
            g = g + l2 * p.values
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - ADAM_BETA1) * g if m is None else ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = (1 - ADAM_BETA2) * g * g if v is None else ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        state.m[name], state.v[name] = m, v
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def graph_loss_and_grad(graph: Graph, params: ModelParams, config: ModelConfig) -> tuple[float, np.ndarray]:
    """Forward and backward for one graph; gradients accumulate into ``params``."""
    with Tape() as tape:
        probs = model_forward(graph, params, config)
        loss = cross_entropy_loss(probs, graph.label)
    tape.backward(loss)
    return float(loss.values[0, 0]), probs.values[0]


def train_epoch(params: ModelParams, config: ModelConfig, graphs: Sequence[Graph],
                train_config: TrainConfig, rng: np.random.Generator, state: AdamState,
                learning_rate: float | None = None) -> EpochStats:
    if not graphs:
        raise ValueError("empty training slice")
    lr = train_config.learning_rate if learning_rate is None else learning_rate
    order = rng.permutation(len(graphs))
    total_loss, correct, steps = 0.0, 0, 0
    for start in range(0, len(order), train_config.batch_size):
        batch = order[start:start + train_config.batch_size]
        params.zero_grad()
        for i in batch:
            g = graphs[i]
            loss, probs = graph_loss_and_grad(g, params, config)
            total_loss += loss
            correct += int(np.argmax(probs) == g.label)
        grads = {name: p.grad / len(batch) for name, p in params.items() if p.grad is not None}
        adam_step(params, grads, state, lr, train_config.l2)
        steps += 1
    params.zero_grad()
    return EpochStats(total_loss / len(order), correct / len(order), steps)


def evaluate(params: ModelParams, config: ModelConfig, graphs: Sequence[Graph]) -> float:
    if not graphs:
        raise ValueError("empty evaluation slice")
    correct = 0
    for g in graphs:
        probs = model_forward(g, params, config).values[0]
        correct += int(np.argmax(probs) == g.label)
    return correct / len(graphs)


def _train(model_config: ModelConfig, tc: TrainConfig, train: Sequence[Graph],
           test: Sequence[Graph] | None, seed: int, lr: float):
    params = init_params(model_config, seed)
    rng = np.random.default_rng(seed)
    state = AdamState()
    history = []
    for _ in range(tc.epochs):
        stats = train_epoch(params, model_config, train, tc, rng, state, learning_rate=lr)
        if not math.isfinite(stats.loss):
            raise FloatingPointError(f"non-finite training loss at epoch {len(history) + 1}")
        test_acc = evaluate(params, model_config, test) if test else float("nan")
        history.append((stats.loss, stats.accuracy, test_acc))
    return params, history


def select_learning_rate(dataset: Dataset, train_idx: np.ndarray, tc: TrainConfig,
                         seed: int) -> float:
    """Pick the grid value with the best hold-out accuracy inside ``train_idx``."""
    labels = dataset.labels[train_idx]
    inner_folds = min(tc.folds - 1, int(np.bincount(labels).min())) if tc.folds > 2 else 2
    inner_folds = max(inner_folds, 2)
    inner_tr, inner_val = stratified_kfold(labels, inner_folds, seed)[0]
    fit = [dataset.graphs[i] for i in train_idx[inner_tr]]
    val = [dataset.graphs[i] for i in train_idx[inner_val]]
    model_config = tc.model_config(dataset.feature_dim, dataset.num_classes)
    best_lr, best_acc = None, -1.0
    for lr in tc.lr_grid:
        params, _ = _train(model_config, tc, fit, None, seed, lr)
        acc = evaluate(params, model_config, val)
        logger.info("lr %g: inner hold-out accuracy %.4f", lr, acc)
        if acc > best_acc:
            best_lr, best_acc = lr, acc
    return best_lr


def run_fold(dataset: Dataset, tc: TrainConfig, fold: int, train_idx: np.ndarray,
             test_idx: np.ndarray) -> FoldReport:
    seed = tc.seed + fold
    lr = tc.learning_rate
    if tc.lr_grid:
        lr = select_learning_rate(dataset, train_idx, tc, seed)
    model_config = tc.model_config(dataset.feature_dim, dataset.num_classes)
    train = [dataset.graphs[i] for i in train_idx]
    test = [dataset.graphs[i] for i in test_idx]
    params, history = _train(model_config, tc, train, test, seed, lr)
    report = FoldReport(
        fold=fold, test_accuracy=history[-1][2], learning_rate=lr,
        train_loss=[h[0] for h in history], train_acc=[h[1] for h in history],
        test_acc=[h[2] for h in history], test_indices=[int(i) for i in test_idx],
        params=params)
    logger.info("fold %d: test accuracy %.4f (lr %g)", fold, report.test_accuracy, lr)
    return report


def run_cv(dataset: Dataset, tc: TrainConfig, jobs: int = 1) -> CVReport:
    splits = stratified_kfold(dataset.labels, tc.folds, tc.seed)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_fold, dataset, tc, i, tr, te)
                       for i, (tr, te) in enumerate(splits)]
            reports = [f.result() for f in futures]
    else:
        reports = [run_fold(dataset, tc, i, tr, te) for i, (tr, te) in enumerate(splits)]
    mean, std = CVReport.aggregate([r.test_accuracy for r in reports])
    return CVReport(reports, mean, std, tc.to_dict())
