"""Mini-batch cross-entropy training with momentum SGD and a step LR schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .bankio import FeatureBankDataset
from .fusion import FusionModel
from .numeric import Matrix, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr0: float = 0.1
    epochs: int = 200
    lr_drop_epochs: tuple[int, ...] = (100, 150)
    lr_drop_factor: float = 0.1
    seed: int = 0
    label_fraction: float = 1.0
    standardize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(int(e) for e in self.lr_drop_epochs))
        drops = self.lr_drop_epochs
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError(f"lr_drop_epochs must be strictly increasing, got {drops}")
        if drops and (drops[0] < 0 or drops[-1] >= max(self.epochs, 1)):
            raise ValueError(f"lr_drop_epochs must lie in [0, epochs), got {drops} with epochs={self.epochs}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError(f"label_fraction must be in (0, 1], got {self.label_fraction}")
        if self.lr0 <= 0 or self.momentum < 0 or self.weight_decay < 0 or self.lr_drop_factor <= 0:
            raise ValueError("lr0 and lr_drop_factor must be positive, momentum and weight_decay non-negative")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: one drop per boundary <= epoch."""
        drops = sum(1 for e in self.lr_drop_epochs if e <= epoch)
        return self.lr0 * self.lr_drop_factor**drops


@dataclass
class Metrics:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_lrs: list[float] = field(default_factory=list)
    accuracy: float = float("nan")
    n_samples: int = 0


def cross_entropy(logits: Matrix, labels) -> Matrix:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if b < 1 or len(labels) != b:
        raise ShapeError(f"cross_entropy: {b} logit rows but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: labels must lie in [0, {c})")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(lse - x[rows, labels]))

    def back(g):
        p = nm.stable_softmax(x)
        p[rows, labels] -= 1.0
        nm.accumulate(logits, p * (g[0, 0] / b))

    return Matrix.from_op(np.array([[loss]]), (logits,), "cross_entropy", back)


def sgd_step(params: list[Matrix], grads: list[np.ndarray], state: list, config: TrainConfig, lr: float | None = None) -> None:
    """One momentum-SGD update in place.

    ``g = grad + wd * param``; ``v = momentum * v + g``; ``param -= lr * v``.
    ``state`` holds one velocity per parameter and is filled on first use.
    """
    lr = config.lr0 if lr is None else lr
    if not state:
        state.extend(np.zeros(p.shape) for p in params)
    for p, g, v in zip(params, grads, state):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        step = g + config.weight_decay * p.data
        v *= config.momentum
        v += step
        p.data -= lr * v


def stratified_subsample(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices keeping ``ceil(fraction * n_c)`` random samples of each class c."""
    if fraction >= 1.0:
        return np.arange(len(labels))
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = math.ceil(fraction * len(idx))
        keep.append(rng.permutation(idx)[:k])
    return np.sort(np.concatenate(keep))


def _check_compatible(model: FusionModel, dataset: FeatureBankDataset) -> None:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if (dataset.n_branches, dataset.dim) != (model.n_branches, model.dim):
        raise ShapeError(
            f"dataset has N={dataset.n_branches}, d={dataset.dim}; model expects N={model.n_branches}, d={model.dim}"
        )
    if dataset.classes > model.classes:
        raise ShapeError(f"dataset has {dataset.classes} classes, model only {model.classes}")


def train(model: FusionModel, dataset: FeatureBankDataset, config: TrainConfig) -> Metrics:
    """Train ``model`` in place and return per-epoch losses and final train accuracy.

    The label-fraction subsample and the per-epoch shuffles come from
    generators seeded by ``config.seed``; the result is a pure function of
    the config, the data, and the model's initial weights.
    """
    _check_compatible(model, dataset)
    sub_rng = np.random.default_rng([config.seed, 0])
    shuffle_rng = np.random.default_rng([config.seed, 1])
    data = dataset.subset(stratified_subsample(dataset.labels, config.label_fraction, sub_rng))
    if config.standardize:
        std = data.features.std(axis=0)
        model.set_normalization(data.features.mean(axis=0), np.where(std > 0, std, 1.0))

    names_params = model.parameters()
    params = [p for _, p in names_params]
    velocity: list[np.ndarray] = []
    metrics = Metrics(n_samples=len(data))
    n = len(data)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = cross_entropy(model(model.bank(data.features[idx])), data.labels[idx])
            grads = nm.backward(loss)
            sgd_step(params, [grads.get(p, np.zeros(p.shape)) for p in params], velocity, config, lr)
            for name, p in names_params:
                if not np.isfinite(p.data).all():
                    raise nm.NonFiniteError(f"parameter {name} became non-finite in epoch {epoch}")
            total += loss.item() * len(idx)
        metrics.epoch_losses.append(total / n)
        metrics.epoch_lrs.append(lr)
        log.debug("epoch %d lr %.4g loss %.6f", epoch, lr, total / n)
    metrics.accuracy = evaluate(model, data).accuracy
    return metrics


def evaluate(model: FusionModel, dataset: FeatureBankDataset) -> Metrics:
    """Top-1 accuracy; does not touch the parameters."""
    _check_compatible(model, dataset)
    pred = model.predict(dataset.features)
    return Metrics(accuracy=float(np.mean(pred == dataset.labels)), n_samples=len(dataset))


def loss_trend_ok(losses, start: int = 5, window: int = 10, slack: float = 0.05) -> bool:
    """True when loss has a non-increasing trend from epoch ``start`` on.

    Each window of ``window`` consecutive epochs must end no higher than
    ``1 + slack`` times its first value.
    """
    losses = list(losses)
    for e in range(start, len(losses) - window + 1):
        if losses[e + window - 1] > (1.0 + slack) * losses[e]:
            return False
    return True


def format_metrics(metrics: Metrics, accuracy: float | None = None) -> str:
    lines = [
        f"{e},{lr!r},{loss!r}" for e, (lr, loss) in enumerate(zip(metrics.epoch_lrs, metrics.epoch_losses))
    ]
    acc = metrics.accuracy if accuracy is None else accuracy
    lines.append(f"final,{acc!r}")
    return "\n".join(lines) + "\n"
