"""Training and evaluation for the classifier.

The recipe: Adam with bias correction, a learning rate that decays by a
fixed factor at chosen epochs, label-smoothed cross-entropy, and L2 weight
decay added to every gradient (adjacency residuals included, which keeps
them near zero unless the data earns an edge). Full-scale defaults are
0.001 decayed by 10x at epochs 40 and 80 over 120 epochs; `TrainConfig.desk`
gives the scaled-down schedule used throughout the tests. Runs are
deterministic given the seed: parameter init, shuffle order, and update
order are all fixed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import PreparedDataset, PreparedSample
from .errors import ShapeError, TrainingDiverged
from .model import Checkpoint, GcnClassifier, ModelConfig, from_checkpoint, init_model, snapshot
from .tensor import Tape, Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.001
    decay_epochs: tuple[int, ...] = (40, 80)
    decay_factor: float = 10.0
    total_epochs: int = 120
    weight_decay: float = 0.0001
    batch_size: int = 32
    label_smoothing: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.total_epochs < 1 or self.batch_size < 1:
            raise ValueError("total_epochs and batch_size must be positive")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError(f"decay_epochs must be strictly increasing, got {self.decay_epochs}")
        if self.decay_epochs and self.decay_epochs[-1] >= self.total_epochs:
            raise ValueError(f"decay epochs {self.decay_epochs} must precede total_epochs {self.total_epochs}")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.initial_lr <= 0 or self.decay_factor <= 0 or self.weight_decay < 0:
            raise ValueError("initial_lr and decay_factor must be positive, weight_decay non-negative")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Scaled-down schedule: 30 epochs with decays at 15 and 25."""
        base = dict(total_epochs=30, decay_epochs=(15, 25))
        base.update(overrides)
        return cls(**base)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    decays = sum(1 for d in cfg.decay_epochs if d <= epoch)
    return cfg.initial_lr / cfg.decay_factor**decays


def smoothed_ce_loss(logits: Tensor, label: int, eps: float) -> Tensor:
    """Cross-entropy against the smoothed target (1-eps)*onehot + eps/C.

    Numerically stabilized by subtracting max(logits) as a constant, which
    leaves both the value and the gradient exact.
    """
    if logits.ndim != 1:
        raise ShapeError(f"expected a logits vector, got shape {logits.shape}")
    c = logits.shape[0]
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    if not 0 <= label < c:
        raise ValueError(f"label {label} out of range for {c} classes")
    if not 0 <= eps < 1:
        raise ValueError(f"smoothing must be in [0, 1), got {eps}")
    shift = Tensor(np.asarray(-float(np.max(logits.data))))
    z = T.add(logits, shift)
    log_norm = T.log(T.reduce_sum(T.exp(z)))
    target = np.full(c, eps / c)
    target[label] += 1.0 - eps
    return T.sub(log_norm, T.reduce_sum(T.mul(z, Tensor(target))))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update, in place. Weight decay enters as an
    additive L2 term on each gradient."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.data.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    top1_accuracy: float
    per_class_correct: np.ndarray
    confusion: np.ndarray  # confusion[true, predicted]
    predictions: list[tuple[str, int, int]]  # (sample_id, true, predicted)


def predict_logits(model: GcnClassifier, features: np.ndarray) -> np.ndarray:
    return model.forward(Tensor(np.asarray(features, dtype=float))).data


def evaluate(model: "GcnClassifier | Checkpoint", samples: list[PreparedSample], n_classes: int) -> EvalReport:
    if isinstance(model, Checkpoint):
        model = from_checkpoint(model)
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    predictions = []
    for s in samples:
        logits = predict_logits(model, s.features)
        pred = int(np.argmax(logits))
        confusion[s.label, pred] += 1
        predictions.append((s.sample_id, s.label, pred))
    correct = np.diag(confusion).copy()
    return EvalReport(
        top1_accuracy=float(np.trace(confusion)) / len(samples),
        per_class_correct=correct,
        confusion=confusion,
        predictions=predictions,
    )


# ---------------------------------------------------------------------------
# The loop


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    test_top1: float


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    best_epoch: int
    history: list[EpochStats]


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: PreparedDataset) -> TrainResult:
    """Train a fresh model on the dataset's train split, scoring the test
    split every epoch. Keeps the highest-accuracy checkpoint (earliest epoch
    on ties) alongside the final one. Aborts on a non-finite loss."""
    if not dataset.train:
        raise ValueError("training split is empty")
    model = init_model(model_cfg, dataset.topology, train_cfg.seed)
    state = adam_init(model.params)
    history: list[EpochStats] = []
    best: Checkpoint | None = None
    best_acc = -1.0
    best_epoch = -1
    n = len(dataset.train)
    for epoch in range(train_cfg.total_epochs):
        lr = lr_at_epoch(train_cfg, epoch)
        order = np.random.default_rng([train_cfg.seed, 0x657068, epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            for p in model.params.values():
                p.zero_grad()
            with Tape():
                loss = None
                for idx in batch:
                    sample = dataset.train[int(idx)]
                    logits = model.forward(Tensor(sample.features))
                    one = smoothed_ce_loss(logits, sample.label, train_cfg.label_smoothing)
                    loss = one if loss is None else T.add(loss, one)
                loss = T.scale(loss, 1.0 / len(batch))
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, step {state.t}: {value}"
                    )
                T.backward(loss)
            loss_sum += value * len(batch)
            grads = {k: p.grad for k, p in model.params.items()}
            adam_step(model.params, grads, state, lr, weight_decay=train_cfg.weight_decay)
        test_acc = (
            evaluate(model, dataset.test, dataset.n_classes).top1_accuracy
            if dataset.test
            else float("nan")
        )
        history.append(EpochStats(epoch, lr, loss_sum / n, test_acc))
        if dataset.test and test_acc > best_acc:
            best = snapshot(model, state.m, state.v, state.t, epoch + 1)
            best_acc = test_acc
            best_epoch = epoch
    final = snapshot(model, state.m, state.v, state.t, train_cfg.total_epochs)
    if best is None:
        best, best_epoch = final, train_cfg.total_epochs - 1
    return TrainResult(final=final, best=best, best_epoch=best_epoch, history=history)


# ---------------------------------------------------------------------------
# Run artifacts


def write_epoch_log(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "test_top1"])
        for row in history:
            writer.writerow([row.epoch, repr(row.lr), repr(row.train_loss), repr(row.test_top1)])


def read_epoch_log(path) -> list[EpochStats]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                EpochStats(
                    int(row["epoch"]), float(row["lr"]), float(row["train_loss"]), float(row["test_top1"])
                )
            )
    return out


def write_predictions(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "true_label", "predicted_label"])
        for sample_id, true, pred in report.predictions:
            writer.writerow([sample_id, true, pred])


def read_predictions(path) -> list[tuple[str, int, int]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((row["sample_id"], int(row["true_label"]), int(row["predicted_label"])))
    return out
