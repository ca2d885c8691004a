"""Classifier training on mixed real/synthetic batches, and evaluation.

The classifier is a linear softmax model by default (a one-hidden-layer net
is available for worlds that need it), trained with SGD + momentum under a
cosine learning-rate decay, minimizing cross-entropy against soft labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import MIXUP_MODES, MIXUP_NONE, build_epoch_batches, one_hot_labels
from .samples import DataError, SampleSet
from .world import _seed_key

CLF_LINEAR = "linear"
CLF_MLP = "mlp"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 512
    lr: float = 0.01
    momentum: float = 0.9
    mixup_mode: str = MIXUP_NONE
    mixup_beta_a: float = 1.0
    classifier: str = CLF_LINEAR
    hidden: int = 32

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch size and learning rate must be positive")
        if self.mixup_mode not in MIXUP_MODES:
            raise ValueError(f"unknown mixup mode '{self.mixup_mode}'")
        if self.classifier not in (CLF_LINEAR, CLF_MLP):
            raise ValueError(f"unknown classifier '{self.classifier}'")


class SoftmaxClassifier:
    """Linear or one-hidden-layer softmax model with manual SGD updates."""

    def __init__(self, dim: int, num_classes: int, kind: str = CLF_LINEAR,
                 hidden: int = 32, seed=0):
        self.kind = kind
        self.num_classes = num_classes
        rng = np.random.default_rng(_seed_key(seed))
        if kind == CLF_LINEAR:
            self.params = {"W": np.zeros((dim, num_classes)),
                           "b": np.zeros(num_classes)}
        else:
            self.params = {
                "W1": rng.standard_normal((dim, hidden)) * np.sqrt(2.0 / dim),
                "b1": np.zeros(hidden),
                "W2": rng.standard_normal((hidden, num_classes)) * np.sqrt(1.0 / hidden),
                "b2": np.zeros(num_classes),
            }
        self._velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _forward(self, x: np.ndarray):
        if self.kind == CLF_LINEAR:
            return x @ self.params["W"] + self.params["b"], None
        h = np.tanh(x @ self.params["W1"] + self.params["b1"])
        return h @ self.params["W2"] + self.params["b2"], h

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self._forward(np.atleast_2d(np.asarray(x, dtype=float)))
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    def sgd_step(self, x: np.ndarray, y_soft: np.ndarray, lr: float,
                 momentum: float) -> float:
        """One cross-entropy SGD step; returns the batch loss."""
        n = x.shape[0]
        logits, h = self._forward(x)
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        loss = float(-(y_soft * np.log(np.maximum(p, 1e-300))).sum() / n)
        dz = (p - y_soft) / n
        grads: dict[str, np.ndarray]
        if self.kind == CLF_LINEAR:
            grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        else:
            grads = {"W2": h.T @ dz, "b2": dz.sum(axis=0)}
            dh = (dz @ self.params["W2"].T) * (1.0 - h * h)
            grads["W1"] = x.T @ dh
            grads["b1"] = dh.sum(axis=0)
        for k, g in grads.items():
            self._velocity[k] = momentum * self._velocity[k] - lr * g
            self.params[k] += self._velocity[k]
        return loss

    def save_npz(self, path: str | Path) -> None:
        np.savez(path, kind=self.kind, num_classes=self.num_classes, **self.params)

    @staticmethod
    def load_npz(path: str | Path) -> "SoftmaxClassifier":
        data = np.load(path, allow_pickle=False)
        kind = str(data["kind"])
        params = {k: data[k] for k in data.files if k not in ("kind", "num_classes")}
        dim = params["W"].shape[0] if kind == CLF_LINEAR else params["W1"].shape[0]
        clf = SoftmaxClassifier(dim, int(data["num_classes"]), kind=kind,
                                hidden=params.get("b1", np.zeros(1)).shape[0])
        clf.params = params
        clf._velocity = {k: np.zeros_like(v) for k, v in params.items()}
        return clf


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / total_epochs))


def train_classifier(real: SampleSet, synth: SampleSet | None, cfg: TrainConfig,
                     num_classes: int, dim: int, seed=0) -> SoftmaxClassifier:
    """Train on per-epoch batch lists; deterministic in the seed."""
    if len(real) == 0:
        raise DataError("training needs a non-empty real split")
    clf = SoftmaxClassifier(dim, num_classes, kind=cfg.classifier,
                            hidden=cfg.hidden, seed=_seed_key(seed) + (17,))
    rng = np.random.default_rng(_seed_key(seed) + (29,))
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        for batch in build_epoch_batches(real, synth, cfg.mixup_mode,
                                         cfg.batch_size, num_classes, rng,
                                         cfg.mixup_beta_a):
            clf.sgd_step(batch.x, batch.y, lr, cfg.momentum)
    return clf


@dataclass
class MetricsReport:
    """Per-class and head/tail/overall accuracy plus optional extras."""

    per_class_top1: list[float]
    head_top1: float
    tail_top1: float
    overall_top1: float
    head_classes: list[int]
    train_counts: list[int]
    diversity: list[float] | None = None      # per-class synthetic diversity
    oracle_confusion: list[list[float]] | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_class_top1": self.per_class_top1,
            "head_top1": self.head_top1,
            "tail_top1": self.tail_top1,
            "overall_top1": self.overall_top1,
            "head_classes": self.head_classes,
            "train_counts": self.train_counts,
            "diversity": self.diversity,
            "oracle_confusion": self.oracle_confusion,
            "config": self.config,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load_json(path: str | Path) -> "MetricsReport":
        d = json.loads(Path(path).read_text())
        return MetricsReport(
            per_class_top1=d["per_class_top1"], head_top1=d["head_top1"],
            tail_top1=d["tail_top1"], overall_top1=d["overall_top1"],
            head_classes=d["head_classes"], train_counts=d["train_counts"],
            diversity=d.get("diversity"), oracle_confusion=d.get("oracle_confusion"),
            config=d.get("config", {}))

    def table(self) -> str:
        head = " ".join(f"{v:6.1f}" for v in self.per_class_top1)
        return (f"head {self.head_top1:6.2f}  tail {self.tail_top1:6.2f}  "
                f"overall {self.overall_top1:6.2f}  per-class [{head}]")


def evaluate(clf: SoftmaxClassifier, test: SampleSet, train_counts: np.ndarray,
             head_threshold: int = 20, config: dict | None = None) -> MetricsReport:
    """Top-1 accuracy per class and averaged over head/tail/all classes.

    Head classes are those whose *training* count reaches the threshold; the
    overall score is the macro average (the test split is balanced).
    """
    train_counts = np.asarray(train_counts)
    num_classes = len(train_counts)
    pred = clf.predict(test.x)
    per_class = []
    for c in range(num_classes):
        mask = test.labels == c
        if not mask.any():
            raise DataError(f"test split is missing class {c}")
        per_class.append(float((pred[mask] == c).mean() * 100.0))
    per_class_arr = np.array(per_class)
    head = train_counts >= head_threshold
    head_top1 = float(per_class_arr[head].mean()) if head.any() else float("nan")
    tail_top1 = float(per_class_arr[~head].mean()) if (~head).any() else float("nan")
    return MetricsReport(
        per_class_top1=per_class,
        head_top1=head_top1,
        tail_top1=tail_top1,
        overall_top1=float(per_class_arr.mean()),
        head_classes=[int(c) for c in np.flatnonzero(head)],
        train_counts=[int(v) for v in train_counts],
        config=config or {},
    )
