"""Unified local-training API over the two supported architectures.

Trainers expose the same five calls regardless of architecture: get/set the
flat parameter vector, fit with mini-batch gradient descent, evaluate, and
predict. A trainer instance is single-owner; different instances can run on
different threads (the fleet simulator does exactly that).

Losses: mean squared error for regression, softmax cross-entropy for
classification. Fitting is bit-deterministic given the hyperparameter seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_format import (
    ARCH_LINEAR,
    ARCH_MLP,
    CanonicalModel,
    linear_n_features,
    mlp_dims,
)

TASK_REGRESSION = "regression"
TASK_CLASSIFICATION = "classification"

FULL_BATCH = None  # batch_size sentinel: one batch per epoch


class TrainingError(Exception):
    pass


class LengthMismatch(TrainingError):
    pass


class DimensionMismatch(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    """Training diverged; the caller must drop this round contribution."""


@dataclass
class Dataset:
    features: np.ndarray  # (n_examples, n_features) float64
    labels: np.ndarray  # float64 targets or int class indices
    task_kind: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DimensionMismatch(f"features must be (n>=1, d), got {self.features.shape}")
        if self.task_kind == TASK_CLASSIFICATION:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionMismatch("labels must be one per example")

    @property
    def n_examples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float
    epochs: int
    batch_size: int | None = FULL_BATCH
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1 or None, got {self.batch_size}")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "Hyperparams":
        return Hyperparams(
            learning_rate=float(obj["learning_rate"]),
            epochs=int(obj["epochs"]),
            batch_size=None if obj.get("batch_size") is None else int(obj["batch_size"]),
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class TrainReport:
    params: np.ndarray
    num_examples: int
    initial_loss: float
    final_loss: float


class Trainer:
    """Shared fit/evaluate loop; subclasses provide loss and gradient."""

    task_kind: str

    def n_params(self) -> int:
        raise NotImplementedError

    def get_parameters(self) -> np.ndarray:
        return self._params.copy()

    def set_parameters(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params(),):
            raise LengthMismatch(f"expected {self.n_params()} params, got {params.shape}")
        self._params = params.copy()

    def _check_features(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected features (*, {self.n_features}), got {features.shape}"
            )
        return features

    def _loss_and_grad(self, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def _loss(self, X: np.ndarray, y: np.ndarray) -> float:
        return self._loss_and_grad(X, y)[0]

    def loss_and_gradient(self, features: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss and its analytic gradient w.r.t. the flat parameter vector."""
        X = self._check_features(features)
        y = np.asarray(labels)
        return self._loss_and_grad(X, y)

    def fit(self, data: Dataset, hp: Hyperparams) -> TrainReport:
        X = self._check_features(data.features)
        if data.task_kind != self.task_kind:
            raise DimensionMismatch(f"dataset is {data.task_kind}, trainer wants {self.task_kind}")
        y = data.labels
        n = data.n_examples
        batch = n if hp.batch_size is None else min(hp.batch_size, n)
        rng = np.random.default_rng(hp.seed)

        # divergence surfaces as NonFiniteLoss below, not as runtime warnings
        with np.errstate(over="ignore", invalid="ignore"):
            initial_loss = self._loss(X, y)
            for _ in range(hp.epochs):
                order = rng.permutation(n) if batch < n else np.arange(n)
                for start in range(0, n, batch):
                    idx = order[start : start + batch]
                    _, grad = self._loss_and_grad(X[idx], y[idx])
                    self._params = self._params - hp.learning_rate * grad
            final_loss = self._loss(X, y)

        if not (np.isfinite(final_loss) and np.all(np.isfinite(self._params))):
            raise NonFiniteLoss(f"training diverged (loss={final_loss})")
        return TrainReport(self.get_parameters(), n, float(initial_loss), float(final_loss))

    def evaluate(self, data: Dataset) -> tuple[float, float]:
        raise NotImplementedError

    def predict(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LinearTrainer(Trainer):
    """Affine regressor y = x.w + b under mean squared error."""

    task_kind = TASK_REGRESSION

    def __init__(self, n_features: int):
        self.n_features = n_features
        self._params = np.zeros(n_features + 1)

    def n_params(self) -> int:
        return self.n_features + 1

    def _split(self) -> tuple[np.ndarray, float]:
        return self._params[: self.n_features], self._params[self.n_features]

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = self._check_features(features)
        w, b = self._split()
        return X @ w + b

    def _loss_and_grad(self, X, y):
        w, b = self._split()
        resid = X @ w + b - y
        n = X.shape[0]
        loss = float(np.mean(resid**2))
        grad = np.concatenate([(2.0 / n) * (X.T @ resid), [(2.0 / n) * np.sum(resid)]])
        return loss, grad

    def evaluate(self, data: Dataset) -> tuple[float, float]:
        X = self._check_features(data.features)
        mse = float(np.mean((X @ self._split()[0] + self._split()[1] - data.labels) ** 2))
        return mse, mse


class MlpTrainer(Trainer):
    """One-hidden-layer ReLU network with softmax output, cross-entropy loss.

    Flat parameter order: w1 (d*h row-major), b1 (h), w2 (h*c), b2 (c).
    """

    task_kind = TASK_CLASSIFICATION

    def __init__(self, n_features: int, hidden: int, n_classes: int):
        self.n_features = n_features
        self.hidden = hidden
        self.n_classes = n_classes
        self._params = np.zeros(self.n_params())

    def n_params(self) -> int:
        d, h, c = self.n_features, self.hidden, self.n_classes
        return d * h + h + h * c + c

    def _unpack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        d, h, c = self.n_features, self.hidden, self.n_classes
        p = self._params
        w1 = p[: d * h].reshape(d, h)
        b1 = p[d * h : d * h + h]
        w2 = p[d * h + h : d * h + h + h * c].reshape(h, c)
        b2 = p[d * h + h + h * c :]
        return w1, b1, w2, b2

    def _forward(self, X: np.ndarray):
        w1, b1, w2, b2 = self._unpack()
        z1 = X @ w1 + b1
        hid = np.maximum(z1, 0.0)
        logits = hid @ w2 + b2
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        return z1, hid, logits, probs

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = self._check_features(features)
        return self._forward(X)[3]

    def _loss_and_grad(self, X, y):
        n = X.shape[0]
        z1, hid, logits, probs = self._forward(X)
        # cross-entropy via log-sum-exp for stability
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = float(-np.mean(log_probs[np.arange(n), y]))

        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        w1, b1, w2, b2 = self._unpack()
        dw2 = hid.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dhid = dlogits @ w2.T
        dz1 = dhid * (z1 > 0)
        dw1 = X.T @ dz1
        db1 = dz1.sum(axis=0)
        grad = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
        return loss, grad

    def evaluate(self, data: Dataset) -> tuple[float, float]:
        X = self._check_features(data.features)
        y = data.labels
        loss = self._loss(X, y)
        predicted = np.argmax(self._forward(X)[3], axis=1)
        accuracy = float(np.mean(predicted == y))
        return float(loss), accuracy


def trainer_for_model(model: CanonicalModel) -> Trainer:
    """Instantiate the right trainer for a canonical model's architecture."""
    if model.arch.kind == ARCH_LINEAR:
        trainer = LinearTrainer(linear_n_features(model))
    elif model.arch.kind == ARCH_MLP:
        d, h, c = mlp_dims(model)
        trainer = MlpTrainer(d, h, c)
    else:
        raise TrainingError(f"no trainer for arch {model.arch.kind!r}")
    if model.params.size:
        trainer.set_parameters(model.params)
    return trainer
