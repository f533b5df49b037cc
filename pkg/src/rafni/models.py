"""From-scratch probabilistic classifiers exposing per-instance losses and
class probabilities after every epoch.

Two architectures: plain softmax regression and a one-hidden-layer ReLU MLP.
Both train with mini-batch SGD using Nesterov momentum and a per-update
learning-rate decay ``lr_t = lr0 / (1 + decay * t)``, where ``t`` counts
updates since initialization (the conventional Keras-style decay schedule).

Weight initialization: hidden layers use the uniform Glorot scheme
``U(-sqrt(6/(fan_in+fan_out)), +...)``; output layers (and all of softmax
regression) start at zero, which makes a fresh model predict the exact
uniform distribution.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass

import numpy as np

from .engine import EpochSnapshot
from .exceptions import ConfigError, DivergenceError


class ClassifierKind(str, enum.Enum):
    SOFTMAX_REGRESSION = "softmax_regression"
    MLP = "mlp"


@dataclass
class ClassifierSpec:
    kind: ClassifierKind
    input_dim: int
    n_classes: int
    hidden_units: int = 0

    def __post_init__(self):
        self.kind = ClassifierKind(self.kind)
        if self.input_dim < 1 or self.n_classes < 2:
            raise ConfigError(
                f"need input_dim >= 1 and n_classes >= 2, got "
                f"{self.input_dim} and {self.n_classes}"
            )
        if self.kind is ClassifierKind.MLP and self.hidden_units < 1:
            raise ConfigError(f"mlp needs hidden_units >= 1, got {self.hidden_units}")


@dataclass
class OptimizerSpec:
    learning_rate: float = 1e-3
    decay: float = 1e-6
    momentum: float = 0.9
    batch_size: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.decay < 0:
            raise ConfigError(f"decay must be non-negative, got {self.decay}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Classifier:
    """Common training/inference machinery; subclasses define the network."""

    spec: ClassifierSpec

    def __init__(self, spec: ClassifierSpec):
        self.spec = spec
        self.t_updates = 0
        self._velocities: dict[str, np.ndarray] | None = None

    # subclass interface ---------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def logits(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradients(self, features, labels) -> dict[str, np.ndarray]:
        """Gradients of the mean cross-entropy over the batch."""
        raise NotImplementedError

    # shared behaviour -----------------------------------------------------

    def _check_features(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(
                f"expected features of shape (n, {self.spec.input_dim}), "
                f"got {x.shape}"
            )
        return x

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Class-probability vectors; each row sums to one."""
        return softmax(self.logits(self._check_features(features)))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(features), axis=1)

    def instance_losses(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Natural-log cross-entropy of each instance's label."""
        log_p = _log_softmax(self.logits(self._check_features(features)))
        return -log_p[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]

    def snapshot(
        self, features, labels, epoch_index: int = 0, instance_ids=None
    ) -> EpochSnapshot:
        """Forward pass over all given instances, packaged for the controller."""
        x = self._check_features(features)
        y = np.asarray(labels, dtype=np.int64)
        log_p = _log_softmax(self.logits(x))
        probs = np.exp(log_p)
        probs /= probs.sum(axis=1, keepdims=True)
        if instance_ids is None:
            instance_ids = np.arange(x.shape[0])
        return EpochSnapshot(
            epoch_index=epoch_index,
            instance_ids=instance_ids,
            losses=-log_p[np.arange(y.size), y],
            probs=probs,
            preds=np.argmax(probs, axis=1),
        )

    def train_epoch(
        self,
        features,
        labels,
        optimizer: OptimizerSpec,
        rng_seed_for_shuffle: int,
        epoch_index: int = 0,
        instance_ids=None,
    ) -> EpochSnapshot:
        """One full shuffled pass of mini-batch SGD, then a snapshot.

        The last partial mini-batch is kept. Each update applies Nesterov
        momentum at the decayed rate for the current update counter. Raises
        :class:`DivergenceError` if a batch produces a non-finite loss.
        """
        x = self._check_features(features)
        y = np.asarray(labels, dtype=np.int64)
        if x.shape[0] != y.size:
            raise ValueError("features and labels are not aligned")
        if self._velocities is None:
            self._velocities = {k: np.zeros_like(v) for k, v in self.params().items()}

        order = np.random.default_rng(rng_seed_for_shuffle).permutation(x.shape[0])
        b = optimizer.batch_size
        for batch_idx, start in enumerate(range(0, x.shape[0], b)):
            rows = order[start:start + b]
            xb, yb = x[rows], y[rows]
            batch_loss = float(np.mean(self.instance_losses(xb, yb)))
            if not np.isfinite(batch_loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch_index}, batch {batch_idx}"
                )
            grads = self.gradients(xb, yb)
            lr = optimizer.learning_rate / (1.0 + optimizer.decay * self.t_updates)
            params = self.params()
            for name, g in grads.items():
                v = self._velocities[name]
                v *= optimizer.momentum
                v -= lr * g
                params[name] += optimizer.momentum * v - lr * g
            self.t_updates += 1
        return self.snapshot(x, y, epoch_index=epoch_index, instance_ids=instance_ids)


class SoftmaxRegression(Classifier):
    """Linear logits followed by softmax. Zero-initialized."""

    def __init__(self, spec: ClassifierSpec, rng_seed: int = 0):
        super().__init__(spec)
        self.w = np.zeros((spec.input_dim, spec.n_classes))
        self.b = np.zeros(spec.n_classes)

    def params(self):
        return {"w": self.w, "b": self.b}

    def logits(self, features):
        return features @ self.w + self.b

    def gradients(self, features, labels):
        probs = softmax(self.logits(features))
        probs[np.arange(len(labels)), labels] -= 1.0
        probs /= len(labels)
        return {"w": features.T @ probs, "b": probs.sum(axis=0)}


class Mlp(Classifier):
    """One ReLU hidden layer; Glorot-uniform hidden weights, zero output layer."""

    def __init__(self, spec: ClassifierSpec, rng_seed: int = 0):
        super().__init__(spec)
        rng = np.random.default_rng(rng_seed)
        limit = np.sqrt(6.0 / (spec.input_dim + spec.hidden_units))
        self.w1 = rng.uniform(-limit, limit, size=(spec.input_dim, spec.hidden_units))
        self.b1 = np.zeros(spec.hidden_units)
        self.w2 = np.zeros((spec.hidden_units, spec.n_classes))
        self.b2 = np.zeros(spec.n_classes)

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def _hidden(self, features):
        return np.maximum(features @ self.w1 + self.b1, 0.0)

    def logits(self, features):
        return self._hidden(features) @ self.w2 + self.b2

    def gradients(self, features, labels):
        pre = features @ self.w1 + self.b1
        hidden = np.maximum(pre, 0.0)
        probs = softmax(hidden @ self.w2 + self.b2)
        probs[np.arange(len(labels)), labels] -= 1.0
        probs /= len(labels)
        d_hidden = (probs @ self.w2.T) * (pre > 0.0)
        return {
            "w1": features.T @ d_hidden,
            "b1": d_hidden.sum(axis=0),
            "w2": hidden.T @ probs,
            "b2": probs.sum(axis=0),
        }


def init_model(spec: ClassifierSpec, rng_seed: int = 0) -> Classifier:
    """Build a freshly initialized classifier; deterministic per seed."""
    if spec.kind is ClassifierKind.SOFTMAX_REGRESSION:
        return SoftmaxRegression(spec, rng_seed)
    return Mlp(spec, rng_seed)


def parameter_count(model: Classifier) -> int:
    return sum(v.size for v in model.params().values())


_MAGIC = b"RAFNIMDL"


def save_checkpoint(model: Classifier, path) -> None:
    """Write a checkpoint: JSON header, then all parameters as little-endian
    64-bit floats in the header's declared order."""
    header = {
        "kind": model.spec.kind.value,
        "input_dim": model.spec.input_dim,
        "n_classes": model.spec.n_classes,
        "hidden_units": model.spec.hidden_units,
        "t_updates": model.t_updates,
        "params": {k: list(v.shape) for k, v in model.params().items()},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, value in model.params().items():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> Classifier:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        spec = ClassifierSpec(
            kind=ClassifierKind(header["kind"]),
            input_dim=header["input_dim"],
            n_classes=header["n_classes"],
            hidden_units=header["hidden_units"],
        )
        model = init_model(spec)
        model.t_updates = header["t_updates"]
        for name, shape in header["params"].items():
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(size * 8), dtype="<f8").reshape(shape)
            model.params()[name][...] = data
    return model
