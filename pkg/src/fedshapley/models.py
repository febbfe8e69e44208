"""Flat-parameter classifiers, their gradients, and validation utilities.

Models are plain float64 vectors so that federated arithmetic (gradient
sums, weighted aggregation, sub-model reconstruction) is exact vector
algebra. Two architectures are supported: multinomial logistic regression
and a ReLU MLP, both trained on softmax cross-entropy with hand-written
backprop.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datasets import Dataset
from .errors import ConfigurationError, ContractError
from .rng import stream


class ModelKind(Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"


class Utility(Enum):
    """Scalar utility of a model on a hold-out set; higher is always better.

    NEG_LOSS is the negated mean cross-entropy, so both utilities are
    maximized; report loss = -value where a loss is wanted.
    """

    ACCURACY = "accuracy"
    NEG_LOSS = "neg_loss"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigurationError("need input_dim >= 1 and num_classes >= 2")
        if self.kind is ModelKind.LOGISTIC and self.hidden:
            raise ConfigurationError("logistic models take no hidden widths")
        if self.kind is ModelKind.MLP and not self.hidden:
            raise ConfigurationError("MLP needs at least one hidden width")
        if any(w < 1 for w in self.hidden):
            raise ConfigurationError("hidden widths must be positive")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.num_classes]

    @property
    def param_dim(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def _unpack(theta: np.ndarray, spec: ModelSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    dims = spec.layer_dims
    layers, pos = [], 0
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = theta[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def _check_params(theta: np.ndarray, spec: ModelSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.param_dim,):
        raise ContractError(
            f"parameter vector has shape {theta.shape}, spec needs ({spec.param_dim},)")
    return theta


def init_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """Random initial parameters, deterministic in (spec, seed).

    Weights are Gaussian scaled by 1/sqrt(fan_in); biases start at zero.
    """
    rng = stream(seed, "init")
    dims = spec.layer_dims
    chunks = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        chunks.append(rng.standard_normal(fan_in * fan_out) / np.sqrt(fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def predict_logits(theta: np.ndarray, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    theta = _check_params(theta, spec)
    h = np.asarray(features, dtype=np.float64)
    layers = _unpack(theta, spec)
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return h @ w + b


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_proba(theta: np.ndarray, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(predict_logits(theta, spec, features)))


def cross_entropy(theta: np.ndarray, spec: ModelSpec, features: np.ndarray,
                  labels: np.ndarray) -> float:
    log_p = _log_softmax(predict_logits(theta, spec, features))
    return float(-log_p[np.arange(len(labels)), labels].mean())


def loss_gradient(theta: np.ndarray, spec: ModelSpec, features: np.ndarray,
                  labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
    theta = _check_params(theta, spec)
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    layers = _unpack(theta, spec)

    activations = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    w_last, b_last = layers[-1]
    logits = h @ w_last + b_last

    log_p = _log_softmax(logits)
    loss = float(-log_p[np.arange(n), labels].mean())

    delta = np.exp(log_p)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append(delta.sum(axis=0))          # bias
        grads.append((activations[i].T @ delta).ravel())  # weights
        if i > 0:
            delta = (delta @ w.T) * (activations[i] > 0.0)
    return loss, np.concatenate(grads[::-1])


def evaluate_utility(theta: np.ndarray, spec: ModelSpec, data: Dataset,
                     utility: Utility) -> float:
    """Pure scalar utility of a model on a dataset; higher is better.

    ACCURACY is the fraction of argmax-correct rows (argmax ties go to the
    lowest class index). NEG_LOSS is minus the mean cross-entropy.
    """
    if data.num_classes > spec.num_classes:
        raise ContractError("dataset has labels outside the model's class range")
    if data.num_features != spec.input_dim:
        raise ContractError(
            f"dataset has {data.num_features} features, model expects {spec.input_dim}")
    if utility is Utility.ACCURACY:
        predicted = np.argmax(predict_logits(theta, spec, data.features), axis=1)
        return float((predicted == data.labels).mean())
    return -cross_entropy(theta, spec, data.features, data.labels)


@dataclass(frozen=True)
class LocalTrainConfig:
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.local_epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigurationError("invalid local training configuration")


def local_train(global_params: np.ndarray, spec: ModelSpec, data: Dataset,
                cfg: LocalTrainConfig, seed: int) -> np.ndarray:
    """Multi-step displacement of mini-batch SGD from ``global_params``.

    Runs ``cfg.local_epochs`` passes of mini-batch SGD on cross-entropy and
    returns (final - start). Each pass visits a fresh permutation drawn from
    the seed's stream; the final partial batch is included.
    """
    theta = _check_params(global_params, spec).copy()
    start = theta.copy()
    rng = stream(seed, "sgd")
    n = data.num_rows
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            _, grad = loss_gradient(theta, spec, data.features[batch], data.labels[batch])
            theta -= cfg.learning_rate * grad
    return theta - start
