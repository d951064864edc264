"""Small feedforward classifiers with exact reverse-mode gradients.

The models here are plain ReLU MLPs over float64 numpy arrays: enough to
train desk-scale classifiers whose input gradients and logit Jacobians can
be verified against finite differences to high precision. The ReLU
subgradient at exactly 0 is taken as 0, and the softmax cross-entropy loss
is computed through log-sum-exp, so training and attacks are bit-for-bit
reproducible given a seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from svdu import linalg
from svdu.errors import InputError, InternalError

MODEL_MAGIC = b"SVDU"
MODEL_VERSION = 1


@dataclass
class MlpModel:
    """ReLU MLP: weights[i] has shape (layer_dims[i+1], layer_dims[i])."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def validate(self) -> None:
        dims = self.layer_dims
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise InputError(f"bad layer_dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InputError("layer count mismatch between dims and parameters")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise InputError(f"layer {i}: shape {W.shape}/{b.shape} "
                                 f"does not match dims {dims[i]}->{dims[i + 1]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InputError(f"layer {i}: non-finite parameters")


@dataclass
class LabeledDataset:
    """Inputs in [0,1]^d with integer labels in [0, num_classes)."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    num_classes: int = 0

    def __post_init__(self):
        self.inputs = linalg.as_matrix(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] < 1:
            raise InputError("dataset must contain at least one sample")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise InputError("labels must be one integer per input row")
        if self.num_classes <= 0:
            self.num_classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise InputError(f"labels outside [0, {self.num_classes})")
        lo, hi = float(self.inputs.min()), float(self.inputs.max())
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise InputError(f"inputs outside [0,1]: range [{lo}, {hi}]")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    rng_seed: int = 0
    l2_weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.l2_weight_decay < 0:
            raise InputError("l2_weight_decay must be >= 0")


def init_model(layer_dims: list[int], seed: int = 0) -> MlpModel:
    """He-initialized MLP; deterministic for a given seed."""
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise InputError(f"bad layer_dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_out, fan_in)) * scale)
        biases.append(np.zeros(fan_out))
    model = MlpModel(list(layer_dims), weights, biases)
    model.validate()
    return model


def _forward_cached(model: MlpModel, X: np.ndarray):
    # X: (n, d). Returns activations per layer and pre-activations.
    acts = [X]
    zs = []
    a = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        zs.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, zs


def forward_batch(model: MlpModel, X) -> np.ndarray:
    """Logits for a batch of inputs, one row per sample."""
    X = linalg.as_matrix(X)
    if X.shape[1] != model.input_dim:
        raise InputError(f"input dim {X.shape[1]} != model dim {model.input_dim}")
    _, zs = _forward_cached(model, X)
    return zs[-1]


def predict_batch(model: MlpModel, X) -> np.ndarray:
    """Predicted labels for a batch; argmax ties go to the lowest index."""
    return np.argmax(forward_batch(model, X), axis=1)


def forward(model: MlpModel, x) -> tuple[np.ndarray, int]:
    """Logits and predicted label for one input."""
    x = linalg.as_vector(x)
    logits = forward_batch(model, x[None, :])[0]
    return logits, int(np.argmax(logits))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def loss_and_input_gradient(model: MlpModel, x, y: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy at (x, y) and its exact gradient w.r.t. x."""
    x = linalg.as_vector(x)
    if not 0 <= y < model.num_classes:
        raise InputError(f"label {y} outside [0, {model.num_classes})")
    acts, zs = _forward_cached(model, x[None, :])
    logits = zs[-1][0]
    logp = _log_softmax(logits)
    loss = float(-logp[y])
    delta = np.exp(logp)
    delta[y] -= 1.0
    delta = delta[None, :]
    for i in range(len(model.weights) - 1, -1, -1):
        delta = delta @ model.weights[i]
        if i > 0:
            delta = delta * (zs[i - 1] > 0.0)
    return loss, delta[0]


def logit_jacobian(model: MlpModel, x) -> np.ndarray:
    """(num_classes x d) Jacobian of the logits at x via reverse mode."""
    x = linalg.as_vector(x)
    if x.shape[0] != model.input_dim:
        raise InputError(f"input dim {x.shape[0]} != model dim {model.input_dim}")
    _, zs = _forward_cached(model, x[None, :])
    J = model.weights[-1].copy()
    for i in range(len(model.weights) - 2, -1, -1):
        J = (J * (zs[i][0] > 0.0)) @ model.weights[i]
    return J


def train(model: MlpModel, data: LabeledDataset, cfg: TrainConfig) -> list[float]:
    """Minibatch SGD on softmax cross-entropy; returns accuracy per epoch.

    Mutates the model in place. Deterministic for a fixed cfg.rng_seed.
    Raises InternalError if the loss stops being finite.
    """
    model.validate()
    if data.inputs.shape[1] != model.input_dim:
        raise InputError("dataset dimension does not match the model")
    if data.num_classes > model.num_classes:
        raise InputError("dataset has more classes than the model outputs")
    rng = np.random.default_rng(cfg.rng_seed)
    n = len(data)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X = data.inputs[idx]
            Y = data.labels[idx]
            bs = len(idx)
            acts, zs = _forward_cached(model, X)
            logp = _log_softmax(zs[-1])
            batch_loss = float(-logp[np.arange(bs), Y].mean())
            if not np.isfinite(batch_loss):
                raise InternalError(
                    f"training diverged at epoch {epoch}: loss={batch_loss}")
            delta = np.exp(logp)
            delta[np.arange(bs), Y] -= 1.0
            delta /= bs
            for i in range(len(model.weights) - 1, -1, -1):
                gW = delta.T @ acts[i]
                gb = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ model.weights[i]) * (zs[i - 1] > 0.0)
                if cfg.l2_weight_decay:
                    gW = gW + cfg.l2_weight_decay * model.weights[i]
                model.weights[i] -= cfg.learning_rate * gW
                model.biases[i] -= cfg.learning_rate * gb
        preds = predict_batch(model, data.inputs)
        history.append(float(np.mean(preds == data.labels)))
    return history


def accuracy(model: MlpModel, data: LabeledDataset) -> float:
    return float(np.mean(predict_batch(model, data.inputs) == data.labels))


def save_model(path, model: MlpModel) -> None:
    """Versioned binary model file; round-trips bit-exactly."""
    model.validate()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<I", len(model.layer_dims)))
        for d in model.layer_dims:
            fh.write(struct.pack("<Q", d))
        for W, b in zip(model.weights, model.biases):
            fh.write(struct.pack("<QQ", *W.shape))
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(struct.pack("<QQ", 1, b.shape[0]))
            fh.write(np.ascontiguousarray(b[None, :], dtype="<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise InputError(f"{self.path}: truncated at byte {self.pos} "
                             f"(wanted {count} more)")
        out = self.blob[self.pos:self.pos + count]
        self.pos += count
        return out


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(4) != MODEL_MAGIC:
        raise InputError(f"{path}: bad magic bytes (not a model file)")
    (version,) = struct.unpack("<I", r.take(4))
    if version != MODEL_VERSION:
        raise InputError(f"{path}: unsupported model version {version}")
    (ndims,) = struct.unpack("<I", r.take(4))
    if not 2 <= ndims <= 64:
        raise InputError(f"{path}: implausible layer count {ndims}")
    dims = [struct.unpack("<Q", r.take(8))[0] for _ in range(ndims)]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        rows, cols = struct.unpack("<QQ", r.take(16))
        if (rows, cols) != (fan_out, fan_in):
            raise InputError(f"{path}: weight block {rows}x{cols} does not "
                             f"match dims {fan_in}->{fan_out}")
        W = np.frombuffer(r.take(rows * cols * 8), dtype="<f8").reshape(rows, cols)
        rows, cols = struct.unpack("<QQ", r.take(16))
        if (rows, cols) != (1, fan_out):
            raise InputError(f"{path}: bias block {rows}x{cols} does not "
                             f"match fan-out {fan_out}")
        b = np.frombuffer(r.take(cols * 8), dtype="<f8").copy()
        weights.append(W.copy())
        biases.append(b)
    if r.pos != len(r.blob):
        raise InputError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    model = MlpModel([int(d) for d in dims], weights, biases)
    model.validate()
    return model
