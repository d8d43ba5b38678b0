"""Dense feed-forward regressor: ReLU hidden layers, linear output, MSE loss."""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .codec import CodecMismatch, check_sidecar

MODEL_FORMAT = "evcrp-mlp"
MODEL_VERSION = 1

# nine hidden layers, 800 down to 50
FULL_HIDDEN = (800, 573, 410, 294, 210, 151, 108, 77, 50)
DESK_HIDDEN = (256, 128, 64, 32)


@dataclass
class Network:
    dims: List[int]
    weights: List[np.ndarray]       # weights[i] has shape (dims[i+1], dims[i])
    biases: List[np.ndarray]
    codec: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    def params(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "Network":
        return Network(list(self.dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       dict(self.codec))


def init_network(layer_dims: Sequence[int], seed: int = 0, codec: Optional[dict] = None) -> Network:
    """He-normal weights (variance 2/fan_in), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("need at least input and output dims, all >= 1")
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i + 1], dims[i])) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return Network(dims, weights, biases, dict(codec or {}))


def forward(net: Network, x: np.ndarray, return_cache: bool = False):
    """Evaluate on one sample (1-D) or a batch (rows are samples)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.input_dim:
        raise ValueError(f"expected input of length {net.input_dim}, got {a.shape[1]}")
    cache = [a]
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = z if i == last else np.maximum(z, 0.0)
        cache.append(a)
    out = a[0] if single else a
    return (out, cache) if return_cache else out


def loss_mse(pred, label) -> float:
    """Mean of squared errors over samples and outputs."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    return float(np.mean((pred - label) ** 2))


def backward(net: Network, X: np.ndarray, Y: np.ndarray):
    """Gradients of ``loss_mse(forward(net, X), Y)``.

    Returns ``(loss, grads)`` with grads ordered like ``net.params()``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if len(X) == 0:
        raise ValueError("empty batch")
    pred, cache = forward(net, X, return_cache=True)
    diff = pred - Y
    loss = float(np.mean(diff ** 2))
    delta = 2.0 * diff / diff.size
    grads: List[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        a_prev = cache[i]
        gW = delta.T @ a_prev
        gb = delta.sum(axis=0)
        grads.append(gb)
        grads.append(gW)
        if i > 0:
            delta = (delta @ net.weights[i]) * (cache[i] > 0)
    grads.reverse()
    return loss, grads


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class TrainReport:
    train_loss: List[float]
    val_loss: List[float]
    checksum: str
    initial_val_loss: float = float("nan")


def split_indices(n: int, val_fraction: float, seed: int):
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    return order[n_val:], order[:n_val]


def train(net: Network, dataset, hp: Hyperparams = Hyperparams(), log=None) -> TrainReport:
    """Mini-batch Adam on MSE, reshuffling every epoch.  Updates ``net`` in place."""
    if net.codec and dataset.sidecar:
        check_sidecar(net.codec, dataset.sidecar)
    X, Y = np.asarray(dataset.features, dtype=np.float64), np.asarray(dataset.labels, dtype=np.float64)
    if X.shape[1] != net.input_dim or Y.shape[1] != net.output_dim:
        raise CodecMismatch(f"dataset shape {X.shape[1]}->{Y.shape[1]} does not fit network "
                            f"{net.input_dim}->{net.output_dim}")
    if not net.codec:
        net.codec = dict(dataset.sidecar)
    tr, va = split_indices(len(X), hp.val_fraction, hp.seed)
    rng = np.random.default_rng(hp.seed + 1)
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    report = TrainReport([], [], "")

    def val_loss():
        if len(va) == 0:
            return float("nan")
        return loss_mse(forward(net, X[va]), Y[va])

    report.initial_val_loss = val_loss()
    for epoch in range(hp.epochs):
        order = tr[rng.permutation(len(tr))]
        total = 0.0
        for start in range(0, len(order), hp.batch_size):
            idx = order[start:start + hp.batch_size]
            loss, grads = backward(net, X[idx], Y[idx])
            total += loss * len(idx)
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if hp.clip_norm and norm > hp.clip_norm:
                grads = [g * (hp.clip_norm / norm) for g in grads]
            step += 1
            bc1 = 1.0 - hp.beta1 ** step
            bc2 = 1.0 - hp.beta2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= hp.beta1
                mi += (1.0 - hp.beta1) * g
                vi *= hp.beta2
                vi += (1.0 - hp.beta2) * g * g
                p -= hp.learning_rate * (mi / bc1) / (np.sqrt(vi / bc2) + hp.eps)
        report.train_loss.append(total / max(len(tr), 1))
        report.val_loss.append(val_loss())
        if log is not None:
            log(epoch + 1, report.train_loss[-1], report.val_loss[-1])
    report.checksum = net.checksum()
    return report


def _pack(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _unpack(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).astype(np.float64)


def save_model(net: Network, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": net.dims,
        "codec": net.codec,
        "weights": [_pack(w) for w in net.weights],
        "biases": [_pack(b) for b in net.biases],
        "checksum": net.checksum(),
    }
    Path(path).write_text(json.dumps(doc))


class ModelFileError(ValueError):
    pass


def load_model(path, expect_codec: Optional[dict] = None) -> Network:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFileError(f"{path}: not an {MODEL_FORMAT} file")
        if doc.get("version") != MODEL_VERSION:
            raise ModelFileError(f"{path}: unsupported model version {doc.get('version')}")
        dims = [int(d) for d in doc["dims"]]
        weights = [_unpack(s, (dims[i + 1], dims[i])) for i, s in enumerate(doc["weights"])]
        biases = [_unpack(s, (dims[i + 1],)) for i, s in enumerate(doc["biases"])]
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"{path}: corrupt model file ({exc})") from exc
    net = Network(dims, weights, biases, doc.get("codec", {}))
    if net.checksum() != doc.get("checksum"):
        raise ModelFileError(f"{path}: checksum mismatch")
    if expect_codec is not None:
        check_sidecar(expect_codec, net.codec)
    return net
