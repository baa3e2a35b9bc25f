"""Model training and black-box confidence queries.

Two families are supported:

* ``logistic``: L2-regularized logistic regression, fit with L-BFGS from a
  zero start and polished with Newton steps until the gradient infinity-norm
  is below ``grad_tol``. Deterministic, independent of the seed.
* ``mlp``: ReLU multilayer perceptron with a softmax output, trained by
  seeded mini-batch SGD (optional momentum).

All arithmetic is float64.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.optimize
from pydantic import BaseModel, ConfigDict, Field

from ._backend import BACKEND, kernels
from .tabular import Dataset, Encoder

MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Training failed (non-finite loss or unusable data)."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["logistic", "mlp"] = "logistic"
    hidden_layers: list[int] = Field(default_factory=lambda: [256, 256])
    activation: Literal["relu"] = "relu"
    l2_strength: float = Field(default=1e-3, ge=0)
    # logistic: L-BFGS iteration cap; mlp: number of epochs
    max_epochs: int | None = Field(default=None, ge=1)
    grad_tol: float = Field(default=1e-6, gt=0)
    learning_rate: float = Field(default=0.05, gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    seed: int = 0

    @property
    def epochs(self) -> int:
        if self.max_epochs is not None:
            return self.max_epochs
        return 200 if self.family == "logistic" else 20


@dataclass(frozen=True, eq=False)
class Model:
    family: str
    weights: tuple[np.ndarray, ...]
    labels: tuple[str, ...]
    meta: dict = field(default_factory=dict)
    encoder: Encoder | None = None

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    def same_weights(self, other: Model) -> bool:
        return (self.family == other.family and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)))


def _freeze(arrays) -> tuple[np.ndarray, ...]:
    out = []
    for a in arrays:
        a = np.array(a, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(a)):
            raise TrainingError("non-finite weights")
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


def _xy(data, encoder: Encoder | None):
    if isinstance(data, Dataset):
        enc = encoder or Encoder.fit(data)
        return np.ascontiguousarray(enc.transform(data)), enc.labels(data), enc, data.schema.label.domain
    X, y = data
    return np.ascontiguousarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64), encoder, None


def accuracy(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(predict_proba(model, X), axis=1) == y))


def _meta(cfg: TrainConfig, model_labels, **extra) -> dict:
    return {"config": cfg.model_dump(), "seed": cfg.seed, "backend": BACKEND,
            "labels": list(model_labels), **extra}


def train_logistic(train, cfg: TrainConfig, *, encoder: Encoder | None = None,
                   test=None, init: np.ndarray | None = None,
                   labels: Sequence[str] | None = None) -> Model:
    """Fit binary L2-regularized logistic regression.

    ``train``/``test`` are a :class:`Dataset` (encoded with ``encoder``, fitted
    on ``train`` when omitted) or an ``(X, y)`` pair. ``init`` optionally sets
    the starting point (weights then intercept); the default is all zeros.
    """
    X, y, encoder, domain = _xy(train, encoder)
    labels = tuple(labels or domain or ("0", "1"))
    if len(labels) != 2 or (len(y) and (y.min() < 0 or y.max() > 1)):
        raise TrainingError("logistic regression needs a binary label")
    if len(y) == 0:
        raise TrainingError("empty training set")
    n, d = X.shape
    yf = y.astype(np.float64)
    l2 = cfg.l2_strength

    def objective(theta):
        loss, gw, gb = kernels.logistic_loss_grad(X, yf, theta[:d], float(theta[d]), l2)
        if not math.isfinite(loss):
            raise TrainingError("non-finite logistic loss")
        return loss, np.append(gw, gb)

    theta0 = np.zeros(d + 1) if init is None else np.array(init, dtype=np.float64)
    history = [objective(theta0)[0]]
    res = scipy.optimize.minimize(
        objective, theta0, jac=True, method="L-BFGS-B",
        callback=lambda intermediate_result: history.append(float(intermediate_result.fun)),
        options={"maxiter": cfg.epochs, "gtol": cfg.grad_tol, "ftol": 1e-15, "maxcor": 20},
    )
    theta = res.x
    loss, grad = objective(theta)
    newton_steps = 0
    # L-BFGS may stall short of the tolerance; finish with damped Newton steps.
    while np.max(np.abs(grad)) >= cfg.grad_tol and newton_steps < 50:
        z = X @ theta[:d] + theta[d]
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        s = p * (1.0 - p) / n
        Xa = np.hstack([X, np.ones((n, 1))])
        H = (Xa.T * s) @ Xa
        H[np.arange(d), np.arange(d)] += l2
        step = np.linalg.solve(H + 1e-12 * np.eye(d + 1), grad)
        t = 1.0
        while True:
            cand = theta - t * step
            c_loss, c_grad = objective(cand)
            if c_loss <= loss or t < 1e-10:
                break
            t *= 0.5
        if c_loss > loss:
            break
        theta, loss, grad = cand, c_loss, c_grad
        history.append(loss)
        newton_steps += 1
    model = Model("logistic", _freeze([theta[:d], theta[d:]]), labels, encoder=encoder)
    extra = {"iterations": int(res.nit), "newton_steps": newton_steps, "final_loss": float(loss),
             "grad_inf_norm": float(np.max(np.abs(grad))), "loss_history": [float(v) for v in history],
             "train_accuracy": accuracy(model, X, y)}
    if test is not None:
        Xt, yt, _, _ = _xy(test, encoder)
        extra["test_accuracy"] = accuracy(model, Xt, yt)
    return Model(model.family, model.weights, labels, _meta(cfg, labels, **extra), encoder)


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> tuple[list, list]:
    """Glorot-uniform weights and zero biases for consecutive layer ``sizes``."""
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(np.ascontiguousarray(rng.uniform(-lim, lim, size=(fan_in, fan_out))))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def train_mlp(train, cfg: TrainConfig, *, encoder: Encoder | None = None, test=None,
              labels: Sequence[str] | None = None) -> Model:
    """Train a ReLU MLP by seeded mini-batch SGD; bit-reproducible per seed and backend."""
    X, y, encoder, domain = _xy(train, encoder)
    labels = tuple(labels or domain or tuple(str(i) for i in range(int(y.max()) + 1)))
    if len(y) == 0:
        raise TrainingError("empty training set")
    if y.min() < 0 or y.max() >= len(labels):
        raise TrainingError("label index outside label domain")
    rng = np.random.default_rng(cfg.seed)
    Ws, bs = init_mlp([X.shape[1], *cfg.hidden_layers, len(labels)], rng)
    vWs = [np.zeros_like(W) for W in Ws]
    vbs = [np.zeros_like(b) for b in bs]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y)).astype(np.int64)
        loss = kernels.mlp_epoch(Ws, bs, vWs, vbs, X, y, order, cfg.learning_rate,
                                 cfg.momentum, cfg.l2_strength, cfg.batch_size)
        if not math.isfinite(loss):
            raise TrainingError("MLP training diverged", epoch=epoch)
        history.append(float(loss))
    weights = [a for pair in zip(Ws, bs) for a in pair]
    model = Model("mlp", _freeze(weights), labels, encoder=encoder)
    extra = {"epochs": cfg.epochs, "final_loss": history[-1], "loss_history": history,
             "train_accuracy": accuracy(model, X, y)}
    if test is not None:
        Xt, yt, _, _ = _xy(test, encoder)
        extra["test_accuracy"] = accuracy(model, Xt, yt)
    return Model("mlp", model.weights, labels, _meta(cfg, labels, **extra), encoder)


def train(train_data, cfg: TrainConfig, **kwargs) -> Model:
    if cfg.family == "logistic":
        return train_logistic(train_data, cfg, **kwargs)
    return train_mlp(train_data, cfg, **kwargs)


def predict_proba(model: Model, features) -> np.ndarray:
    """Class probabilities for one feature vector (1-D) or a batch (2-D)."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.input_width:
        raise ValueError(f"expected {model.input_width} features, got {X.shape[1]}")
    if model.family == "logistic":
        w, b = model.weights
        z = X @ w + b[0]
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        out = np.column_stack([1.0 - p, p])
    else:
        h = X
        n_layers = len(model.weights) // 2
        for i in range(n_layers):
            h = h @ model.weights[2 * i] + model.weights[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        h = h - h.max(axis=1, keepdims=True)
        e = np.exp(h)
        out = e / e.sum(axis=1, keepdims=True)
    return out[0] if single else out


def confidence_on_label(model: Model, features, label: str):
    """Probability the model assigns to ``label`` (scalar for 1-D input)."""
    try:
        k = model.labels.index(label)
    except ValueError:
        raise ValueError(f"unknown label {label!r}; model labels are {model.labels}") from None
    p = predict_proba(model, features)
    return float(p[k]) if p.ndim == 1 else p[:, k]


# -- persistence ----------------------------------------------------------------
# Container: a numpy .npz holding float64 arrays "w0", "w1", ... and a JSON
# header string under "header" with format_version, family, labels, meta and
# the optional encoder state.

def save_model(model: Model, path: str | Path) -> None:
    header = {"format_version": MODEL_FORMAT_VERSION, "family": model.family,
              "labels": list(model.labels), "n_arrays": len(model.weights), "meta": model.meta,
              "encoder": model.encoder.to_dict() if model.encoder is not None else None}
    arrays = {f"w{i}": w for i, w in enumerate(model.weights)}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_model(path: str | Path) -> Model:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header.get('format_version')}")
        weights = [z[f"w{i}"] for i in range(header["n_arrays"])]
    enc = Encoder.from_dict(header["encoder"]) if header["encoder"] else None
    return Model(header["family"], _freeze(weights), tuple(header["labels"]), header["meta"], enc)
