"""Supervised source-domain training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Model
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


def cross_entropy(probs: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the probabilities."""
    n = len(labels)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = np.zeros_like(probs)
    grad[np.arange(n), labels] = -1.0 / (n * np.maximum(picked, 1e-300))
    return loss, grad


def gaussian_nll(out: np.ndarray, target) -> float:
    """Negated Gaussian log-likelihood ``log sigma + (target - mu)^2 / (2 sigma^2)``.

    ``out`` is ``(mu, sigma)`` or an ``(N, 2)`` batch; the batch mean is returned.
    """
    out = np.atleast_2d(np.asarray(out, dtype=np.float64))
    mu, sigma = out[:, 0], out[:, 1]
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), mu.shape)
    return float(np.mean(np.log(sigma) + (target - mu) ** 2 / (2 * sigma ** 2)))


def gaussian_nll_grad(out: np.ndarray, target) -> np.ndarray:
    out = np.atleast_2d(np.asarray(out, dtype=np.float64))
    mu, sigma = out[:, 0], out[:, 1]
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), mu.shape)
    n = len(mu)
    d = target - mu
    return np.stack([-d / sigma ** 2, 1.0 / sigma - d ** 2 / sigma ** 3], axis=1) / n


@dataclass
class TrainResult:
    model: Model
    val_metric: float
    losses: list[float] = field(default_factory=list)


def accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    model.eval()
    return float(np.mean(model.predict(x).argmax(axis=1) == y))


def rmse(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    model.eval()
    return float(np.sqrt(np.mean((model.predict(x)[:, 0] - y) ** 2)))


def _split(x, y, val, val_fraction, rng):
    if val is not None:
        return x, y, np.asarray(val[0]), np.asarray(val[1])
    order = rng.permutation(len(x))
    n_val = max(1, int(round(len(x) * val_fraction))) if len(x) > 1 else 0
    va, tr = order[:n_val], order[n_val:]
    if len(tr) == 0:
        tr = va
    return x[tr], y[tr], x[va], y[va]


def train_source(model: Model, x, y, *, epochs: int = 15, lr: float = 2e-3, batch_size: int = 64,
                 seed=0, val=None, val_fraction: float = 0.1, cosine: bool = False) -> TrainResult:
    """Fit every parameter with Adam on labelled source data.

    Softmax models minimise cross-entropy and report validation accuracy;
    Gaussian models minimise the negated log-likelihood and report
    validation RMSE. ``val`` is an optional ``(x, y)`` pair; without it a
    ``val_fraction`` hold-out is split off. ``cosine`` anneals the learning
    rate to zero over the run.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    x_tr, y_tr, x_va, y_va = _split(x, y, val, val_fraction, rng)
    gaussian = model.head == "gaussian"
    state = AdamState.for_model(model, "all", lr)
    losses = []
    steps_per_epoch = sum(1 for s in range(0, len(x_tr), batch_size) if min(batch_size, len(x_tr) - s) >= 2)
    total_steps, step = max(epochs * steps_per_epoch, 1), 0
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue  # batch statistics undefined for a single sample
            out = model.forward(x_tr[idx])
            if gaussian:
                loss, grad = gaussian_nll(out, y_tr[idx]), gaussian_nll_grad(out, y_tr[idx])
            else:
                loss, grad = cross_entropy(out, y_tr[idx])
            grads = model.backward(grad)
            if cosine:
                state.lr = 0.5 * lr * (1 + np.cos(np.pi * step / total_steps))
            adam_step(model, grads, state)
            step += 1
            total += loss * len(idx)
        losses.append(total / len(x_tr))
        log.debug("epoch %d loss %.4f", epoch, losses[-1])
    model.eval()
    metric = rmse(model, x_va, y_va) if gaussian else accuracy(model, x_va, y_va)
    return TrainResult(model, metric, losses)
