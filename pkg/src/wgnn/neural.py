"""A small numpy MLP with hand-written gradients, Adam and early stopping."""

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, DivergenceError, LossError, NormalizationError


@dataclass
class MLPParams:
    """Affine layers with ReLU between them and a linear output."""

    weights: list
    biases: list

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def named(self, prefix="mlp"):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = W
            out[f"{prefix}.{i}.bias"] = b
        return out

    def copy(self):
        return MLPParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_mlp(layer_dims, rng):
    """Glorot-uniform weights, zero biases."""
    if len(layer_dims) < 2:
        raise DimensionError("an MLP needs at least input and output dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def mlp_forward(params, X, cache=False):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(
            f"input of shape {X.shape} does not match MLP input dim {params.weights[0].shape[0]}"
        )
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return (h, acts) if cache else h


def mlp_backward(params, acts, dout):
    """Gradients of a scalar loss given ``dout = dloss/doutput``.

    Returns ``(grads, dinput)`` where ``grads`` matches ``params.arrays()``.
    """
    grads = [None] * (2 * len(params.weights))
    delta = dout
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            delta = delta * (acts[i + 1] > 0)
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
    return grads, delta


def softmax_xent_loss_grad(logits, labels):
    """Mean cross-entropy of ``softmax(logits)`` against integer labels."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n = logits.shape[0]
    if n == 0:
        raise LossError("cross-entropy over zero examples")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DimensionError("labels must be integers in [0, C) with one per row")
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def mse_loss_grad(pred, target, observed_mask):
    """Mean squared error over the observed entries only."""
    pred = np.asarray(pred, dtype=float)
    mask = np.asarray(observed_mask, dtype=bool)
    if mask.shape != pred.shape or np.shape(target) != pred.shape:
        raise DimensionError("pred, target and mask must share a shape")
    count = int(mask.sum())
    if count == 0:
        raise LossError("no observed entries")
    diff = np.where(mask, pred - target, 0.0)
    return float((diff**2).sum() / count), 2.0 * diff / count


def l2_normalize_rows(Y, eps=1e-12):
    """Row-normalize ``Y``; returns ``(Z, norms)`` for use in the backward pass."""
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(norms < eps):
        bad = int(np.argmin(norms[:, 0]))
        raise NormalizationError(f"row {bad} has zero norm and cannot be L2-normalized")
    return Y / norms, norms


def l2_normalize_rows_backward(Z, norms, dZ):
    """Gradient through ``Z = Y / ||Y||`` row by row."""
    return (dZ - Z * (dZ * Z).sum(axis=1, keepdims=True)) / norms


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied in place to the arrays in ``params``."""
    if len(params) != len(grads):
        raise DimensionError("parameter and gradient lists differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1 - b2**t) / (1 - b1**t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        # eps scaled to the bias-corrected form
        p -= lr_t * m / (np.sqrt(v) + state.eps_hat * np.sqrt(1 - b2**t))
    return params, state


class EarlyStopper:
    """Patience-based stopping on a validation metric.

    ``mode='max'`` for accuracies, ``'min'`` for errors. Only a strict
    improvement resets the counter.
    """

    def __init__(self, patience, mode="max"):
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.patience = int(patience)
        self.mode = mode
        self.best_metric = None
        self.best_params = None
        self.best_index = -1
        self.counter = 0
        self.evaluations = 0

    def _better(self, metric):
        if self.best_metric is None:
            return True
        return metric > self.best_metric if self.mode == "max" else metric < self.best_metric

    def update(self, metric, params):
        """Record an evaluation; return True when training should stop."""
        metric = float(metric)
        if not np.isfinite(metric):
            raise ValueError("validation metric must be finite")
        if self._better(metric):
            self.best_metric = metric
            self.best_params = copy.deepcopy(params)
            self.best_index = self.evaluations
            self.counter = 0
        else:
            self.counter += 1
        self.evaluations += 1
        return self.counter >= self.patience


def save_checkpoint(path, tensors):
    """Write named tensors to an ``.npz`` archive (see README for the layout)."""
    np.savez(path, **{name: np.asarray(t) for name, t in tensors.items()})


def load_checkpoint(path):
    with np.load(path) as data:
        return {name: data[name] for name in data.files}


def params_from_checkpoint(tensors, prefix="mlp"):
    weights, biases = [], []
    i = 0
    while f"{prefix}.{i}.weight" in tensors:
        weights.append(np.array(tensors[f"{prefix}.{i}.weight"], dtype=float))
        biases.append(np.array(tensors[f"{prefix}.{i}.bias"], dtype=float))
        i += 1
    if not weights:
        raise KeyError(f"no tensors with prefix {prefix!r}")
    return MLPParams(weights, biases)
