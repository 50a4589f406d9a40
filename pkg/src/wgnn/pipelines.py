"""End-to-end training: node classification and multi-graph matrix completion."""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp

from .datasets import MaskSpec, apply_mask
from .errors import InputError, PipelineError, WGNNError
from .linalg import truncated_svd
from .neural import (
    AdamState,
    EarlyStopper,
    adam_step,
    init_mlp,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    mlp_backward,
    mlp_forward,
    mse_loss_grad,
    softmax_xent_loss_grad,
)
from .ot import IBPConfig, ground_metric
from .propagation import euclidean_embedding, layer_average, mean_propagate, wgnn_propagate

log = logging.getLogger(__name__)

VARIANTS = ("wgnn_svd", "mean_u", "wgnn_svd_u", "mlp_only")


def schedule(mode, rate):
    """Default ``(L, h)`` for a missing-attribute setting."""
    if mode == "entire":
        return (10, 2) if rate <= 0.5 else (14, 6)
    if rate <= 0.3:
        return 14, 2
    if rate <= 0.6:
        return 14, 4
    return 14, 6


@dataclass
class TrainConfig:
    k: int = 64
    L: int = None
    h: int = None
    ibp: IBPConfig = field(default_factory=lambda: IBPConfig(epsilon=1e-4))
    variant: str = "wgnn_svd"
    mlp_hidden_dims: tuple = (128,)
    learning_rate: float = 0.01
    patience: int = 100
    max_epochs: int = 10000
    seeds: tuple = (0,)
    mask_mode: str = "partial"
    mask_rate: float = 0.0
    normalize_metric: bool = True
    val_fraction: float = 0.05

    def __post_init__(self):
        if isinstance(self.ibp, dict):
            self.ibp = IBPConfig(**self.ibp)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.mlp_hidden_dims = tuple(int(d) for d in self.mlp_hidden_dims)
        if self.k < 1:
            raise InputError("k must be >= 1")
        if (self.L is not None and self.L < 1) or (self.h is not None and self.h < 1):
            raise InputError("L and h must be >= 1")
        if not self.seeds:
            raise InputError("at least one seed is required")
        if self.variant not in VARIANTS:
            raise InputError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        MaskSpec(self.mask_mode, self.mask_rate)

    def layers(self):
        L, h = schedule(self.mask_mode, self.mask_rate)
        return (self.L or L, self.h or h)

    def to_dict(self):
        out = asdict(self)
        out["mlp_hidden_dims"] = list(self.mlp_hidden_dims)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def completion_defaults(**overrides):
    """Settings for the completion pipeline: k=25, L=7, h=1, 3x50 hidden units, lr 1e-3."""
    base = dict(k=25, L=7, h=1, mlp_hidden_dims=(50, 50, 50), learning_rate=0.001)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class RunReport:
    config: dict
    dataset: dict
    metric: str
    per_seed: list
    wall_clock_s: float = 0.0
    # in-memory extras keyed by seed; not part of the JSON document
    curves: dict = field(default_factory=dict, repr=False)
    predictions: dict = field(default_factory=dict, repr=False)
    models: dict = field(default_factory=dict, repr=False)

    @property
    def values(self):
        return [r[self.metric] for r in self.per_seed]

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        return float(np.std(self.values))

    def to_dict(self, include_timing=True):
        out = {
            "config": self.config,
            "dataset": self.dataset,
            "metric": self.metric,
            "per_seed": self.per_seed,
            "mean": self.mean,
            "std": self.std,
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        else:
            out["per_seed"] = [{k: v for k, v in r.items() if k != "wall_clock_s"} for r in self.per_seed]
        return out

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def evaluate(predictions, ds, task):
    """Test-split accuracy (``classification``) or clipped RMSE (``completion``)."""
    predictions = np.asarray(predictions)
    if task == "classification":
        truth = ds.labels[ds.splits["test"]]
        if truth.size == 0:
            raise InputError("empty test set")
        if predictions.shape != truth.shape:
            raise InputError("predictions are not aligned with the test split")
        return float(np.mean(predictions == truth))
    if task == "completion":
        if ds.test.size == 0:
            raise InputError("empty test set")
        truth = ds.rating_matrix.values[ds.test[:, 0], ds.test[:, 1]]
        if predictions.shape != truth.shape:
            raise InputError("predictions are not aligned with the test entries")
        pred = np.clip(predictions, min(ds.rating_levels), max(ds.rating_levels))
        return float(np.sqrt(np.mean((pred - truth) ** 2)))
    raise InputError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# node classification


def node_embedding(X, graph, cfg, seed):
    """Features fed to the classifier for one run of ``cfg.variant``."""
    if cfg.variant == "mlp_only":
        return X
    L, h = cfg.layers()
    factors = truncated_svd(X, min(cfg.k, *X.shape), seed=seed)
    if cfg.variant == "mean_u":
        return euclidean_embedding(mean_propagate(factors, graph, L, h), "average")
    metric = ground_metric(factors.lam, normalize=cfg.normalize_metric)
    trace = wgnn_propagate(factors, graph, L, h, cfg.ibp, metric=metric)
    if cfg.variant == "wgnn_svd_u":
        return layer_average(trace)
    return euclidean_embedding(trace, "average")


def train_classifier(Z, labels, splits, cfg, seed):
    """Full-batch MLP training with early stopping on validation accuracy.

    Returns ``(test_predictions, info, train_losses, best_params)``.
    """
    rng = np.random.default_rng(seed)
    n_classes = int(labels.max()) + 1
    params = init_mlp([Z.shape[1], *cfg.mlp_hidden_dims, n_classes], rng)
    state = AdamState(learning_rate=cfg.learning_rate)
    stopper = EarlyStopper(cfg.patience, mode="max")
    tr, va, te = splits["train"], splits["val"], splits["test"]
    Ztr, ytr = Z[tr], labels[tr]
    losses = []
    for epoch in range(cfg.max_epochs):
        out, acts = mlp_forward(params, Ztr, cache=True)
        loss, dout = softmax_xent_loss_grad(out, ytr)
        grads, _ = mlp_backward(params, acts, dout)
        adam_step(params.arrays(), grads, state)
        losses.append(loss)
        val_acc = float(np.mean(mlp_forward(params, Z[va]).argmax(axis=1) == labels[va]))
        if stopper.update(val_acc, params):
            break
    best = stopper.best_params
    pred = mlp_forward(best, Z[te]).argmax(axis=1)
    info = {"epochs": epoch + 1, "best_epoch": stopper.best_index + 1, "val_accuracy": stopper.best_metric}
    return pred, info, losses, best


def run_node_classification(ds, cfg):
    """Train and test ``cfg.variant`` once per seed; reports test accuracy."""
    start = time.perf_counter()
    report = RunReport(
        cfg.to_dict(),
        {"name": ds.name, "fingerprint": ds.fingerprint(), **_jsonable(ds.metadata, ("split", "graphs"))},
        "accuracy",
        [],
    )
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        X = ds.features
        if cfg.mask_rate > 0:
            X = apply_mask(X, MaskSpec(cfg.mask_mode, cfg.mask_rate, seed))
        try:
            Z = node_embedding(X.values, ds.graph, cfg, seed)
        except WGNNError as err:
            raise PipelineError(f"{cfg.variant} failed for seed {seed}: {err}") from err
        pred, info, losses, params = train_classifier(Z, ds.labels, ds.splits, cfg, seed)
        acc = evaluate(pred, ds, "classification")
        report.per_seed.append({"seed": seed, "accuracy": acc, **info,
                                "wall_clock_s": round(time.perf_counter() - t0, 3)})
        report.curves[seed] = losses
        report.predictions[seed] = pred
        report.models[seed] = params.named("mlp")
        log.info("seed %d: accuracy %.4f (%d epochs)", seed, acc, info["epochs"])
    report.wall_clock_s = round(time.perf_counter() - start, 3)
    return report


def _jsonable(meta, keys):
    return {k: meta[k] for k in keys if k in meta}


# ---------------------------------------------------------------------------
# matrix completion


class _Side:
    """One tower of the completion model: MLP then row L2 normalization."""

    def __init__(self, dims, rng):
        self.params = init_mlp(dims, rng)

    def forward(self, X):
        Y, self.acts = mlp_forward(self.params, X, cache=True)
        self.Z, self.norms = l2_normalize_rows(Y)
        return self.Z

    def backward(self, dZ):
        dY = l2_normalize_rows_backward(self.Z, self.norms, dZ)
        grads, _ = mlp_backward(self.params, self.acts, dY)
        return grads


def completion_embeddings(X, user_graph, item_graph, cfg, seed):
    """Concatenated per-layer user and item weights from dual propagation."""
    L, h = cfg.L or 1, cfg.h or 1
    factors = truncated_svd(X, min(cfg.k, *X.shape), seed=seed)
    metric = ground_metric(factors.lam, normalize=cfg.normalize_metric)
    users = wgnn_propagate(factors, user_graph, L, h, cfg.ibp, metric=metric)
    items = wgnn_propagate(factors, item_graph, L, h, cfg.ibp, metric=metric,
                           U0=factors.V, support_id="columns of U_k")
    return factors, euclidean_embedding(users, "concat"), euclidean_embedding(items, "concat")


def _predict(Zu, Zv, lam, entries):
    if Zu.shape[0] * Zv.shape[0] <= 50 * len(entries):
        # dense scores are much cheaper than gathering row pairs when most of them are needed
        return ((Zu * lam) @ Zv.T)[entries[:, 0], entries[:, 1]]
    return ((Zu[entries[:, 0]] * lam) * Zv[entries[:, 1]]).sum(axis=1)


def train_completion(Hu, Hv, lam, values, fit, val, cfg, seed, shape):
    """Train both towers by MSE on ``fit`` entries, early stopping on ``val`` RMSE."""
    rng = np.random.default_rng(seed)
    k = lam.size
    dims_u = [Hu.shape[1], *cfg.mlp_hidden_dims, k]
    dims_v = [Hv.shape[1], *cfg.mlp_hidden_dims, k]
    users, items = _Side(dims_u, rng), _Side(dims_v, rng)
    state = AdamState(learning_rate=cfg.learning_rate)
    stopper = EarlyStopper(cfg.patience, mode="min")
    target = values[fit[:, 0], fit[:, 1]]
    val_target = values[val[:, 0], val[:, 1]]
    lo, hi = float(values[values > 0].min()), float(values.max())
    ones = np.ones(len(fit), dtype=bool)
    losses = []
    Zu, Zv = users.forward(Hu), items.forward(Hv)
    for epoch in range(cfg.max_epochs):
        pred = _predict(Zu, Zv, lam, fit)
        loss, dpred = mse_loss_grad(pred, target, ones)
        R = sp.csr_matrix((dpred, (fit[:, 0], fit[:, 1])), shape=shape)
        dZu = R @ (Zv * lam)
        dZv = R.T @ (Zu * lam)
        grads = users.backward(dZu) + items.backward(dZv)
        adam_step(users.params.arrays() + items.params.arrays(), grads, state)
        losses.append(loss)
        # this forward pass also serves the next epoch
        Zu, Zv = users.forward(Hu), items.forward(Hv)
        if val.size:
            vp = np.clip(_predict(Zu, Zv, lam, val), lo, hi)
            metric = float(np.sqrt(np.mean((vp - val_target) ** 2)))
        else:
            metric = np.sqrt(loss)
        if stopper.update(metric, (users.params, items.params)):
            break
    users.params, items.params = stopper.best_params
    info = {"epochs": epoch + 1, "best_epoch": stopper.best_index + 1, "val_rmse": stopper.best_metric}
    return users, items, info, losses


def run_matrix_completion(ds, cfg):
    """Multi-graph completion: dual propagation, two MLP towers, test RMSE per seed."""
    start = time.perf_counter()
    report = RunReport(
        cfg.to_dict(),
        {"name": ds.name, "fingerprint": ds.fingerprint(), **_jsonable(ds.metadata, ("graphs",))},
        "rmse",
        [],
    )
    values = ds.rating_matrix.values
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(ds.train))
        n_val = int(round(cfg.val_fraction * len(ds.train)))
        val, fit = ds.train[np.sort(order[:n_val])], ds.train[np.sort(order[n_val:])]
        X = ds.train_matrix(fit)
        try:
            factors, Hu, Hv = completion_embeddings(X, ds.user_graph, ds.item_graph, cfg, seed)
        except WGNNError as err:
            raise PipelineError(f"completion failed for seed {seed}: {err}") from err
        users, items, info, losses = train_completion(
            Hu, Hv, factors.lam, values, fit, val, cfg, seed, values.shape
        )
        pred = _predict(users.forward(Hu), items.forward(Hv), factors.lam, ds.test)
        rmse = evaluate(pred, ds, "completion")
        report.per_seed.append({"seed": seed, "rmse": rmse, **info,
                                "wall_clock_s": round(time.perf_counter() - t0, 3)})
        report.curves[seed] = losses
        report.predictions[seed] = pred
        report.models[seed] = {**users.params.named("mlp_u"), **items.params.named("mlp_v"),
                               "lam": factors.lam}
        log.info("seed %d: rmse %.4f (%d epochs)", seed, rmse, info["epochs"])
    report.wall_clock_s = round(time.perf_counter() - start, 3)
    return report


def sweep(ds, cfg, rates):
    """Run node classification at each masking rate; returns ``[(rate, report), ...]``.

    ``L`` and ``h`` left unset in ``cfg`` follow the default schedule per rate.
    """
    rates = list(rates)
    if not rates:
        raise InputError("empty rate list")
    return [(rate, run_node_classification(ds, replace(cfg, mask_rate=float(rate)))) for rate in rates]


def curve_csv(rows):
    lines = ["rate,mean,std"]
    for rate, report in rows:
        lines.append(f"{rate:g},{report.mean:.6f},{report.std:.6f}")
    return "\n".join(lines) + "\n"
