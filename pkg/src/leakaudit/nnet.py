"""Dense feed-forward binary classifier with manual backprop.

Rectifier hidden layers, a single logit output, inverted dropout,
class-weighted binary cross-entropy, AdamW with decoupled weight decay,
and early stopping on validation loss. Everything is plain numpy and
bit-deterministic under the config seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from leakaudit.data import Dataset, class_weights
from leakaudit.seeds import derive_rng

__all__ = [
    "TrainConfig",
    "MlpModel",
    "TrainedModel",
    "init_model",
    "forward_logit",
    "forward_logits",
    "weighted_bce_loss",
    "loss_and_grads",
    "AdamState",
    "adamw_step",
    "fit",
    "predict_confidence",
    "predict_confidences",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

LOSS_CLIP_EPS = 1e-7
CONF_CLIP_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe for the MLP."""

    hidden_dims: tuple[int, ...] = (256, 128)
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.patience < 0:
            raise ValueError(f"patience must be non-negative, got {self.patience}")


@dataclass
class MlpModel:
    """Layer parameters; weights[l] has shape (d_l, d_{l+1})."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float
    input_dim: int

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            dropout_rate=self.dropout_rate,
            input_dim=self.input_dim,
        )


@dataclass
class TrainedModel:
    """Best-validation-epoch model plus the per-epoch loss log (1-indexed)."""

    model: MlpModel
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int


def init_model(dim: int, cfg: TrainConfig) -> MlpModel:
    """Fan-in-scaled uniform initialization U(-1/sqrt(d_in), 1/sqrt(d_in)); zero biases."""
    if dim < 1:
        raise ValueError(f"input dimension must be >= 1, got {dim}")
    rng = derive_rng(cfg.seed, "init")
    dims = [dim, *cfg.hidden_dims, 1]
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpModel(weights=weights, biases=biases, dropout_rate=cfg.dropout_rate, input_dim=dim)


def _forward(
    model: MlpModel,
    X: np.ndarray,
    train: bool,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, list]:
    """Batched forward pass; returns (logits, cache for backprop)."""
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected features of dimension {model.input_dim}, got shape {X.shape}")
    cache = []
    h = X
    n_layers = len(model.weights)
    p = model.dropout_rate
    for l in range(n_layers - 1):
        z = h @ model.weights[l] + model.biases[l]
        a = np.maximum(z, 0.0)
        if train and p > 0.0:
            if rng is None:
                raise ValueError("train-mode dropout requires an rng")
            mask = (rng.random(a.shape) >= p) / (1.0 - p)
            a = a * mask
        else:
            mask = None
        cache.append((h, z, mask))
        h = a
    z_out = h @ model.weights[-1] + model.biases[-1]
    cache.append((h, z_out, None))
    return z_out[:, 0], cache


def forward_logits(
    model: MlpModel,
    X: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Batched logits; dropout active only in "train" mode."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    logits, _ = _forward(model, np.asarray(X, dtype=float), mode == "train", rng)
    return logits


def forward_logit(
    model: MlpModel,
    x: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> float:
    """Single-sample logit."""
    return float(forward_logits(model, np.asarray(x, dtype=float)[None, :], mode, rng)[0])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_bce_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    weights: tuple[float, float] = (1.0, 1.0),
) -> float:
    """Mean class-weighted binary cross-entropy with probability clipping."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    if logits.shape != labels.shape:
        raise ValueError(f"logits and labels shapes differ: {logits.shape} vs {labels.shape}")
    if logits.size == 0:
        raise ValueError("empty batch")
    p = np.clip(_sigmoid(logits), LOSS_CLIP_EPS, 1.0 - LOSS_CLIP_EPS)
    w = np.where(labels == 1, weights[1], weights[0])
    ll = -labels * np.log(p) - (1 - labels) * np.log(1.0 - p)
    return float(np.mean(w * ll))


def loss_and_grads(
    model: MlpModel,
    X: np.ndarray,
    y: np.ndarray,
    weights: tuple[float, float] = (1.0, 1.0),
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss plus analytic gradients w.r.t. every weight and bias array."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    logits, cache = _forward(model, X, train, rng)
    sig = _sigmoid(logits)
    p = np.clip(sig, LOSS_CLIP_EPS, 1.0 - LOSS_CLIP_EPS)
    w = np.where(y == 1, weights[1], weights[0])
    loss = float(np.mean(w * (-y * np.log(p) - (1 - y) * np.log(1.0 - p))))

    # gradient vanishes where the probability is clipped
    unclipped = (sig > LOSS_CLIP_EPS) & (sig < 1.0 - LOSS_CLIP_EPS)
    dlogit = np.where(unclipped, w * (sig - y) / n, 0.0)

    n_layers = len(model.weights)
    grad_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * n_layers
    delta = dlogit[:, None]
    for l in range(n_layers - 1, -1, -1):
        h_in, z, mask = cache[l]
        grad_w[l] = h_in.T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ model.weights[l].T
            _, z_prev, mask_prev = cache[l - 1]
            delta = delta * (z_prev > 0)
            if mask_prev is not None:
                delta = delta * mask_prev
    return loss, grad_w, grad_b


@dataclass
class AdamState:
    """First/second-moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
    step: int,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """In-place AdamW update: adaptive step, then decoupled decay p -= lr*wd*p."""
    if step < 1:
        raise ValueError(f"step index must be >= 1, got {step}")
    b1, b2 = betas
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {i}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1 ** step)
        v_hat = state.v[i] / (1 - b2 ** step)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p -= lr * weight_decay * p


def fit(
    d_train: Dataset,
    d_val: Dataset,
    cfg: TrainConfig,
    fixed_epochs: int | None = None,
) -> TrainedModel:
    """Train with shuffled mini-batches and early stopping on validation loss.

    With ``fixed_epochs`` set, early stopping is disabled and exactly that
    many epochs run; the returned weights are still those of the epoch
    with the lowest validation loss.
    """
    if d_train.dimension != d_val.dimension:
        raise ValueError(
            f"train/validation dimensions differ: {d_train.dimension} vs {d_val.dimension}"
        )
    weights = class_weights(d_train)
    X_train, y_train = d_train.features_array(), d_train.labels_array()
    X_val, y_val = d_val.features_array(), d_val.labels_array()

    model = init_model(d_train.dimension, cfg)
    shuffle_rng = derive_rng(cfg.seed, "shuffle")
    dropout_rng = derive_rng(cfg.seed, "dropout")
    params = model.weights + model.biases
    state = AdamState.zeros_like(params)

    n = len(d_train)
    n_epochs = fixed_epochs if fixed_epochs is not None else cfg.max_epochs
    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = np.inf
    best_epoch = 0
    best_model = model.copy()
    step = 0
    since_best = 0

    for epoch in range(1, n_epochs + 1):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            _, gw, gb = loss_and_grads(
                model, X_train[idx], y_train[idx], weights, train=True, rng=dropout_rng
            )
            step += 1
            adamw_step(params, gw + gb, state, cfg.learning_rate, cfg.weight_decay, step)

        train_loss = weighted_bce_loss(forward_logits(model, X_train), y_train, weights)
        val_loss = weighted_bce_loss(forward_logits(model, X_val), y_val, weights)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_model = model.copy()
            since_best = 0
        else:
            since_best += 1
            if fixed_epochs is None and since_best >= cfg.patience:
                break

    return TrainedModel(
        model=best_model,
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
    )


def predict_confidence(model: MlpModel | TrainedModel, x: np.ndarray, y: int) -> float:
    """Probability assigned to the true label y: sigma(logit) if y=1 else 1-sigma."""
    return float(predict_confidences(model, np.asarray(x, dtype=float)[None, :], np.array([y]))[0])


def predict_confidences(model: MlpModel | TrainedModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized true-label confidences, clipped into (0, 1)."""
    if isinstance(model, TrainedModel):
        model = model.model
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    sig = _sigmoid(forward_logits(model, X))
    conf = np.where(y == 1, sig, 1.0 - sig)
    return np.clip(conf, CONF_CLIP_EPS, 1.0 - CONF_CLIP_EPS)


def save_model(trained: TrainedModel, path: str | Path) -> None:
    """Checkpoint to an .npz container; round-trip exact."""
    model = trained.model
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w_{i}"] = w
        arrays[f"b_{i}"] = b
    meta = {
        "n_layers": len(model.weights),
        "dropout_rate": model.dropout_rate,
        "input_dim": model.input_dim,
        "best_epoch": trained.best_epoch,
        "train_losses": trained.train_losses,
        "val_losses": trained.val_losses,
    }
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_model(path: str | Path) -> TrainedModel:
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["meta_json"]).decode("utf-8"))
        weights = [npz[f"w_{i}"] for i in range(meta["n_layers"])]
        biases = [npz[f"b_{i}"] for i in range(meta["n_layers"])]
    model = MlpModel(
        weights=weights,
        biases=biases,
        dropout_rate=meta["dropout_rate"],
        input_dim=meta["input_dim"],
    )
    return TrainedModel(
        model=model,
        train_losses=list(meta["train_losses"]),
        val_losses=list(meta["val_losses"]),
        best_epoch=meta["best_epoch"],
    )
