"""Small fully-connected regression networks with exact input gradients.

The proxy models are plain numpy MLPs (ReLU hidden layers, identity
output) trained with Adam on mean squared error.  Everything is seeded
and single-threaded per model, so a (data, config) pair reproduces the
same weights bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, design_matrix

DEFAULT_HIDDEN = (64, 64)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(eq=False)
class MlpModel:
    """Feedforward regressor: ReLU hidden layers, scalar linear output.

    ``weights[l]`` has shape (fan_in, fan_out); biases are 1-D. Validation
    metrics from training (best epoch) ride along for reporting.
    """

    weights: list
    biases: list
    val_mse: float | None = None
    val_spearman: float | None = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"input has shape {x.shape}, model expects ({self.input_dim},)")
        if not np.all(np.isfinite(x)):
            raise ValueError("input must be finite")
        return x

    def forward(self, x: np.ndarray) -> float:
        x = self._check_input(x)
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        out = a @ self.weights[-1] + self.biases[-1]
        return float(out[0])

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError("batch has wrong shape")
        a = X
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return (a @ self.weights[-1] + self.biases[-1])[:, 0]

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Scalar output and its exact reverse-mode gradient wrt the input.

        ReLU uses subgradient 0 where the pre-activation is exactly 0.
        """
        x = self._check_input(x)
        acts = [x]
        pre = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        out = a @ self.weights[-1] + self.biases[-1]
        # backward pass
        delta = self.weights[-1][:, 0].copy()
        for w, z in zip(reversed(self.weights[:-1]), reversed(pre)):
            delta = w @ (delta * (z > 0.0))
        return float(out[0]), delta

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def lipschitz_bound(self) -> float:
        """Product of layer spectral norms; a global Lipschitz constant."""
        c = 1.0
        for w in self.weights:
            c *= float(np.linalg.norm(w, 2))
        return c


def init_mlp(input_dim: int, hidden=DEFAULT_HIDDEN, rng: np.random.Generator | None = None) -> MlpModel:
    """He-initialized MLP; biases start at zero."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [input_dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    patience: int = 10
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer constants")


@dataclass(eq=False)
class Ensemble:
    """Immutable list of proxy models sharing one architecture."""

    models: list

    def __post_init__(self):
        if len(self.models) < 1:
            raise ValueError("ensemble needs at least one model")
        dims = {m.input_dim for m in self.models}
        if len(dims) != 1:
            raise ValueError("ensemble members must share input_dim")

    @property
    def size(self) -> int:
        return len(self.models)

    @property
    def input_dim(self) -> int:
        return self.models[0].input_dim

    def validation_metrics(self) -> list[tuple]:
        return [(m.val_spearman, m.val_mse) for m in self.models]


def _mse(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    pred = model.forward_batch(X)
    return float(np.mean((pred - y) ** 2))


def _adam_step(params, grads, m_state, v_state, t, lr):
    for p, g, m, v in zip(params, grads, m_state, v_state):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train_arrays(X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                 X_val: np.ndarray | None = None, y_val: np.ndarray | None = None) -> MlpModel:
    """Train on explicit arrays (optimization representation).

    When no validation arrays are given, a seeded 90/10 split is carved out
    of the training data.Aborts if the loss goes non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < cfg.batch_size:
        raise ValueError("need at least batch_size training rows")
    rng = np.random.default_rng(cfg.seed)
    if X_val is None:
        n_val = max(1, X.shape[0] // 10)
        perm = rng.permutation(X.shape[0])
        X_val, y_val = X[perm[:n_val]], y[perm[:n_val]]
        X, y = X[perm[n_val:]], y[perm[n_val:]]

    model = init_mlp(X.shape[1], hidden=cfg.hidden, rng=rng)
    params = model.weights + model.biases
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    t = 0

    best_val = np.inf
    best_weights = [w.copy() for w in model.weights]
    best_biases = [b.copy() for b in model.biases]
    stale = 0

    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                # forward with cached activations
                acts = [xb]
                pre = []
                a = xb
                for w, b in zip(model.weights[:-1], model.biases[:-1]):
                    z = a @ w + b
                    pre.append(z)
                    a = np.maximum(z, 0.0)
                    acts.append(a)
                pred = (a @ model.weights[-1] + model.biases[-1])[:, 0]
                loss = np.mean((pred - yb) ** 2)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch}, batch offset {start}"
                    )
                # backward
                dpred = (2.0 / idx.shape[0]) * (pred - yb)
                delta = dpred[:, None]
                grads_w = [None] * len(model.weights)
                grads_b = [None] * len(model.biases)
                grads_w[-1] = acts[-1].T @ delta
                grads_b[-1] = delta.sum(axis=0)
                for layer in range(len(model.weights) - 2, -1, -1):
                    delta = (delta @ model.weights[layer + 1].T) * (pre[layer] > 0.0)
                    grads_w[layer] = acts[layer].T @ delta
                    grads_b[layer] = delta.sum(axis=0)
                if cfg.weight_decay:
                    for gw, w in zip(grads_w, model.weights):
                        gw += cfg.weight_decay * w
            t += 1
            _adam_step(params, grads_w + grads_b, m_state, v_state, t, cfg.learning_rate)
            for p in params:
                if not np.all(np.isfinite(p)):
                    raise FloatingPointError(f"non-finite weights after epoch {epoch} update")
        val = _mse(model, X_val, y_val)
        if val < best_val:
            best_val = val
            best_weights = [w.copy() for w in model.weights]
            best_biases = [b.copy() for b in model.biases]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model.weights = best_weights
    model.biases = best_biases
    model.val_mse = best_val
    try:
        model.val_spearman = spearman(model.forward_batch(X_val), y_val)
    except ValueError:
        model.val_spearman = float("nan")  # constant validation targets
    return model


def train(data: Dataset, cfg: TrainConfig, val: Dataset | None = None) -> MlpModel:
    """Supervised regression on a dataset; seeded and deterministic."""
    X = design_matrix(data)
    if val is not None:
        return train_arrays(X, data.scores, cfg, design_matrix(val), val.scores)
    return train_arrays(X, data.scores, cfg)


def train_ensemble(data: Dataset, m: int, cfg: TrainConfig) -> Ensemble:
    """Train m models on complementary folds of the dataset.

    A seeded shuffle splits the data into m folds; model i validates on
    fold i and trains on the rest, with per-model seed ``cfg.seed + i``.
    A single-model ensemble falls back to the internal 90/10 split.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    X = design_matrix(data)
    y = data.scores
    n = len(data)
    if m == 1:
        return Ensemble(models=[train_arrays(X, y, cfg)])
    if n < m:
        raise ValueError("fold smaller than 1 sample")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, m)
    models = []
    for i, fold in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        models.append(
            train_arrays(X[train_idx], y[train_idx], replace(cfg, seed=cfg.seed + i),
                         X[fold], y[fold])
        )
    return Ensemble(models=models)


# ---------------------------------------------------------------------------
# Spearman rank correlation
# ---------------------------------------------------------------------------

def _average_ranks(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.shape[0], dtype=np.float64)
    sorted_a = a[order]
    i = 0
    while i < a.shape[0]:
        j = i
        while j + 1 < a.shape[0] and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1..j+1
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("need two equal-length lists with >= 2 entries")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0.0:
        raise ValueError("constant input")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Serialization (versioned, bitwise-exact round trips)
# ---------------------------------------------------------------------------
#
# Layout: 8-byte magic, u32 header length, JSON header (shapes + metrics),
# then raw little-endian float64 buffers in header order.  Plain bytes, no
# timestamps, so identical models serialize to identical files.

_MAGIC = b"ENSMBO01"


def _model_header(model: MlpModel) -> dict:
    return {
        "layers": [[list(w.shape), list(b.shape)] for w, b in zip(model.weights, model.biases)],
        "val_mse": model.val_mse,
        "val_spearman": model.val_spearman,
    }


def save_ensemble(ens: Ensemble, path) -> None:
    header = {"version": 1, "models": [_model_header(m) for m in ens.models]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for m in ens.models:
            for w, b in zip(m.weights, m.biases):
                f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_ensemble(path) -> Ensemble:
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError("not an ensemble file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"unsupported version {header.get('version')}")
        models = []
        for mh in header["models"]:
            weights, biases = [], []
            for wshape, bshape in mh["layers"]:
                wsize = int(np.prod(wshape))
                bsize = int(np.prod(bshape))
                weights.append(np.frombuffer(f.read(wsize * 8), dtype="<f8").reshape(wshape).copy())
                biases.append(np.frombuffer(f.read(bsize * 8), dtype="<f8").reshape(bshape).copy())
            models.append(MlpModel(weights=weights, biases=biases,
                                   val_mse=mh["val_mse"], val_spearman=mh["val_spearman"]))
    return Ensemble(models=models)


def save_model(model: MlpModel, path) -> None:
    save_ensemble(Ensemble(models=[model]), path)


def load_model(path) -> MlpModel:
    return load_ensemble(path).models[0]
