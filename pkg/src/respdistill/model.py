"""ReLU MLP with hand-written backprop, Adam and a cosine-scheduled training loop.

The loop takes an arbitrary target distribution per sample, so hard-label
training is just soft-label training with one-hot rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import mask_batch
from .exceptions import ConfigError, DomainError, StorageError
from .io import write_text_atomic
from .numerics import LOG_CLAMP, Rng64, derive_seed

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights are stored ``(fan_in, fan_out)`` so a layer is ``x @ W + b``."""

    layer_sizes: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise DomainError("layer count does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise DomainError(f"layer {i}: expected W{shape}, b({shape[1]},), got {w.shape}, {b.shape}")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    def arrays(self):
        return [*self.weights, *self.biases]

    def copy(self):
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MlpParams(
            self.layer_sizes, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other):
        return self.layer_sizes == other.layer_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(params.zeros_like(), params.zeros_like())


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-3
    epochs: int = 200
    batch_size: int = 128
    seed: int = 1
    mask_width: int = 0
    shuffle: bool = True
    hidden_sizes: tuple = (32, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.lr_max > 0:
            raise ConfigError("lr_max must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mask_width < 0:
            raise ConfigError("mask_width must be >= 0")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be >= 1")

    def layer_sizes(self, n_inputs, n_classes):
        return (n_inputs, *self.hidden_sizes, n_classes)

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainResult:
    params: MlpParams
    loss_trace: list = field(default_factory=list)
    steps: int = 0

    @property
    def final_loss(self):
        return self.loss_trace[-1] if self.loss_trace else float("nan")


def init_params(layer_sizes, seed):
    """He-normal weights, zero biases."""
    layer_sizes = tuple(int(s) for s in layer_sizes)
    if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
        raise ConfigError(f"invalid layer sizes {layer_sizes}")
    rng = Rng64(derive_seed(seed, "init"))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_sizes, weights, biases)


def zero_params(layer_sizes):
    sizes = tuple(int(s) for s in layer_sizes)
    return MlpParams(
        sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])], [np.zeros(b) for b in sizes[1:]]
    )


def _as_batch(params, features):
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise DomainError(f"expected features of length {params.n_inputs}, got shape {np.shape(features)}")
    return X, single


def _forward_cached(params, X):
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(params, features):
    """Pre-softmax logits for one sample (1-D) or a batch (2-D)."""
    X, single = _as_batch(params, features)
    logits = _forward_cached(params, X)[-1]
    return logits[0] if single else logits


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(params, X, T):
    """Mean cross-entropy over the batch and its gradient.

    The output delta is ``sum(t) * p - t``; for targets on the simplex this
    is the familiar ``p - t``, and the general form keeps the gradient exact
    for unnormalised targets such as raw logits.
    """
    acts = _forward_cached(params, X)
    logits = acts[-1]
    if not np.all(np.isfinite(logits)):
        return float("nan"), None
    P = _softmax_rows(logits)
    n = X.shape[0]
    loss = float(-(T * np.log(np.maximum(P, LOG_CLAMP))).sum() / n)

    delta = (T.sum(axis=1, keepdims=True) * P - T) / n
    gW = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return loss, MlpParams(params.layer_sizes, gW, gb)


def backward(params, features, target):
    """Gradient of ``cross_entropy(target, softmax(forward(x)))`` w.r.t. all parameters."""
    X, single = _as_batch(params, features)
    T = np.asarray(target, dtype=np.float64)
    if single:
        T = T[None, :]
    if T.shape != (X.shape[0], params.n_classes):
        raise DomainError(f"target shape {np.shape(target)} does not match {params.n_classes} classes")
    loss, grads = loss_and_grad(params, X, T)
    if grads is None:
        raise DomainError("non-finite logits in backward")
    return grads


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if params.layer_sizes != grads.layer_sizes or params.layer_sizes != state.m.layer_sizes:
        raise DomainError("adam_step shape mismatch")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    k = len(params.weights)

    def pack(arrs):
        return MlpParams(params.layer_sizes, arrs[:k], arrs[k:])

    return pack(new_p), AdamState(pack(new_m), pack(new_v), t, b1, b2, state.eps)


def cosine_lr(t, total, lr_max):
    if total < 1:
        raise DomainError("total steps must be >= 1")
    if t < 0 or t > total:
        raise DomainError(f"step {t} outside [0, {total}]")
    return 0.5 * lr_max * (1.0 + math.cos(math.pi * t / total))


def train(params, X, targets, cfg, refresh=None):
    """Minibatch Adam on per-sample targets under a cosine schedule.

    ``targets`` is an ``(n, C)`` array. ``refresh``, when given, is called as
    ``refresh(batch_indices, epoch)`` before every batch and must return the
    targets for those rows; this is how per-iteration random-teacher labels
    are injected. Training stops early, recording NaN, if the logits stop
    being finite.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise DomainError(f"X must be (n, {params.n_inputs}), got {X.shape}")
    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (n, params.n_classes):
            raise ConfigError(f"need one length-{params.n_classes} target per sample, got {targets.shape}")
    elif refresh is None:
        raise ConfigError("either targets or a refresh hook is required")
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")

    batches = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * batches
    mask_rng = Rng64(derive_seed(cfg.seed, "mask"))
    state = AdamState.for_params(params)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        if cfg.shuffle:
            order = Rng64(derive_seed(cfg.seed, "shuffle", epoch)).permutation(n)
        else:
            order = np.arange(n)
        loss_sum = 0.0
        for b in range(batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            T = refresh(idx, epoch) if refresh is not None else targets[idx]
            xb = mask_batch(X[idx], cfg.mask_width, mask_rng) if cfg.mask_width else X[idx]
            loss, grads = loss_and_grad(params, xb, T)
            if grads is None or not math.isfinite(loss):
                trace.append(float("nan"))
                return TrainResult(params, trace, step)
            params, state = adam_step(params, grads, state, cosine_lr(step, total, cfg.lr_max))
            loss_sum += loss * idx.size
            step += 1
        trace.append(loss_sum / n)
    return TrainResult(params, trace, step)


def predict_proba(params, X):
    return _softmax_rows(forward(params, np.atleast_2d(X)))


def checkpoint_dict(params, cfg=None):
    return {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "train_config": None if cfg is None else cfg.to_dict(),
        "seed": None if cfg is None else cfg.seed,
    }


def params_from_dict(d):
    if d.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {d.get('version')!r}")
    params = MlpParams(
        d["layer_sizes"],
        [np.array(w, dtype=np.float64) for w in d["weights"]],
        [np.array(b, dtype=np.float64) for b in d["biases"]],
    )
    cfg = TrainConfig.from_dict(d["train_config"]) if d.get("train_config") else None
    return params, cfg


def save_checkpoint(path, params, cfg=None):
    write_text_atomic(path, json.dumps(checkpoint_dict(params, cfg), sort_keys=True) + "\n")


def load_checkpoint(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    return params_from_dict(d)
