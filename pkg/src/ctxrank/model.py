"""Multi-task feed-forward scorer, its Adam trainer and the JSON model format.

Layers compute ``x @ W + b``; hidden layers use ReLU and every output unit is
an independent logistic head. The training loss is the per-impression sum of
binary cross entropies over heads, averaged over the mini-batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import SessionLog
from .errors import (
    ArtifactIOError,
    CorruptModel,
    DimensionMismatch,
    EmptyLog,
    InvalidConfig,
    VersionMismatch,
)
from .evaluation import normalized_entropy

FORMAT_VERSION = 1
FEATURE_MODES = ("baseline", "contextual")
PROB_CLAMP = 1e-12


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


class ScorerModel:
    """Dense ReLU network with logistic heads.

    ``input_mean``/``input_scale``, when set, standardize raw features before
    the first layer; they are fixed at training start and stored with the model.
    """

    def __init__(self, layers, feature_mode: str = "contextual", meta: dict | None = None,
                 input_mean=None, input_scale=None):
        if feature_mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {feature_mode!r}")
        self.weights = [np.array(w, dtype=np.float64) for w, _ in layers]
        self.biases = [np.array(b, dtype=np.float64) for _, b in layers]
        self.feature_mode = feature_mode
        self.meta = dict(meta or {})
        self.input_mean = None if input_mean is None else np.array(input_mean, dtype=np.float64)
        self.input_scale = None if input_scale is None else np.array(input_scale, dtype=np.float64)
        self._check()

    def _check(self):
        if not self.weights:
            raise CorruptModel("model has no layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise CorruptModel(f"layer {i}: weight/bias shapes {w.shape} / {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise CorruptModel(f"layer {i}: input {w.shape[0]} != previous output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise CorruptModel(f"layer {i}: non-finite parameters")
        if (self.input_mean is None) != (self.input_scale is None):
            raise CorruptModel("input normalization needs both mean and scale")
        if self.input_mean is not None:
            shape = (self.weights[0].shape[0],)
            if self.input_mean.shape != shape or self.input_scale.shape != shape:
                raise CorruptModel("input normalization does not match input_dim")
            if not np.all(self.input_scale > 0) or not np.all(np.isfinite(self.input_mean)):
                raise CorruptModel("input normalization must be finite with positive scale")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_dims(self) -> list[int]:
        return self.dims[1:-1]

    @property
    def task_count(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "ScorerModel":
        return ScorerModel(
            [(w.copy(), b.copy()) for w, b in zip(self.weights, self.biases)],
            self.feature_mode,
            self.meta,
            self.input_mean,
            self.input_scale,
        )

    def normalize(self, X: np.ndarray) -> np.ndarray:
        if self.input_mean is None:
            return X
        return (X - self.input_mean) / self.input_scale

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = self.normalize(X)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def predict(self, X) -> np.ndarray:
        """Probabilities, shape (n, T), clamped away from exact 0 and 1."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"expected {self.input_dim} features, got {X.shape[1]}")
        return np.clip(sigmoid(self.logits(X)), PROB_CLAMP, 1.0 - PROB_CLAMP)


def init_model(
    input_dim: int,
    hidden_dims: Sequence[int] = (64, 32),
    task_count: int = 1,
    feature_mode: str = "contextual",
    seed: int = 0,
    meta: dict | None = None,
) -> ScorerModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims, task_count]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return ScorerModel(layers, feature_mode, meta)


def forward(model: ScorerModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("forward takes a single feature vector")
    return model.predict(x[None, :])[0]


def loss(predictions, labels) -> float:
    p = np.clip(np.asarray(predictions, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionMismatch(f"predictions {p.shape} vs labels {y.shape}")
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def batch_loss(model: ScorerModel, X, Y) -> float:
    """Mean over rows of the per-row summed cross entropy."""
    p = model.predict(X)
    y = np.asarray(Y, dtype=np.float64)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / len(y))


def loss_and_grads(model: ScorerModel, X: np.ndarray, Y: np.ndarray):
    """Batch loss and gradients ordered like ``model.params()``."""
    n = X.shape[0]
    X = model.normalize(X)
    acts = [X]
    pre = []
    h = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    p = np.clip(sigmoid(pre[-1]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    value = float(-np.sum(Y * np.log(p) + (1.0 - Y) * np.log(1.0 - p)) / n)

    # d(BCE)/d(logit) = p - y for a logistic head
    delta = (sigmoid(pre[-1]) - Y) / n
    grads = [None] * (2 * len(model.weights))
    for i in range(last, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return value, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    initial_window_days: int = 21
    single_pass: bool = True
    passes: int = 1
    hidden_dims: tuple = (64, 32)
    objective_task: int = 0
    # step size at step t is learning_rate / (1 + t / lr_decay_steps); 0 keeps it constant
    lr_decay_steps: int = 50
    # exponential moving average of the weights served at the end; 0 disables
    ema_decay: float = 0.995
    init_output_bias: bool = True
    standardize: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidConfig("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.initial_window_days < 1:
            raise InvalidConfig("initial_window_days must be >= 1")
        if self.passes < 1:
            raise InvalidConfig("passes must be >= 1")
        if self.lr_decay_steps < 0:
            raise InvalidConfig("lr_decay_steps must be >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise InvalidConfig("ema_decay must lie in [0, 1)")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))


class Adam:
    """Adam with bias correction, updating ``params`` in place."""

    def __init__(self, params, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8,
                 decay_steps=0, ema_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.decay_steps = decay_steps
        self.ema_decay = ema_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.ema = [p.copy() for p in params] if ema_decay else None
        self.t = 0

    def current_lr(self) -> float:
        if not self.decay_steps:
            return self.lr
        return self.lr / (1.0 + self.t / self.decay_steps)

    def step(self, grads):
        lr = self.current_lr()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        if self.ema is not None:
            # zero-debiased so early steps are not pulled toward the init
            d = min(self.ema_decay, (1.0 + self.t) / (10.0 + self.t))
            for e, p in zip(self.ema, self.params):
                e += (1.0 - d) * (p - e)

    def averaged(self):
        return self.ema if self.ema is not None else self.params


@dataclass(frozen=True)
class DayNE:
    day: int
    ne: float
    background_ctr: float
    count: int


@dataclass
class TrainResult:
    model: ScorerModel
    trajectory: list = field(default_factory=list)
    steps: int = 0


def _run_pass(model, opt, X, Y, order, batch_size):
    steps = 0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        _, grads = loss_and_grads(model, X[idx], Y[idx])
        opt.step(grads)
        steps += 1
    return steps


def _served(model: ScorerModel, opt: Adam) -> ScorerModel:
    if opt.ema is None:
        return model.copy()
    avg = opt.averaged()
    return ScorerModel(list(zip(avg[0::2], avg[1::2])), model.feature_mode, model.meta,
                       model.input_mean, model.input_scale).copy()


def initial_model(log: SessionLog, cfg: TrainConfig = TrainConfig(), mode: str = "contextual") -> ScorerModel:
    """The weights ``train`` starts from for this log and config.

    Glorot-uniform layers; optionally the output biases start at the logit of
    each task's base rate over the initial window, and inputs are
    standardized with statistics from that window.
    """
    X, Y, _, day = log.matrices(mode)
    meta = {k: log.metadata[k] for k in ("dim", "num_topics", "context_depth") if k in log.metadata}
    meta["objective_task"] = cfg.objective_task
    model = init_model(X.shape[1], cfg.hidden_dims, Y.shape[1], mode, cfg.seed, meta)
    first_days = day < day.min() + cfg.initial_window_days
    if cfg.standardize:
        sd = X[first_days].std(axis=0)
        model.input_mean = X[first_days].mean(axis=0)
        model.input_scale = np.where(sd > 1e-12, sd, 1.0)
    if cfg.init_output_bias:
        rate = np.clip(Y[first_days].mean(axis=0), 1e-6, 1 - 1e-6)
        model.biases[-1][:] = np.log(rate / (1.0 - rate))
    return model


def train(
    log: SessionLog,
    cfg: TrainConfig = TrainConfig(),
    mode: str = "contextual",
    init: ScorerModel | None = None,
) -> TrainResult:
    """Mini-batch Adam over the initial day window, then one day at a time.

    Each recurrent day is first scored by the current model (its NE on the
    objective head goes into the trajectory) and then trained on.
    """
    if mode not in FEATURE_MODES:
        raise InvalidConfig(f"unknown feature mode {mode!r}")
    if len(log) == 0:
        raise EmptyLog("cannot train on an empty session log")
    X, Y, _, day = log.matrices(mode)
    if not 0 <= cfg.objective_task < Y.shape[1]:
        raise InvalidConfig(f"objective_task {cfg.objective_task} >= task count {Y.shape[1]}")

    if init is None:
        model = initial_model(log, cfg, mode)
    else:
        if init.input_dim != X.shape[1] or init.task_count != Y.shape[1]:
            raise DimensionMismatch("initial model does not match log dimensions")
        model = init.copy()
    params = model.params()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon,
               cfg.lr_decay_steps, cfg.ema_decay)
    rng = np.random.default_rng(cfg.seed)
    passes = 1 if cfg.single_pass else cfg.passes

    days = np.unique(day)
    first = days[0]
    initial = np.flatnonzero(day < first + cfg.initial_window_days)
    steps = 0
    for _ in range(passes):
        steps += _run_pass(model, opt, X, Y, rng.permutation(initial), cfg.batch_size)

    trajectory = []
    for d in days[days >= first + cfg.initial_window_days]:
        idx = np.flatnonzero(day == d)
        y = Y[idx, cfg.objective_task]
        if 0 < y.sum() < len(y):
            p = _served(model, opt).predict(X[idx])[:, cfg.objective_task]
            trajectory.append(DayNE(int(d), normalized_entropy(p, y), float(y.mean()), len(idx)))
        for _ in range(passes):
            steps += _run_pass(model, opt, X, Y, idx[rng.permutation(len(idx))], cfg.batch_size)
    return TrainResult(_served(model, opt), trajectory, steps)


def model_to_dict(model: ScorerModel) -> dict:
    """JSON document; ``w`` is stored as fan_in rows of fan_out values."""
    doc = {
        "version": FORMAT_VERSION,
        "feature_mode": model.feature_mode,
        "dims": model.dims,
        "task_count": model.task_count,
        "meta": model.meta,
        "layers": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in zip(model.weights, model.biases)
        ],
    }
    if model.input_mean is not None:
        doc["input_norm"] = {"mean": model.input_mean.tolist(), "scale": model.input_scale.tolist()}
    return doc


def model_from_dict(doc: dict) -> ScorerModel:
    if not isinstance(doc, dict):
        raise CorruptModel("model document is not an object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version!r}, expected {FORMAT_VERSION}")
    try:
        dims = [int(d) for d in doc["dims"]]
        task_count = int(doc.get("task_count", dims[-1]))
        layers = [
            (np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64))
            for l in doc["layers"]
        ]
        mode = doc["feature_mode"]
        norm = doc.get("input_norm")
        mean = scale = None
        if norm is not None:
            mean, scale = norm["mean"], norm["scale"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed model document: {exc}") from exc
    if dims[-1] != task_count:
        raise CorruptModel(f"dims end in {dims[-1]} outputs but {task_count} tasks declared")
    if len(layers) != len(dims) - 1:
        raise CorruptModel(f"{len(layers)} layers for dims {dims}")
    for i, (w, b) in enumerate(layers):
        if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
            raise CorruptModel(f"layer {i} shape {w.shape} does not match dims {dims}")
    if mode not in FEATURE_MODES:
        raise CorruptModel(f"unknown feature mode {mode!r}")
    return ScorerModel(layers, mode, doc.get("meta") or {}, mean, scale)


def save_model(model: ScorerModel, path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write model {path}: {exc.strerror}") from exc


def load_model(path) -> ScorerModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot read model {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path}: not valid JSON ({exc.msg})") from exc
    return model_from_dict(doc)
