"""Partially trained GCN: layers, forward/backward passes and training.

A model is a stack of bias-free layers. Graph-conv layers compute
``act(A_hat @ H @ W)``, dense layers ``act(H @ W)``. Only layers flagged
``trainable`` receive updates; every other weight keeps its Glorot draw and
is stored read-only.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from frozen_gcn.linalg import glorot_init, softmax_rows, spmm

GRAPH_CONV = "graph_conv"
DENSE = "dense"


class NonFiniteError(FloatingPointError):
    """Forward pass produced NaN/inf activations."""

    def __init__(self, layer: int):
        super().__init__(f"non-finite activation at layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    kind: str = GRAPH_CONV
    trainable: bool = False
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in (GRAPH_CONV, DENSE):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")


@dataclass
class ModelParams:
    specs: list[LayerSpec]
    weights: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.specs)

    @property
    def widths(self) -> list[int]:
        return [s.out_dim for s in self.specs[:-1]]

    @property
    def trainable_layers(self) -> list[int]:
        return [i for i, s in enumerate(self.specs) if s.trainable]

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for s, w in zip(self.specs, self.weights):
            if not s.trainable:
                h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    weight_decay: float = 0.0
    optimizer: str = "adam"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    test_accuracy: float = float("nan")
    wall_time: float = 0.0
    diverged_epoch: int | None = None
    frozen_intact: bool = True

    @property
    def best_val_accuracy(self) -> float:
        vals = [v for v in self.val_accuracy if np.isfinite(v)]
        return max(vals) if vals else float("nan")


def check_chain(specs) -> None:
    if not specs:
        raise ValueError("model needs at least one layer")
    for i, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.out_dim != b.in_dim:
            raise ValueError(f"layer {i} outputs {a.out_dim} but layer {i + 1} "
                             f"expects {b.in_dim}")


def build_model(specs, rng: np.random.Generator) -> ModelParams:
    specs = list(specs)
    check_chain(specs)
    weights = []
    for s in specs:
        w = glorot_init(s.in_dim, s.out_dim, rng)
        if not s.trainable:
            w.flags.writeable = False
        weights.append(w)
    return ModelParams(specs=specs, weights=weights)


def gcn_specs(in_dim: int, num_classes: int, depth: int, width,
              trainable=(), trainable_kind: str = GRAPH_CONV) -> list[LayerSpec]:
    """Layer stack ``in -> w1 -> ... -> w_{L-1} -> K`` with 1-based trainable
    positions. ``width`` is an int or a list of ``depth - 1`` hidden widths."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    widths = [width] * (depth - 1) if np.isscalar(width) else list(width)
    if len(widths) != depth - 1:
        raise ValueError(f"need {depth - 1} hidden widths, got {len(widths)}")
    positions = set(trainable)
    if any(p < 1 or p > depth for p in positions):
        raise ValueError(f"trainable positions must lie in [1, {depth}]")
    dims = [in_dim] + [int(w) for w in widths] + [num_classes]
    specs = []
    for i in range(depth):
        pos = i + 1
        last = pos == depth
        kind = trainable_kind if pos in positions else GRAPH_CONV
        specs.append(LayerSpec(dims[i], dims[i + 1], kind=kind,
                               trainable=pos in positions,
                               activation="none" if last else "relu"))
    return specs


@dataclass
class ForwardCache:
    """Per-layer ``inputs`` H, propagated inputs P (A_hat H or H) and
    pre-activations Z. ``start`` is the first layer actually computed."""
    inputs: list
    propagated: list
    preact: list
    start: int = 0


def forward(params: ModelParams, adj, x: np.ndarray, start: int = 0,
            check_finite: bool = True):
    """Run layers ``start..L-1`` on ``x`` (the input of layer ``start``).

    Returns ``(logits, cache)``. Entries of the cache below ``start`` are None.
    """
    depth = params.depth
    if x.shape[1] != params.specs[start].in_dim:
        raise ValueError(f"input has {x.shape[1]} columns, layer {start} "
                         f"expects {params.specs[start].in_dim}")
    cache = ForwardCache([None] * depth, [None] * depth, [None] * depth, start)
    h = x
    for i in range(start, depth):
        spec, w = params.specs[i], params.weights[i]
        p = spmm(adj, h) if spec.kind == GRAPH_CONV else h
        with np.errstate(over="ignore", invalid="ignore"):
            z = p @ w  # non-finite results are reported below
        cache.inputs[i], cache.propagated[i], cache.preact[i] = h, p, z
        h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        if check_finite and not np.all(np.isfinite(h)):
            raise NonFiniteError(i)
    return h, cache


def frozen_prefix(params: ModelParams) -> int:
    """Number of leading frozen layers (their output never changes)."""
    t = params.trainable_layers
    return t[0] if t else params.depth


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over masked rows and its gradient w.r.t. logits."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("empty mask")
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    y = labels[idx]
    loss = float(np.mean(log_norm - z[np.arange(len(idx)), y]))
    g = np.zeros_like(logits)
    probs = softmax_rows(logits[idx])
    probs[np.arange(len(idx)), y] -= 1.0
    g[idx] = probs / len(idx)
    return loss, g


def loss_and_grads(params: ModelParams, cache: ForwardCache, adj, labels, mask,
                   weight_decay: float = 0.0):
    """Cross-entropy loss (+ ``weight_decay/2 * ||W||^2`` on trainable weights)
    and gradients for the trainable layers only.

    Backpropagation passes through frozen layers above the lowest trainable
    one; frozen weights never receive a gradient entry.
    """
    trainable = params.trainable_layers
    depth = params.depth
    logits = cache.preact[depth - 1]
    if params.specs[-1].activation == "relu":
        logits = np.maximum(logits, 0.0)
    loss, dh = cross_entropy(logits, np.asarray(labels), np.asarray(mask))
    grads = {}
    if not trainable:
        return loss, grads
    lowest = trainable[0]
    if lowest < cache.start:
        raise ValueError("cache does not cover the lowest trainable layer")
    for i in range(depth - 1, lowest - 1, -1):
        spec, w = params.specs[i], params.weights[i]
        dz = dh * (cache.preact[i] > 0) if spec.activation == "relu" else dh
        if spec.trainable:
            g = cache.propagated[i].T @ dz
            if weight_decay:
                loss += 0.5 * weight_decay * float(np.sum(w * w))
                g = g + weight_decay * w
            grads[i] = g
        if i > lowest:
            dp = dz @ w.T
            dh = spmm(adj, dp) if spec.kind == GRAPH_CONV else dp
    return loss, grads


def accuracy_from_logits(logits: np.ndarray, labels, mask) -> float:
    """Argmax accuracy on masked rows; ties go to the lowest class index and
    rows with non-finite logits count as wrong."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("empty mask")
    z = logits[idx]
    ok = np.all(np.isfinite(z), axis=1)
    pred = np.argmax(np.where(np.isfinite(z), z, -np.inf), axis=1)
    return float(np.mean(ok & (pred == np.asarray(labels)[idx])))


def evaluate(params: ModelParams, adj, x, labels, mask) -> float:
    logits, _ = forward(params, adj, x, check_finite=False)
    return accuracy_from_logits(logits, labels, mask)


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m, self.v, self.t = {}, {}, 0

    def step(self, weights, grads):
        c = self.cfg
        self.t += 1
        for i, g in grads.items():
            m = self.m.get(i, 0.0) * c.beta1 + (1 - c.beta1) * g
            v = self.v.get(i, 0.0) * c.beta2 + (1 - c.beta2) * g * g
            self.m[i], self.v[i] = m, v
            m_hat = m / (1 - c.beta1 ** self.t)
            v_hat = v / (1 - c.beta2 ** self.t)
            weights[i] -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


class SGD:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, weights, grads):
        for i, g in grads.items():
            weights[i] -= self.cfg.learning_rate * g


def train(params: ModelParams, adj, bundle, config: TrainConfig,
          features: np.ndarray | None = None) -> TrainReport:
    """Full-batch training of the trainable layers, in place.

    ``features`` overrides ``bundle.features`` (e.g. after row normalization).
    Final-epoch weights are kept. A non-finite loss or activation stops the
    run and is recorded in ``diverged_epoch``.
    """
    t0 = time.perf_counter()
    x = bundle.features if features is None else features
    labels, train_mask = bundle.labels, bundle.train_mask
    has_val = bool(np.any(bundle.val_mask))
    digest = params.frozen_digest()
    report = TrainReport()

    start = frozen_prefix(params)
    if start == params.depth:
        start = 0
    h0, epochs = x, config.epochs
    if start:
        # layers below the first trainable one are constant: run them once
        try:
            h0, _ = forward_range(params, adj, x, 0, start)
        except NonFiniteError:
            report.diverged_epoch, epochs = 0, 0

    opt = Adam(config) if config.optimizer == "adam" else SGD(config)
    for epoch in range(epochs):
        try:
            logits, cache = forward(params, adj, h0, start=start)
            loss, grads = loss_and_grads(params, cache, adj, labels, train_mask,
                                         config.weight_decay)
        except NonFiniteError:
            report.diverged_epoch = epoch
            break
        if not np.isfinite(loss):
            report.diverged_epoch = epoch
            break
        report.train_loss.append(loss)
        report.val_accuracy.append(
            accuracy_from_logits(logits, labels, bundle.val_mask) if has_val
            else float("nan"))
        if grads:
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(params.weights, grads)

    report.frozen_intact = params.frozen_digest() == digest
    if not report.frozen_intact:
        raise RuntimeError("frozen weights changed during training")
    if np.any(bundle.test_mask):
        report.test_accuracy = evaluate(params, adj, x, labels, bundle.test_mask)
    report.wall_time = time.perf_counter() - t0
    return report


def forward_range(params: ModelParams, adj, x, start: int, stop: int):
    """Apply layers ``start..stop-1``; returns the output and the cache."""
    sub = ModelParams(params.specs[start:stop], params.weights[start:stop])
    return forward(sub, adj, x)
