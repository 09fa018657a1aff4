"""Dense ReLU critic network with hand-written backprop and Adam.

The critic maps a concatenated ``(theta, y)`` row to one scalar score.
Everything is plain numpy; no autodiff graph is built.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_batch
from .exceptions import ConfigError, ContractError, ShapeError

CRITIC_FILE_MAGIC = "# sagabed-critic v1"


@dataclass
class Mlp:
    layer_sizes: list
    weights: list
    biases: list
    activation: str = "relu"
    # bumped on every in-place update so stale forward caches can be detected
    version: int = 0

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    def parameters(self):
        return [*self.weights, *self.biases]

    def copy(self):
        return Mlp(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.version,
        )


@dataclass
class ParamGrads:
    weights: list
    biases: list

    def norm(self):
        return float(np.sqrt(sum(np.sum(g * g) for g in (*self.weights, *self.biases))))


@dataclass
class ForwardCache:
    activations: list  # input to each layer, activations[0] is the raw input
    mlp_id: int
    version: int


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, mlp, **kwargs):
        params = mlp.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kwargs)


def _check_layer_sizes(layer_sizes):
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ConfigError("need at least an input and an output layer", key="layer_sizes")
    if any(int(s) != s or s < 1 for s in sizes):
        raise ConfigError(f"layer sizes must be positive integers, got {sizes}", key="layer_sizes")
    if sizes[-1] != 1:
        raise ConfigError("critic output layer must have size 1", key="layer_sizes")
    return [int(s) for s in sizes]


def mlp_init(layer_sizes, seed=None):
    """Glorot-uniform weights, zero biases."""
    sizes = _check_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases)


def mlp_forward(mlp, inputs):
    """Return ``(scores, cache)`` for a batch of input rows."""
    x = check_batch(inputs, mlp.n_inputs)
    activations = [x]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w.T
        z += b
        if i < last:
            h = np.maximum(z, 0.0, out=z)
            activations.append(h)
        else:
            h = z
    return h[:, 0], ForwardCache(activations, id(mlp), mlp.version)


def mlp_scores(mlp, inputs):
    return mlp_forward(mlp, inputs)[0]


def mlp_backward(mlp, cache, output_grads):
    """Backpropagate d(loss)/d(score) to parameter and input gradients."""
    if cache.mlp_id != id(mlp) or cache.version != mlp.version:
        raise ContractError("forward cache does not belong to this network state")
    g = np.asarray(output_grads, dtype=np.float64).reshape(-1, 1)
    n = cache.activations[0].shape[0]
    if g.shape[0] != n:
        raise ShapeError(f"got {g.shape[0]} output gradients for a batch of {n}")
    n_layers = len(mlp.weights)
    dw = [None] * n_layers
    db = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        dw[i] = g.T @ cache.activations[i]
        db[i] = g.sum(axis=0)
        g = g @ mlp.weights[i]
        if i > 0:
            # relu(z) > 0 iff z > 0, so the subgradient at exactly 0 is 0
            g *= cache.activations[i] > 0.0
    return ParamGrads(dw, db), g


def adam_step(mlp, grads, state, lr, maximize=False):
    """One in-place Adam update of ``mlp`` and ``state``; returns both."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}", key="lr")
    params = mlp.parameters()
    gs = [*grads.weights, *grads.biases]
    if len(gs) != len(params) or len(state.first_moment) != len(params):
        raise ContractError("gradient / optimizer state do not match the network")
    for p, g, m in zip(params, gs, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch {p.shape} vs {g.shape} vs {m.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    sign = 1.0 if maximize else -1.0
    for p, g, m, v in zip(params, gs, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p += sign * lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    mlp.version += 1
    return mlp, state


class InputStandardizer(TransformerMixin, BaseEstimator):
    """Per-column affine standardization, frozen after ``fit``.

    Zero-variance columns get unit scale so the transform stays invertible.
    """

    def fit(self, X, y=None):
        X = check_batch(X, name="X")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_batch(X, self.n_features_in_, name="X")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self)
        X = check_batch(X, self.n_features_in_, name="X")
        return X * self.scale_ + self.mean_

    @classmethod
    def from_arrays(cls, mean, scale):
        obj = cls()
        obj.mean_ = np.asarray(mean, dtype=np.float64).copy()
        obj.scale_ = np.asarray(scale, dtype=np.float64).copy()
        obj.n_features_in_ = obj.mean_.size
        return obj


@dataclass
class Critic:
    """A trained network together with the input transform it was trained under."""

    mlp: Mlp
    standardizer: InputStandardizer = None

    @property
    def n_inputs(self):
        return self.mlp.n_inputs

    def transform(self, inputs):
        return self.standardizer.transform(inputs) if self.standardizer is not None else inputs

    def scores(self, inputs):
        return mlp_forward(self.mlp, self.transform(inputs))[0]

    def save(self, path):
        save_critic(path, self.mlp, self.standardizer)

    @classmethod
    def load(cls, path):
        return cls(*load_critic(path))


def _fmt(values):
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def save_critic(path, mlp, standardizer=None):
    """Write the network (and optional input transform) as a text file."""
    lines = [CRITIC_FILE_MAGIC, "layer_sizes " + " ".join(map(str, mlp.layer_sizes)), f"activation {mlp.activation}"]
    if standardizer is not None:
        lines.append(f"standardizer {standardizer.n_features_in_}")
        lines.append("mean " + _fmt(standardizer.mean_))
        lines.append("scale " + _fmt(standardizer.scale_))
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        lines.append(f"weight {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt(row) for row in w)
        lines.append(f"bias {i} {b.shape[0]}")
        lines.append(_fmt(b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_critic(path):
    """Inverse of :func:`save_critic`; returns ``(mlp, standardizer_or_None)``.

    Raises ``ValueError`` (with the file name) on any malformed content.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
        if not lines or lines[0].strip() != CRITIC_FILE_MAGIC:
            raise ValueError("missing critic header")
        it = iter(lines[1:])

        def take(prefix):
            parts = next(it).split()
            if parts[0] != prefix:
                raise ValueError(f"expected '{prefix}', found '{parts[0]}'")
            return parts[1:]

        sizes = _check_layer_sizes([int(s) for s in take("layer_sizes")])
        activation = take("activation")[0]
        standardizer = None
        head = next(it)
        if head.startswith("standardizer"):
            mean = np.array(take("mean"), dtype=float)
            scale = np.array(take("scale"), dtype=float)
            standardizer = InputStandardizer.from_arrays(mean, scale)
            head = next(it)
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            parts = head.split() if i == 0 else next(it).split()
            rows, cols = int(parts[2]), int(parts[3])
            if parts[0] != "weight" or (rows, cols) != (sizes[i + 1], sizes[i]):
                raise ValueError(f"bad weight block header {parts}")
            weights.append(np.array([next(it).split() for _ in range(rows)], dtype=float).reshape(rows, cols))
            bias_hdr = take("bias")
            if int(bias_hdr[1]) != rows:
                raise ValueError("bias length mismatch")
            biases.append(np.array(next(it).split(), dtype=float).reshape(rows))
    except (StopIteration, IndexError, ValueError, ConfigError) as exc:
        raise ValueError(f"corrupted critic file {path}: {exc}") from exc
    if not all(np.all(np.isfinite(p)) for p in (*weights, *biases)):
        raise ValueError(f"corrupted critic file {path}: non-finite parameters")
    return Mlp(sizes, weights, biases, activation), standardizer
