"""Small softmax classifiers trained with hand-written mini-batch SGD.

Parameters live in one flat float64 vector with the canonical layout

    layer1 weights (input_dim x width, row-major), layer1 bias,
    layer2 weights (hidden_dim x num_classes, row-major), layer2 bias

where width is hidden_dim for an MLP and num_classes for logistic
regression (hidden_dim == 0, no second layer). The hidden layer uses ReLU.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dim: int
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_dim < 0:
            raise ValueError("hidden_dim must be >= 0")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def shapes(self):
        """(weight shape, bias shape) per layer, in flat-vector order."""
        if self.hidden_dim == 0:
            return [((self.input_dim, self.num_classes), (self.num_classes,))]
        return [
            ((self.input_dim, self.hidden_dim), (self.hidden_dim,)),
            ((self.hidden_dim, self.num_classes), (self.num_classes,)),
        ]

    @property
    def num_params(self):
        return sum(w[0] * w[1] + b[0] for w, b in self.shapes)


@dataclass(frozen=True)
class SGDConfig:
    learning_rate: float = 0.25
    lr_decay: float = 0.977
    batch_size: int = 16
    local_epochs: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")

    def round_lr(self, t):
        """Learning rate for 1-based round t."""
        return self.learning_rate * self.lr_decay ** (t - 1)


class ModelState:
    """A ModelSpec plus a read-only flat parameter vector."""

    __slots__ = ("spec", "params")

    def __init__(self, spec, params):
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.size != spec.num_params:
            raise ShapeMismatch(f"expected {spec.num_params} params, got {params.size}")
        params.flags.writeable = False
        self.spec = spec
        self.params = params

    def with_params(self, params):
        return ModelState(self.spec, params)

    def __add__(self, delta):
        return ModelState(self.spec, self.params + delta)

    def __repr__(self):
        return f"ModelState({self.spec}, D={self.params.size})"


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: dict
    loss: float

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            accuracy=d["accuracy"],
            per_class_accuracy={int(k): v for k, v in d["per_class_accuracy"].items()},
            loss=d["loss"],
        )


def unflatten(spec, params):
    """Split a flat vector into [(W, b), ...] views following the canonical layout."""
    layers = []
    pos = 0
    for wshape, bshape in spec.shapes:
        nw = wshape[0] * wshape[1]
        W = params[pos:pos + nw].reshape(wshape)
        pos += nw
        b = params[pos:pos + bshape[0]]
        pos += bshape[0]
        layers.append((W, b))
    return layers


def flatten(layers):
    return np.concatenate([np.concatenate([W.reshape(-1), b.reshape(-1)]) for W, b in layers])


def init_model(spec, seed):
    """Glorot-uniform weights, zero biases; deterministic in (spec, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    layers = []
    for (fan_in, fan_out), bshape in spec.shapes:
        s = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(bshape)))
    return ModelState(spec, flatten(layers))


def _check_shard(spec, shard):
    X = np.asarray(shard.features)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"features shape {X.shape} does not match input_dim {spec.input_dim}")
    if len(shard.labels) != X.shape[0]:
        raise ShapeMismatch("features and labels disagree on sample count")
    if X.shape[0] == 0:
        raise ShapeMismatch("empty shard")


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(spec, params, X):
    """Class probabilities for the rows of X."""
    layers = unflatten(spec, params)
    if spec.hidden_dim == 0:
        W, b = layers[0]
        return _softmax(X @ W + b)
    (W1, b1), (W2, b2) = layers
    h = np.maximum(X @ W1 + b1, 0.0)
    return _softmax(h @ W2 + b2)


def loss_and_grad(spec, params, X, y):
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. params."""
    n = X.shape[0]
    layers = unflatten(spec, params)
    if spec.hidden_dim == 0:
        W, b = layers[0]
        p = _softmax(X @ W + b)
        loss = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300)))
        d = p
        d[np.arange(n), y] -= 1.0
        d /= n
        return loss, flatten([(X.T @ d, d.sum(axis=0))])
    (W1, b1), (W2, b2) = layers
    a = X @ W1 + b1
    h = np.maximum(a, 0.0)
    p = _softmax(h @ W2 + b2)
    loss = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300)))
    d2 = p
    d2[np.arange(n), y] -= 1.0
    d2 /= n
    dh = (d2 @ W2.T) * (a > 0)
    return loss, flatten([(X.T @ dh, dh.sum(axis=0)), (h.T @ d2, d2.sum(axis=0))])


def local_train(m, shard, cfg, round_lr, rng_seed):
    """Run cfg.local_epochs of mini-batch SGD and return the model delta.

    The delta is w_after - w_before, so adding it to the parameters applies
    the training step. ``m`` is not modified.
    """
    _check_shard(m.spec, shard)
    X = np.asarray(shard.features, dtype=np.float64)
    y = np.asarray(shard.labels, dtype=np.int64)
    w = m.params.copy()
    if round_lr == 0:
        return np.zeros_like(w)
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 0x7A1]))
    n = X.shape[0]
    B = cfg.batch_size
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, B):
            idx = order[start:start + B]
            _, g = loss_and_grad(m.spec, w, X[idx], y[idx])
            w -= round_lr * g
    return w - m.params


def predict(m, X):
    return np.argmax(forward(m.spec, m.params, np.asarray(X, dtype=np.float64)), axis=1)


def evaluate(m, test, batch=4096):
    _check_shard(m.spec, test)
    X = np.asarray(test.features)
    y = np.asarray(test.labels, dtype=np.int64)
    preds = np.empty(y.size, dtype=np.int64)
    nll = 0.0
    for s in range(0, y.size, batch):
        p = forward(m.spec, m.params, np.asarray(X[s:s + batch], dtype=np.float64))
        preds[s:s + batch] = p.argmax(axis=1)
        nll += -np.sum(np.log(np.maximum(p[np.arange(p.shape[0]), y[s:s + batch]], 1e-300)))
    correct = preds == y
    per_class = {int(c): float(correct[y == c].mean()) for c in np.unique(y)}
    return EvalReport(accuracy=float(correct.mean()), per_class_accuracy=per_class,
                      loss=float(nll / y.size))


def _relu_pattern(spec, params, X):
    if spec.hidden_dim == 0:
        return None
    (W1, b1), _ = unflatten(spec, params)
    return (X @ W1 + b1) > 0


def numeric_gradient_check(m, shard, epsilon=1e-5, analytic=None, floor=1e-6):
    """Max relative error between backprop and central finite differences.

    Relative error per coordinate is |a - n| / max(|a| + |n|, floor); the
    floor keeps coordinates whose true gradient is ~0 from reporting pure
    rounding noise as error. A coordinate whose +-epsilon probe flips a ReLU
    on or off straddles a kink where the loss has no derivative, so it is
    left out. ``analytic`` overrides the backprop gradient, which is how
    fault injection is tested.
    """
    _check_shard(m.spec, shard)
    X = np.asarray(shard.features, dtype=np.float64)
    y = np.asarray(shard.labels, dtype=np.int64)
    w = m.params.copy()
    if analytic is None:
        _, analytic = loss_and_grad(m.spec, w, X, y)
    analytic = np.asarray(analytic, dtype=np.float64)
    base = _relu_pattern(m.spec, w, X)
    numeric = np.empty_like(w)
    smooth = np.ones(w.size, dtype=bool)
    for k in range(w.size):
        old = w[k]
        w[k] = old + epsilon
        lp, _ = loss_and_grad(m.spec, w, X, y)
        if base is not None and not np.array_equal(_relu_pattern(m.spec, w, X), base):
            smooth[k] = False
        w[k] = old - epsilon
        lm, _ = loss_and_grad(m.spec, w, X, y)
        if base is not None and not np.array_equal(_relu_pattern(m.spec, w, X), base):
            smooth[k] = False
        w[k] = old
        numeric[k] = (lp - lm) / (2 * epsilon)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(rel[smooth].max()) if smooth.any() else 0.0
