"""Minimal feed-forward network engine with exact input gradients.

Models are built from a fixed layer vocabulary (dense, conv2d, relu,
softplus, maxpool2x2, flatten, softmax) over float64 arrays.  Reverse mode
over the layer stack gives exact gradients of scalar losses with respect
to the input; Hessian-vector products are formed from the difference of
two such gradients.  Everything here is deterministic and pure: repeated
calls with identical arguments return bitwise-identical arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Probabilities are floored here before any log; keeps losses and gradient
# seeds finite when a class score underflows.
PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Input shape incompatible with a model or operation."""


class NonFiniteError(ValueError):
    """NaN or Inf encountered where finite values are required."""


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# Layers.  Each layer implements forward(x) -> (y, cache) and
# backward(dy, cache) -> (dx, param_grads) on batch-first arrays.
# ---------------------------------------------------------------------------


class Dense:
    kind = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"dense expects weight (out, in) and bias (out,), got {weight.shape} / {bias.shape}"
            )
        self.weight = weight
        self.bias = bias

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.weight.shape[1]:
            raise ShapeError(f"dense({self.weight.shape}) cannot take input shape {in_shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.weight, (dy.T @ x, dy.sum(axis=0))

    def param_arrays(self):
        return [self.weight, self.bias]

    def copy(self):
        return Dense(self.weight.copy(), self.bias.copy())


class Conv2d:
    """Valid cross-correlation, stride 1.  weight: (out_c, in_c, kh, kw)."""

    kind = "conv2d"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 4 or bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"conv2d expects weight (oc, ic, kh, kw) and bias (oc,), got {weight.shape} / {bias.shape}"
            )
        self.weight = weight
        self.bias = bias

    def out_shape(self, in_shape):
        oc, ic, kh, kw = self.weight.shape
        if len(in_shape) != 3 or in_shape[0] != ic:
            raise ShapeError(f"conv2d({self.weight.shape}) cannot take input shape {in_shape}")
        c, h, w = in_shape
        if h < kh or w < kw:
            raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {h}x{w}")
        return (oc, h - kh + 1, w - kw + 1)

    def forward(self, x):
        _, _, kh, kw = self.weight.shape
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))
        y = np.einsum("nchwpq,ocpq->nohw", win, self.weight) + self.bias[:, None, None]
        return y, x

    def backward(self, dy, cache):
        x = cache
        _, _, kh, kw = self.weight.shape
        dyp = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        wflip = self.weight[:, :, ::-1, ::-1]
        dx = np.einsum(
            "nohwpq,ocpq->nchw", sliding_window_view(dyp, (kh, kw), axis=(2, 3)), wflip
        )
        dw = np.einsum("nchwpq,nohw->ocpq", sliding_window_view(x, (kh, kw), axis=(2, 3)), dy)
        return dx, (dw, dy.sum(axis=(0, 2, 3)))

    def param_arrays(self):
        return [self.weight, self.bias]

    def copy(self):
        return Conv2d(self.weight.copy(), self.bias.copy())


class Relu:
    kind = "relu"

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, dy, cache):
        return dy * (cache > 0.0), None

    def param_arrays(self):
        return []

    def copy(self):
        return Relu()


class Softplus:
    kind = "softplus"

    def __init__(self, beta: float = 1.0):
        if not beta > 0:
            raise ValueError(f"softplus beta must be positive, got {beta}")
        self.beta = float(beta)

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.logaddexp(0.0, self.beta * x) / self.beta, x

    def backward(self, dy, cache):
        # sigmoid(beta*x) without overflow
        return dy * np.exp(-np.logaddexp(0.0, -self.beta * cache)), None

    def param_arrays(self):
        return []

    def copy(self):
        return Softplus(self.beta)


class MaxPool2x2:
    kind = "maxpool2x2"

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] % 2 or in_shape[2] % 2:
            raise ShapeError(f"maxpool2x2 needs (c, even, even) input, got {in_shape}")
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    @staticmethod
    def _windows(x):
        n, c, h, w = x.shape
        # (n, c, h/2, w/2, 4), window elements in row-major pixel order so the
        # argmax tie-break is "first pixel index wins".
        return (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )

    def forward(self, x):
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache):
        shape, idx = cache
        n, c, h, w = shape
        dwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = (
            dwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return dx, None

    def param_arrays(self):
        return []

    def copy(self):
        return MaxPool2x2()


class Flatten:
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), None

    def param_arrays(self):
        return []

    def copy(self):
        return Flatten()


class Softmax:
    kind = "softmax"

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"softmax needs a vector input, got {in_shape}")
        return tuple(in_shape)

    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p

    def backward(self, dy, cache):
        p = cache
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True)), None

    def param_arrays(self):
        return []

    def copy(self):
        return Softmax()


LAYER_KINDS = ("dense", "conv2d", "relu", "softplus", "maxpool2x2", "flatten", "softmax")


class Model:
    """Ordered layer stack mapping input_shape to class_count scores.

    Layers and their weights are treated as immutable after construction;
    training code operates on a private copy.  A softmax layer may appear
    at most once, and only in the final position.
    """

    def __init__(self, layers, class_count: int, input_shape):
        layers = tuple(layers)
        input_shape = tuple(int(s) for s in input_shape)
        if class_count < 1:
            raise ValueError("class_count must be positive")
        if any(s < 1 for s in input_shape):
            raise ValueError(f"invalid input_shape {input_shape}")
        for i, layer in enumerate(layers):
            if layer.kind == "softmax" and i != len(layers) - 1:
                raise ValueError("softmax may only appear as the final layer")
        shape = input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        if shape != (class_count,):
            raise ShapeError(
                f"layer stack maps {input_shape} to {shape}, expected ({class_count},)"
            )
        self.layers = layers
        self.class_count = int(class_count)
        self.input_shape = input_shape

    @property
    def has_softmax(self) -> bool:
        return bool(self.layers) and self.layers[-1].kind == "softmax"

    def copy(self) -> "Model":
        return Model([layer.copy() for layer in self.layers], self.class_count, self.input_shape)

    def __repr__(self):
        kinds = ",".join(layer.kind for layer in self.layers)
        return f"Model([{kinds}], classes={self.class_count}, input={self.input_shape})"


def _check_class(model: Model, target):
    """Validate a class index or an array of per-sample class indices."""
    t = np.asarray(target)
    if t.ndim == 0:
        t = int(t)
        if not 0 <= t < model.class_count:
            raise ValueError(f"class index {t} outside [0, {model.class_count})")
        return t
    t = t.astype(np.int64)
    if t.size and (t.min() < 0 or t.max() >= model.class_count):
        raise ValueError(f"class indices outside [0, {model.class_count})")
    return t


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    """Return (batch array, was_single).  Accepts input_shape or (n, *input_shape)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        batch, single = x[None, ...], True
    elif x.ndim == len(model.input_shape) + 1 and x.shape[1:] == model.input_shape:
        batch, single = x, False
    else:
        raise ShapeError(f"expected input shape {model.input_shape}, got {x.shape}")
    _require_finite(batch, "model input")
    return batch, single


def _forward_caches(model: Model, xb: np.ndarray):
    caches = []
    y = xb
    for layer in model.layers:
        y, cache = layer.forward(y)
        caches.append(cache)
    return y, caches


def _backward(model: Model, caches, dout: np.ndarray, want_params: bool = False):
    dx = dout
    param_grads: list = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        dx, grads = model.layers[i].backward(dx, caches[i])
        if want_params:
            param_grads[i] = grads
    return (dx, param_grads) if want_params else dx


def forward(model: Model, x) -> np.ndarray:
    """Evaluate the model.  Returns class scores of length class_count
    (softmax probabilities when the model ends in a softmax layer); for a
    batch input (n, *input_shape) returns an (n, class_count) array."""
    xb, single = _as_batch(model, x)
    out, _ = _forward_caches(model, xb)
    return out[0] if single else out


def forward_and_output_gradient(model: Model, x, make_seed):
    """Forward pass plus reverse mode from an output-space seed.

    make_seed(out) must return d(scalar loss)/d(output) with out's shape
    (out is (n, class_count)).  Returns (out, dx) with dx matching x.
    """
    xb, single = _as_batch(model, x)
    out, caches = _forward_caches(model, xb)
    dx = _backward(model, caches, np.asarray(make_seed(out), dtype=np.float64))
    return (out[0], dx[0]) if single else (out, dx)


def _pick_target(p: np.ndarray, target) -> np.ndarray:
    """Select the target column; `target` may be a scalar class or an array
    of per-sample classes matching the batch."""
    if np.ndim(target) == 0:
        return p[..., int(target)]
    if p.ndim != 2 or p.shape[0] != len(target):
        raise ShapeError(f"per-sample targets ({len(target)}) need a matching batch, got {p.shape}")
    return p[np.arange(p.shape[0]), target]


def class_log_loss(model: Model, x, target) -> float | np.ndarray:
    """Cross-entropy of the target class: -log f_target(x).

    Scores below PROB_FLOOR are floored before the log, so the result is
    always finite.  Assumes probabilistic outputs (softmax final layer).
    target may be one class index or an array with one index per sample.
    """
    target = _check_class(model, target)
    p = forward(model, x)
    pt = np.maximum(_pick_target(p, target), PROB_FLOOR)
    return -np.log(pt)


def input_gradient(model: Model, x, target) -> np.ndarray:
    """Exact gradient of -log f_target(x) with respect to the input.

    The gradient seed uses the same PROB_FLOOR clamp as class_log_loss.
    Batched inputs give per-sample gradients; target may be per-sample.
    """
    target = _check_class(model, target)

    def seed(out):
        d = np.zeros_like(out)
        if np.ndim(target) == 0:
            d[..., target] = -1.0 / np.maximum(out[..., target], PROB_FLOOR)
        else:
            rows = np.arange(out.shape[0])
            d[rows, target] = -1.0 / np.maximum(out[rows, target], PROB_FLOOR)
        return d

    _, dx = forward_and_output_gradient(model, x, seed)
    return dx


def class_score_gradient(model: Model, x, target: int) -> np.ndarray:
    """Gradient of the target log-probability (= -input_gradient)."""
    return -input_gradient(model, x, target)


def class_probability_gradient(model: Model, x, target: int) -> np.ndarray:
    """Gradient of the raw target output f_target(x) (probability when a
    softmax head is present, score otherwise)."""
    target = _check_class(model, target)

    def seed(out):
        d = np.zeros_like(out)
        d[..., target] = 1.0
        return d

    _, dx = forward_and_output_gradient(model, x, seed)
    return dx


def masked_loss(model, x, m, target: int) -> float:
    """Classification loss of the masked input: L(x, m) = -log f_target(m*x).

    `model` may be a Model or any loss surface exposing masked_loss."""
    if hasattr(model, "masked_loss"):
        return float(model.masked_loss(x, m, target))
    return float(class_log_loss(model, np.asarray(m) * np.asarray(x), target))


def masked_point_gradient(model, x, m, target: int) -> np.ndarray:
    """dL/du at u = m*x, i.e. the gradient of -log f_target at the masked
    point (the chain-rule factor before multiplying by m)."""
    if hasattr(model, "masked_point_gradient"):
        return np.asarray(model.masked_point_gradient(x, m, target), dtype=np.float64)
    return input_gradient(model, np.asarray(m) * np.asarray(x), target)


def masked_input_gradient(model, x, m, target: int) -> np.ndarray:
    """Gradient of L(x, m) with respect to x: masked_point_gradient * m."""
    if hasattr(model, "masked_input_gradient"):
        return np.asarray(model.masked_input_gradient(x, m, target), dtype=np.float64)
    return masked_point_gradient(model, x, m, target) * np.asarray(m)


def hessian_vector_fd(model, x, m, v, step: float, target: int) -> np.ndarray:
    """Finite-difference Hessian-vector product of L(., m) at x.

    Returns grad L(x + step*v, m) - grad L(x, m), an approximation of
    H @ (step*v).  v must be unit length and step positive; target is the
    class the loss conditions on.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if abs(nv - 1.0) > 1e-9:
        raise ValueError(f"direction must be unit length, |v| = {nv}")
    x = np.asarray(x, dtype=np.float64)
    return masked_input_gradient(model, x + step * v, m, target) - masked_input_gradient(
        model, x, m, target
    )


def mlp(input_shape, hidden, class_count: int, seed: int = 0, activation: str = "relu") -> Model:
    """Untrained multilayer perceptron: flatten, (dense, activation)*, dense, softmax.

    Weights are He-initialized from the given seed; activation is "relu"
    or "softplus" (optionally "softplus:<beta>").
    """
    rng = np.random.default_rng(seed)
    input_shape = tuple(int(s) for s in input_shape)
    sizes = [int(np.prod(input_shape))] + [int(h) for h in hidden] + [int(class_count)]
    if activation.startswith("softplus"):
        beta = float(activation.split(":", 1)[1]) if ":" in activation else 1.0
        act = lambda: Softplus(beta)
    elif activation == "relu":
        act = Relu
    else:
        raise ValueError(f"unknown activation {activation!r}")
    layers: list = [Flatten()]
    for i in range(len(sizes) - 1):
        w = rng.normal(0.0, np.sqrt(2.0 / sizes[i]), size=(sizes[i + 1], sizes[i]))
        layers.append(Dense(w, np.zeros(sizes[i + 1])))
        if i < len(sizes) - 2:
            layers.append(act())
    layers.append(Softmax())
    return Model(layers, class_count, input_shape)
