"""Saliency-map learning over noisy input batches, plus gradient baselines.

The optimizer (`relex`) learns a per-pixel mask m in [0,1]^d for a target
class by projected gradient descent on

    J(D, m) + lambda1 * |m|_1 + lambda2 * B(D, m)

where D is a batch of noise-perturbed copies of the input, J is the
batch-mean classification loss of the masked inputs and B the loss that
pushes the complementary region (1-m)*x away from the target class.
Gradient baselines (simgrad, smoothgrad, intgrad) and the two map
post-processing strategies are also provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .nn import PROB_FLOOR, Model, ShapeError


class ObjectiveDivergedError(RuntimeError):
    """The mask objective became non-finite during optimization."""


@dataclass(frozen=True)
class NoisyBatch:
    """Neighborhood set of an input: samples[i] = center + N(0, sigma) noise."""

    center: np.ndarray
    samples: np.ndarray
    sigma: float
    seed: int

    def __len__(self):
        return self.samples.shape[0]


def make_noisy_batch(x0, n: int, sigma_fraction: float, seed: int) -> NoisyBatch:
    """Draw n copies of x0 with i.i.d. per-pixel Gaussian noise.

    The noise scale is sigma_fraction * (max(x0) - min(x0)); a constant
    image therefore yields sigma = 0 and all samples equal to x0.
    Identical (x0, n, sigma_fraction, seed) give bitwise-identical batches.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    if sigma_fraction < 0:
        raise ValueError(f"sigma_fraction must be >= 0, got {sigma_fraction}")
    sigma = float(sigma_fraction * (x0.max() - x0.min()))
    rng = np.random.default_rng(seed)
    samples = x0 + rng.normal(0.0, 1.0, (n,) + x0.shape) * sigma
    return NoisyBatch(center=x0.copy(), samples=samples, sigma=sigma, seed=int(seed))


@dataclass
class RelExConfig:
    """Optimization constants for the mask learner (defaults are the
    reference settings: batch of 100 neighbors, sigma at 10% of the input
    range, lambda1=1e-4, lambda2=1.0, 50 epochs at learning rate 1e-3,
    uniform [0, 0.01] initialization, globally L2-normalized gradient)."""

    batch_size: int = 100
    sigma_fraction: float = 0.1
    lambda1: float = 1e-4
    lambda2: float = 1.0
    epochs: int = 50
    learning_rate: float = 0.001
    init_range: tuple[float, float] = (0.0, 0.01)
    normalize_gradient: bool = True
    seed: int = 0
    redraw_per_epoch: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        lo, hi = self.init_range
        if not (0 <= lo <= hi <= 1):
            raise ValueError(f"init_range must be within [0, 1], got {self.init_range}")


@dataclass
class RelExResult:
    """Learned mask plus the objective trace (value before each step and
    after the final one, so trace[0] is the initial objective and
    trace[-1] the final)."""

    mask: np.ndarray
    objective_trace: np.ndarray
    config: RelExConfig

    @property
    def final_objective(self) -> float:
        return float(self.objective_trace[-1])


def _check_mask(m, shape) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match input shape {tuple(shape)}")
    return m


def objective_J(model: Model, batch: NoisyBatch, m, target: int) -> float:
    """Batch-mean classification loss of the masked samples:
    -(1/|D|) sum_i log f_target(m * x_i)."""
    m = _check_mask(m, batch.center.shape)
    losses = nn.class_log_loss(model, m * batch.samples, target)
    return float(np.mean(losses))


def objective_B(model: Model, batch: NoisyBatch, m, target: int) -> float:
    """Background loss: -(1/|D|) sum_i log(1 - f_target((1-m) * x_i)).
    1 - f is floored at PROB_FLOOR before the log."""
    m = _check_mask(m, batch.center.shape)
    p = nn.forward(model, (1.0 - m) * batch.samples)
    pt = np.atleast_2d(p)[:, int(target)]
    return float(np.mean(-np.log(np.maximum(1.0 - pt, PROB_FLOOR))))


def full_objective(model: Model, batch: NoisyBatch, m, target: int, cfg: RelExConfig) -> float:
    m = np.asarray(m, dtype=np.float64)
    value = objective_J(model, batch, m, target) + cfg.lambda1 * np.abs(m).sum()
    if cfg.lambda2 != 0.0:
        value += cfg.lambda2 * objective_B(model, batch, m, target)
    return float(value)


def _derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1)[0])


def _objective_terms_and_grad(model, samples, m, target, cfg):
    """One epoch's worth of work: J, B and the full mask gradient.

    Gradients flow through m*x_i and (1-m)*x_i by the chain rule; the
    per-sample gradients are averaged (the 1/|D| factor is folded into the
    output seeds)."""
    n = samples.shape[0]
    t = int(target)

    def j_seed(out):
        d = np.zeros_like(out)
        d[:, t] = -1.0 / (n * np.maximum(out[:, t], PROB_FLOOR))
        return d

    p1, d_masked = nn.forward_and_output_gradient(model, m * samples, j_seed)
    j_val = float(np.mean(-np.log(np.maximum(p1[:, t], PROB_FLOOR))))
    grad = (d_masked * samples).sum(axis=0) + cfg.lambda1 * np.ones_like(m)
    b_val = 0.0
    if cfg.lambda2 != 0.0:

        def b_seed(out):
            d = np.zeros_like(out)
            d[:, t] = 1.0 / (n * np.maximum(1.0 - out[:, t], PROB_FLOOR))
            return d

        p2, d_bg = nn.forward_and_output_gradient(model, (1.0 - m) * samples, b_seed)
        b_val = float(np.mean(-np.log(np.maximum(1.0 - p2[:, t], PROB_FLOOR))))
        grad += cfg.lambda2 * (d_bg * (-samples)).sum(axis=0)
    objective = j_val + cfg.lambda1 * float(np.abs(m).sum()) + cfg.lambda2 * b_val
    return objective, grad


def relex(model: Model, x0, target: int, cfg: RelExConfig | None = None) -> RelExResult:
    """Learn a saliency map for (x0, target) by projected gradient descent.

    The mask starts uniform in cfg.init_range, takes cfg.epochs steps on
    the full objective (gradient globally L2-normalized first when
    cfg.normalize_gradient), and is clamped to [0, 1] after every step.
    One noisy batch is drawn up front and reused across epochs unless
    cfg.redraw_per_epoch is set.  Fully deterministic under cfg.seed.
    """
    cfg = cfg if cfg is not None else RelExConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != model.input_shape:
        raise ShapeError(f"input shape {x0.shape} does not match model {model.input_shape}")
    target = int(target)
    if not 0 <= target < model.class_count:
        raise ValueError(f"class index {target} outside [0, {model.class_count})")

    batch = make_noisy_batch(x0, cfg.batch_size, cfg.sigma_fraction, cfg.seed)
    rng = np.random.default_rng(_derived_seed(cfg.seed, 1))
    m = rng.uniform(cfg.init_range[0], cfg.init_range[1], x0.shape)

    trace = np.empty(cfg.epochs + 1)
    samples = batch.samples
    for epoch in range(cfg.epochs):
        if cfg.redraw_per_epoch and epoch > 0:
            samples = make_noisy_batch(
                x0, cfg.batch_size, cfg.sigma_fraction, _derived_seed(cfg.seed, 1000 + epoch)
            ).samples
        objective, grad = _objective_terms_and_grad(model, samples, m, target, cfg)
        if not np.isfinite(objective):
            raise ObjectiveDivergedError(f"objective non-finite at epoch {epoch}")
        trace[epoch] = objective
        if cfg.normalize_gradient:
            norm = float(np.linalg.norm(grad))
            if norm > 0.0:
                grad = grad / norm
        m = np.clip(m - cfg.learning_rate * grad, 0.0, 1.0)
    trace[cfg.epochs] = full_objective(model, batch, m, target, cfg)
    if not np.isfinite(trace[cfg.epochs]):
        raise ObjectiveDivergedError(f"objective non-finite at epoch {cfg.epochs}")
    return RelExResult(mask=m, objective_trace=trace, config=cfg)


# ---------------------------------------------------------------------------
# Gradient baselines.  All return post-processed maps in [0, 1].
# ---------------------------------------------------------------------------


def postprocess_abs_percentile(raw) -> np.ndarray:
    """Absolute value, channel mean for (c, h, w) input, then division by
    the 99th-percentile value (nearest lower data value) with clamping to
    [0, 1].  An all-zero map stays all-zero."""
    a = np.abs(np.asarray(raw, dtype=np.float64))
    if a.ndim == 3:
        a = a.mean(axis=0)
    denom = float(np.percentile(a, 99, method="lower"))
    if denom <= 0.0:
        return np.zeros_like(a)
    return np.clip(a / denom, 0.0, 1.0)


def postprocess_minmax(raw) -> np.ndarray:
    """Affine rescale of a single-channel map to [0, 1]; a constant map
    becomes all zeros by convention."""
    g = np.asarray(raw, dtype=np.float64)
    lo, hi = float(g.min()), float(g.max())
    if hi == lo:
        return np.zeros_like(g)
    return (g - lo) / (hi - lo)


def simgrad(model: Model, x0, target: int) -> np.ndarray:
    """Vanilla gradient map: gradient of the target log-probability at x0,
    through postprocess_abs_percentile."""
    return postprocess_abs_percentile(nn.class_score_gradient(model, x0, target))


def smoothgrad(
    model: Model, x0, target: int, n: int = 50, sigma_fraction: float = 0.1, seed: int = 0
) -> np.ndarray:
    """Mean vanilla gradient over n noisy copies of x0 (same noise law as
    make_noisy_batch), through postprocess_abs_percentile.  Exactly equal
    to simgrad when the noise scale is zero."""
    batch = make_noisy_batch(x0, n, sigma_fraction, seed)
    if batch.sigma == 0.0:
        # every sample is x0; averaging would only add rounding noise
        return simgrad(model, x0, target)
    grads = nn.class_score_gradient(model, batch.samples, target)
    return postprocess_abs_percentile(grads.mean(axis=0))


def intgrad(model: Model, x0, target: int, steps: int = 32, baseline=None) -> np.ndarray:
    """Integrated gradients of the target output along the straight path
    from the baseline (default all zeros), midpoint rule with `steps`
    points, through postprocess_abs_percentile."""
    x0 = np.asarray(x0, dtype=np.float64)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    baseline = np.zeros_like(x0) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if baseline.shape != x0.shape:
        raise ShapeError(f"baseline shape {baseline.shape} does not match input {x0.shape}")
    return postprocess_abs_percentile(intgrad_raw(model, x0, target, steps, baseline))


def intgrad_raw(model: Model, x0, target: int, steps: int, baseline) -> np.ndarray:
    """Raw (un-normalized) integrated-gradients attributions; their sum
    approximates f_target(x0) - f_target(baseline)."""
    diff = x0 - baseline
    ts = (np.arange(steps) + 0.5) / steps
    points = baseline[None, ...] + ts.reshape((-1,) + (1,) * x0.ndim) * diff[None, ...]
    grads = nn.class_probability_gradient(model, points, target)
    return diff * grads.mean(axis=0)


EXPLAINER_NAMES = ("simgrad", "smoothgrad", "intgrad")


def explainer_map(model: Model, x0, target: int, method: str, **params) -> np.ndarray:
    """Dispatch a named gradient explainer (simgrad | smoothgrad | intgrad)."""
    if method == "simgrad":
        return simgrad(model, x0, target)
    if method == "smoothgrad":
        return smoothgrad(
            model,
            x0,
            target,
            n=params.get("n", 50),
            sigma_fraction=params.get("sigma_fraction", 0.1),
            seed=params.get("seed", 0),
        )
    if method == "intgrad":
        return intgrad(
            model, x0, target, steps=params.get("steps", 32), baseline=params.get("baseline")
        )
    raise ValueError(f"unknown explainer {method!r}; expected one of {EXPLAINER_NAMES}")


def _abs_percentile_rows(raws: np.ndarray) -> np.ndarray:
    """Vectorized postprocess_abs_percentile over a batch of raw maps."""
    a = np.abs(raws)
    if a.ndim == 4:  # (n, c, h, w) -> channel mean
        a = a.mean(axis=1)
    flat = a.reshape(a.shape[0], -1)
    denom = np.percentile(flat, 99, axis=1, method="lower")
    out = np.zeros_like(flat)
    ok = denom > 0
    out[ok] = np.clip(flat[ok] / denom[ok, None], 0.0, 1.0)
    return out.reshape(a.shape)


def explainer_maps_batch(model: Model, xs, target: int, method: str, **params) -> np.ndarray:
    """explainer_map over a batch of inputs (n, *input_shape), vectorized.

    Used by the saliency-fooling attack's finite-difference loop.  For
    simgrad and intgrad the rows match the single-input functions up to
    floating-point reduction order; smoothgrad draws all rows' noise from
    one seeded stream, so rows differ from per-input calls but are just as
    deterministic.
    """
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.shape[0]
    if method == "simgrad":
        return _abs_percentile_rows(nn.class_score_gradient(model, xs, target))
    if method == "smoothgrad":
        n_noise = params.get("n", 50)
        sigma_fraction = params.get("sigma_fraction", 0.1)
        seed = params.get("seed", 0)
        spans = xs.reshape(n, -1).max(axis=1) - xs.reshape(n, -1).min(axis=1)
        sigmas = sigma_fraction * spans
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, 1.0, (n, n_noise) + xs.shape[1:])
        pts = xs[:, None, ...] + noise * sigmas.reshape((-1, 1) + (1,) * (xs.ndim - 1))
        grads = nn.class_score_gradient(model, pts.reshape((-1,) + xs.shape[1:]), target)
        return _abs_percentile_rows(grads.reshape(pts.shape).mean(axis=1))
    if method == "intgrad":
        steps = params.get("steps", 32)
        baseline = params.get("baseline")
        base = (
            np.zeros_like(xs[0]) if baseline is None else np.asarray(baseline, dtype=np.float64)
        )
        diff = xs - base[None, ...]
        ts = (np.arange(steps) + 0.5) / steps
        pts = base[None, None, ...] + ts.reshape((1, -1) + (1,) * (xs.ndim - 1)) * diff[:, None, ...]
        grads = nn.class_probability_gradient(model, pts.reshape((-1,) + xs.shape[1:]), target)
        raw = diff * grads.reshape(pts.shape).mean(axis=1)
        return _abs_percentile_rows(raw)
    raise ValueError(f"unknown explainer {method!r}; expected one of {EXPLAINER_NAMES}")
