"""Desk-scale classifier training, plain and PGD-adversarial."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .attack import PGDConfig, pgd_untargeted
from .nn import PROB_FLOOR, Dense, Conv2d, Model


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0
    #: replace every minibatch by PGD adversaries before the update
    adversarial: bool = False
    adv_epsilon: float = 0.1
    adv_iterations: int = 10
    adv_step_size: float | None = None  # None -> 2.5 * eps / iterations

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainResult:
    model: Model
    train_accuracy: float
    loss_trace: np.ndarray  # minibatch loss per step


def accuracy(model: Model, images, labels) -> float:
    """Fraction of inputs whose top class matches the label."""
    p = nn.forward(model, np.asarray(images, dtype=np.float64))
    return float(np.mean(np.argmax(p, axis=1) == np.asarray(labels)))


def train_classifier(dataset, arch: Model, cfg: TrainConfig | None = None) -> TrainResult:
    """Minibatch SGD on the cross-entropy; returns a trained copy of arch.

    Deterministic under cfg.seed.  With cfg.adversarial, each minibatch is
    replaced by untargeted PGD adversaries (crafted against the current
    weights) before the update.  A non-finite minibatch loss aborts with
    the step index.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("dataset is empty")
    if labels.min() < 0 or labels.max() >= arch.class_count:
        raise ValueError("dataset labels out of range for the architecture")

    model = arch.copy()
    rng = np.random.default_rng(cfg.seed)
    adv_step = (
        cfg.adv_step_size
        if cfg.adv_step_size is not None
        else 2.5 * cfg.adv_epsilon / max(cfg.adv_iterations, 1)
    )
    losses = np.empty(cfg.steps)
    value_range = tuple(getattr(dataset, "value_range", (0.0, 1.0)))

    for step in range(cfg.steps):
        idx = rng.integers(0, len(images), cfg.batch_size)
        xb, yb = images[idx], labels[idx]
        if cfg.adversarial:
            pgd = PGDConfig(
                epsilon=cfg.adv_epsilon,
                step_size=max(adv_step, 1e-6),
                iterations=cfg.adv_iterations,
                random_start=True,
                seed=int(np.random.SeedSequence([cfg.seed, step]).generate_state(1)[0]),
                clamp_range=value_range,
            )
            xb = pgd_untargeted(model, xb, yb, pgd)
        out, caches = nn._forward_caches(model, xb)
        rows = np.arange(len(yb))
        pt = np.maximum(out[rows, yb], PROB_FLOOR)
        loss = float(np.mean(-np.log(pt)))
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss non-finite at step {step}")
        losses[step] = loss
        seed_grad = np.zeros_like(out)
        seed_grad[rows, yb] = -1.0 / (len(yb) * pt)
        _, param_grads = nn._backward(model, caches, seed_grad, want_params=True)
        for layer, grads in zip(model.layers, param_grads):
            if grads is None:
                continue
            if isinstance(layer, (Dense, Conv2d)):
                layer.weight -= cfg.learning_rate * grads[0]
                layer.bias -= cfg.learning_rate * grads[1]
    return TrainResult(model=model, train_accuracy=accuracy(model, images, labels), loss_trace=losses)
