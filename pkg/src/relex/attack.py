"""White-box adversarial attacks.

`pgd_untargeted` is the classic L-infinity projected sign-gradient ascent
on the target-class loss.  `topk_fooling` perturbs an input so that a
gradient explainer's saliency mass on the clean map's k most important
pixels drops, while the predicted class is preserved; its objective
gradient is estimated by central finite differences of the explainer map
(feasible at desk-scale input sizes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import explain, nn
from .nn import Model, Relu, ShapeError, Softplus


@dataclass
class PGDConfig:
    epsilon: float
    step_size: float = 0.01
    iterations: int = 40
    random_start: bool = True
    seed: int = 0
    clamp_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        lo, hi = self.clamp_range
        if not lo < hi:
            raise ValueError(f"invalid clamp_range {self.clamp_range}")


def _check_in_range(x: np.ndarray, lo: float, hi: float) -> None:
    if x.min() < lo or x.max() > hi:
        raise ValueError(f"input outside clamp_range [{lo}, {hi}]")


def pgd_untargeted(model: Model, x0, target, cfg: PGDConfig) -> np.ndarray:
    """Untargeted PGD: ascend the target-class loss by sign-gradient steps
    with projection onto the L-infinity epsilon-ball and the valid range.

    x0 may be one input or a batch; target a class index or one per
    sample.  The returned adversary satisfies |x_adv - x0|_inf <= epsilon
    exactly and lies inside cfg.clamp_range.  Deterministic under
    cfg.seed; the attack may fail to flip the label (caller inspects).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.shape == model.input_shape
    xb = x0[None, ...] if single else x0
    if xb.shape[1:] != model.input_shape:
        raise ShapeError(f"expected input shape {model.input_shape}, got {x0.shape}")
    lo, hi = cfg.clamp_range
    _check_in_range(xb, lo, hi)

    rng = np.random.default_rng(cfg.seed)
    if cfg.random_start:
        x = xb + rng.uniform(-cfg.epsilon, cfg.epsilon, xb.shape)
        x = np.clip(xb + np.clip(x - xb, -cfg.epsilon, cfg.epsilon), lo, hi)
    else:
        x = xb.copy()
    for _ in range(cfg.iterations):
        g = nn.input_gradient(model, x, target)
        x = x + cfg.step_size * np.sign(g)
        x = np.clip(xb + np.clip(x - xb, -cfg.epsilon, cfg.epsilon), lo, hi)
    return x[0] if single else x


def soften(model: Model, beta: float = 10.0) -> Model:
    """Copy of the model with every ReLU replaced by softplus(beta); used
    as a smooth surrogate when estimating attack gradients."""
    layers = [Softplus(beta) if isinstance(l, Relu) else l.copy() for l in model.layers]
    return Model(layers, model.class_count, model.input_shape)


@dataclass
class TopKFoolConfig:
    k: int = 1000
    iterations: int = 300
    epsilon: float = 0.1
    step_size: float = 0.01
    fd_step: float = 1e-3
    seed: int = 0
    clamp_range: tuple[float, float] = (0.0, 1.0)
    surrogate_beta: float = 10.0
    explainer_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.epsilon < 0 or self.step_size <= 0 or self.fd_step <= 0:
            raise ValueError("epsilon must be >= 0 and step sizes positive")


@dataclass
class TopKFoolResult:
    x_adv: np.ndarray
    #: predicted class of x0, preserved by construction in x_adv
    predicted_class: int
    #: saliency mass over the clean top-k set, before and after
    mass_before: float
    mass_after: float
    accepted_steps: int
    rejected_steps: int
    #: False when the attack had nothing to do (zero map or epsilon 0)
    changed: bool
    note: str = ""


def _topk_indices(flat_map: np.ndarray, k: int) -> np.ndarray:
    # descending by value, ties by pixel index ascending (stable sort)
    return np.argsort(-flat_map, kind="stable")[:k]


def topk_fooling(model: Model, explainer: str, x0, cfg: TopKFoolConfig) -> TopKFoolResult:
    """Reduce the explainer's saliency mass on the clean map's top-k pixels
    without flipping the predicted class.

    Steps move against a finite-difference estimate of the mass gradient
    (central differences per input coordinate, evaluated on a softplus
    surrogate of the model); candidates that would change the class are
    rejected and the step size halved.  The clean top-k set, the class
    check and the reported masses all use the real model.
    """
    if explainer not in explain.EXPLAINER_NAMES:
        raise ValueError(f"explainer must be one of {explain.EXPLAINER_NAMES}, got {explainer!r}")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != model.input_shape:
        raise ShapeError(f"expected input shape {model.input_shape}, got {x0.shape}")
    d = x0.size
    lo, hi = cfg.clamp_range
    _check_in_range(x0, lo, hi)

    params = dict(cfg.explainer_params)
    params.setdefault("seed", cfg.seed)
    c0 = int(np.argmax(nn.forward(model, x0)))
    clean_map = explain.explainer_map(model, x0, c0, explainer, **params)
    clean_flat = clean_map.reshape(-1)
    if cfg.k > clean_flat.size:
        raise ValueError(f"k={cfg.k} exceeds saliency-map dimension {clean_flat.size}")
    top = _topk_indices(clean_flat, cfg.k)
    mass_before = float(clean_flat[top].sum())
    if not np.any(clean_flat > 0):
        return TopKFoolResult(
            x0.copy(), c0, 0.0, 0.0, 0, 0, changed=False, note="clean saliency map is all zero"
        )
    if cfg.epsilon == 0.0:
        return TopKFoolResult(
            x0.copy(), c0, mass_before, mass_before, 0, 0, changed=False, note="zero budget"
        )

    surrogate = soften(model, cfg.surrogate_beta)

    def mass(maps: np.ndarray) -> np.ndarray:
        return maps.reshape(maps.shape[0], -1)[:, top].sum(axis=1)

    eye = np.eye(d).reshape((d,) + x0.shape)
    x = x0.copy()
    step = cfg.step_size
    accepted = rejected = 0
    for _ in range(cfg.iterations):
        probes = np.concatenate([x[None] + cfg.fd_step * eye, x[None] - cfg.fd_step * eye])
        maps = explain.explainer_maps_batch(surrogate, probes, c0, explainer, **params)
        obj = mass(maps)
        grad = ((obj[:d] - obj[d:]) / (2.0 * cfg.fd_step)).reshape(x0.shape)
        candidate = x - step * np.sign(grad)
        candidate = np.clip(x0 + np.clip(candidate - x0, -cfg.epsilon, cfg.epsilon), lo, hi)
        if int(np.argmax(nn.forward(model, candidate))) == c0:
            x = candidate
            accepted += 1
        else:
            rejected += 1
            step *= 0.5
            if step < 1e-12:
                break

    adv_map = explain.explainer_map(model, x, c0, explainer, **params)
    mass_after = float(adv_map.reshape(-1)[top].sum())
    return TopKFoolResult(
        x_adv=x,
        predicted_class=c0,
        mass_before=mass_before,
        mass_after=mass_after,
        accepted_steps=accepted,
        rejected_steps=rejected,
        changed=bool(accepted > 0),
        note="" if accepted else "no admissible perturbation found",
    )
