"""Numerical verification of the local-smoothness analysis.

Checks the quadratic approximation of the masked-classification loss, the
brute-force robustness radius, and the two consistency bounds: the label
bound (a lower bound on the admissible perturbation size plus an upper
bound on the quadratic-form loss increase, both in terms of |m|_1 and the
gradient profile g) and the saliency bound (the gradient gap between a
neighbor and the input is at most |m|_1 times the gap of g).

Writing g(x) for the gradient of log f at the masked point m*x, the key
exact identities used throughout are grad_x L(x,m) = -g(x) * m and, for
the finite-difference Hessian, H gamma = (-g(x0+av) + g(x0)) * m.  The
loss-bound check is therefore pure algebra (Cauchy-Schwarz plus
|a*m| <= |a| |m|_1) and must hold on every instance with c >= 0.

Checks accept a real model or any duck-typed loss surface exposing
masked_loss / masked_point_gradient / masked_input_gradient, which is how
the exact quadratic surrogates are driven through the same code path.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, fields

import numpy as np

from . import nn


@dataclass
class QuadraticLossSurface:
    """Exactly quadratic loss in the masked point u = m * x:
    L(x, m) = c0 + b.u + u.A.u/2 with known Hessian A.

    Shares the structure of the real classification loss (the gradient with
    respect to x is the masked-point gradient times m), so the bound checks
    run through the same code path in a regime where the quadratic model is
    exact.  Use m = 1 to model a plain quadratic in x.
    """

    A: np.ndarray
    b: np.ndarray
    c0: float = 0.0

    def masked_loss(self, x, m, target) -> float:
        u = (np.asarray(m, dtype=np.float64) * np.asarray(x, dtype=np.float64)).reshape(-1)
        return float(self.c0 + self.b @ u + 0.5 * u @ self.A @ u)

    def masked_point_gradient(self, x, m, target) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        u = (np.asarray(m, dtype=np.float64) * x).reshape(-1)
        return (self.b + self.A @ u).reshape(x.shape)

    def masked_input_gradient(self, x, m, target) -> np.ndarray:
        return self.masked_point_gradient(x, m, target) * np.asarray(m, dtype=np.float64)


def masked_norm_gap(a, m) -> float:
    """Slack of the proof-step inequality |a * m|_2 <= |a|_2 * |m|_1.

    Returns rhs - lhs, which is non-negative for every real a and m
    (|m|_inf <= |m|_1); no mask-range assumption is needed.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    m = np.asarray(m, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(a) * np.abs(m).sum() - np.linalg.norm(a * m))


def quadratic_residual(model, x0, m, gamma, target: int) -> float:
    """Relative residual of the quadratic loss model at x0 + gamma.

    |L(x0+g) - [L(x0) + grad.g + g.Hg/2]| / max(|L(x0+g)|, tiny), with the
    Hessian-vector product taken from the finite-difference rule along
    gamma's direction.  Zero for gamma = 0 and for exactly quadratic
    surfaces.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    alpha = float(np.linalg.norm(gamma))
    l0 = nn.masked_loss(model, x0, m, target)
    l1 = nn.masked_loss(model, x0 + gamma, m, target)
    if alpha == 0.0:
        return 0.0
    grad0 = nn.masked_input_gradient(model, x0, m, target)
    hg = nn.hessian_vector_fd(model, x0, m, gamma / alpha, alpha, target)
    model_value = l0 + float(grad0.reshape(-1) @ gamma.reshape(-1)) + 0.5 * float(
        gamma.reshape(-1) @ hg.reshape(-1)
    )
    return abs(l1 - model_value) / max(abs(l1), 1e-300)


@dataclass
class RadiusResult:
    radius: float
    #: False when no sampled direction reached the threshold within the grid
    violation_found: bool


def robustness_radius_bruteforce(
    model, x0, m, tau: float, target: int, radius_grid, directions: int = 256, seed: int = 0
) -> RadiusResult:
    """Smallest grid radius at which the masked loss reaches tau in any of
    `directions` random unit directions (a certified upper bound on the
    true robustness radius over the sampled set).

    Directions are Gaussian draws normalized to the unit sphere,
    deterministic under seed.  When no sampled point violates the
    threshold the grid maximum is returned with violation_found False.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    grid = np.sort(np.asarray(radius_grid, dtype=np.float64))
    if grid.size == 0 or grid[0] < 0:
        raise ValueError("radius_grid must be non-empty and non-negative")
    l0 = nn.masked_loss(model, x0, m, target)
    if l0 > tau:
        raise ValueError(f"L(x0, m) = {l0} already exceeds tau = {tau}")
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, 1.0, (directions, x0.size))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v = v.reshape((directions,) + x0.shape)
    for r in grid:
        pts = x0[None, ...] + r * v
        losses = np.array([nn.masked_loss(model, p, m, target) for p in pts])
        if np.any(losses >= tau):
            return RadiusResult(radius=float(r), violation_found=True)
    return RadiusResult(radius=float(grid[-1]), violation_found=False)


def default_tau(class_count: int) -> float:
    """Uniform-confusion classification threshold -log(1/|C|)."""
    return float(np.log(class_count))


@dataclass
class BoundReport:
    """One verified instance of a consistency bound.

    lhs/rhs/slack describe the main inequality of the check (the
    quadratic-form loss bound for label consistency, the gradient-gap
    bound for saliency consistency); degenerate instances (c < 0 or a
    zero-mass mask where the perturbation bound diverges) are flagged and
    carry NaN bounds.
    """

    instance_id: str
    check: str
    alpha: float
    tau: float
    c: float
    mask_l1: float
    g0_norm: float
    gdiff_norm: float
    lhs: float
    rhs: float
    slack: float
    holds: bool
    alpha_lower_bound: float
    alpha_bound_holds: bool
    constraint_active: bool
    quad_model_value: float
    quadratic_model_error: float
    degenerate: bool
    direction_digest: str


def _digest_direction(v: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(v, dtype="<f8").tobytes()).hexdigest()[:16]


def theorem1_check(
    model, x0, m, alpha: float, v, tau: float, target: int, instance_id: str = "", tol: float = 1e-9
) -> BoundReport:
    """Label-consistency bounds at gamma = alpha * v.

    Records (a) whether alpha >= c/|m|_1 * 2/(|dg| + 2|g0|) whenever the
    quadratic-form constraint grad.gamma + gamma.H gamma/2 >= c is active,
    and (b) whether that quadratic form is at most
    alpha |m|_1 (|dg|/2 + |g0|); (b) holds algebraically on every
    non-degenerate instance.  Instances with c < 0, or |m|_1 = 0 where the
    perturbation bound diverges, are flagged degenerate.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if abs(nv - 1.0) > 1e-9:
        raise ValueError(f"direction must be unit length, |v| = {nv}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")

    l0 = nn.masked_loss(model, x0, m, target)
    c = float(tau - l0)
    mask_l1 = float(np.abs(m).sum())
    gamma = alpha * v
    g0 = -nn.masked_point_gradient(model, x0, m, target)
    g1 = -nn.masked_point_gradient(model, x0 + gamma, m, target)
    gdiff = -g1 + g0
    g0_norm = float(np.linalg.norm(g0))
    gdiff_norm = float(np.linalg.norm(gdiff))

    grad_l0 = nn.masked_input_gradient(model, x0, m, target)
    h_gamma = nn.masked_input_gradient(model, x0 + gamma, m, target) - grad_l0
    quad_form = float(grad_l0.reshape(-1) @ gamma.reshape(-1)) + 0.5 * float(
        gamma.reshape(-1) @ h_gamma.reshape(-1)
    )
    rhs = alpha * mask_l1 * (0.5 * gdiff_norm + g0_norm)
    quad_model_value = l0 + quad_form
    qerr = quadratic_residual(model, x0, m, gamma, target)

    degenerate = c < 0 or mask_l1 == 0.0
    if degenerate:
        alpha_lower = float("nan")
        constraint_active = False
        alpha_holds = False
    else:
        denom = mask_l1 * (gdiff_norm + 2.0 * g0_norm)
        alpha_lower = float("inf") if denom == 0.0 else 2.0 * c / denom
        constraint_active = quad_form >= c
        alpha_holds = (not constraint_active) or alpha >= alpha_lower - tol

    return BoundReport(
        instance_id=instance_id,
        check="label_consistency",
        alpha=float(alpha),
        tau=float(tau),
        c=c,
        mask_l1=mask_l1,
        g0_norm=g0_norm,
        gdiff_norm=gdiff_norm,
        lhs=quad_form,
        rhs=rhs,
        slack=rhs - quad_form,
        holds=bool(quad_form <= rhs + tol),
        alpha_lower_bound=alpha_lower,
        alpha_bound_holds=bool(alpha_holds),
        constraint_active=bool(constraint_active),
        quad_model_value=quad_model_value,
        quadratic_model_error=qerr,
        degenerate=bool(degenerate),
        direction_digest=_digest_direction(v),
    )


def theorem2_check(model, x0, xi, m, target: int, instance_id: str = "", tol: float = 1e-12) -> BoundReport:
    """Saliency-consistency bound for a neighbor xi of x0.

    lhs = |grad L(xi, m) - grad L(x0, m)| computed exactly; rhs =
    |m|_1 * |-g(xi) + g(x0)| with alpha*v = xi - x0.  Because
    grad L(x, m) = -g(x) * m exactly, the inequality reduces to
    |dg * m| <= |m|_1 |dg| and holds unconditionally.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    gamma = xi - x0
    alpha = float(np.linalg.norm(gamma))

    grad0 = nn.masked_input_gradient(model, x0, m, target)
    grad1 = nn.masked_input_gradient(model, xi, m, target)
    lhs = float(np.linalg.norm(grad1 - grad0))
    g0 = -nn.masked_point_gradient(model, x0, m, target)
    g1 = -nn.masked_point_gradient(model, xi, m, target)
    gdiff_norm = float(np.linalg.norm(-g1 + g0))
    mask_l1 = float(np.abs(m).sum())
    rhs = mask_l1 * gdiff_norm
    qerr = quadratic_residual(model, x0, m, gamma, target) if alpha > 0 else 0.0

    return BoundReport(
        instance_id=instance_id,
        check="saliency_consistency",
        alpha=alpha,
        tau=float("nan"),
        c=float("nan"),
        mask_l1=mask_l1,
        g0_norm=float(np.linalg.norm(g0)),
        gdiff_norm=gdiff_norm,
        lhs=lhs,
        rhs=rhs,
        slack=rhs - lhs,
        holds=bool(lhs <= rhs + tol),
        alpha_lower_bound=float("nan"),
        alpha_bound_holds=True,
        constraint_active=False,
        quad_model_value=float("nan"),
        quadratic_model_error=qerr,
        degenerate=False,
        direction_digest=_digest_direction(gamma),
    )


BOUND_COLUMNS = tuple(f.name for f in fields(BoundReport))


def write_bound_reports(reports: list[BoundReport], path, config_digest: str = "") -> None:
    """CSV with one row per instance plus a summary row counting bound
    violations and degenerate (filtered) instances."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest={config_digest}\n")
        writer = csv.writer(fh)
        writer.writerow(BOUND_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    getattr(r, name)
                    if isinstance(getattr(r, name), (str, bool))
                    else repr(float(getattr(r, name)))
                    for name in BOUND_COLUMNS
                ]
            )
        violations = sum(1 for r in reports if not r.degenerate and not r.holds)
        degenerate = sum(1 for r in reports if r.degenerate)
        writer.writerow(["summary", f"violations={violations}", f"degenerate={degenerate}"])
