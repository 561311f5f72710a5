"""Bound-check tests: quadratic residuals, brute-force radius, and the two
consistency theorems on real nets and exact quadratic surrogates."""

import math

import numpy as np
import pytest

from relex import nn, theory
from relex.theory import QuadraticLossSurface


def spd_surface(rng, d, c0=0.0):
    a = rng.normal(0, 1, (d, d))
    return QuadraticLossSurface(A=a @ a.T, b=rng.normal(0, 1, d), c0=c0)


# -- quadratic residual -----------------------------------------------------------


def test_residual_zero_at_zero_gamma(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[0]
    m = np.full(x0.shape, 0.5)
    assert theory.quadratic_residual(desk_model, x0, m, np.zeros_like(x0), 0) == 0.0


def test_residual_tiny_on_exact_quadratic():
    rng = np.random.default_rng(0)
    surface = spd_surface(rng, 6, c0=0.3)
    x0 = rng.uniform(0, 1, 6)
    for scale in (1e-3, 0.1, 1.0):
        gamma = rng.normal(0, scale, 6)
        assert theory.quadratic_residual(surface, x0, np.ones(6), gamma, 0) < 1e-6


def test_residual_small_in_smooth_regime():
    model = nn.mlp((8,), [12], 3, seed=1, activation="softplus")
    rng = np.random.default_rng(2)
    x0 = rng.uniform(0, 1, 8)
    m = rng.uniform(0.3, 1.0, 8)
    gamma = rng.normal(0, 1, 8)
    gamma *= 1e-3 / np.linalg.norm(gamma)
    assert theory.quadratic_residual(model, x0, m, gamma, 1) < 1e-2


def test_residual_converges_at_second_order_rate():
    model = nn.mlp((10,), [16, 12], 3, seed=7, activation="softplus")
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0, 1, 10)
    m = rng.uniform(0.2, 1.0, 10)
    v = rng.normal(0, 1, 10)
    v /= np.linalg.norm(v)
    alphas = np.logspace(-3.5, -0.5, 13)
    residuals = np.array([theory.quadratic_residual(model, x0, m, a * v, 1) for a in alphas])
    keep = residuals > 0
    slope = np.polyfit(np.log(alphas[keep]), np.log(residuals[keep]), 1)[0]
    assert slope >= 2.5


# -- brute-force robustness radius ---------------------------------------------


def test_radius_unbounded_flag_for_huge_tau(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[0]
    m = np.ones_like(x0)
    grid = np.linspace(0.1, 0.5, 5)
    res = theory.robustness_radius_bruteforce(
        desk_model, x0, m, tau=1e9, target=int(desk_eval_dataset.labels[0]), radius_grid=grid
    )
    assert not res.violation_found
    assert res.radius == 0.5


def test_radius_matches_logistic_boundary_distance():
    # 1-D logistic toy: L(x) = softplus(-(w x + b)); with tau = ln 2 the
    # threshold sits exactly at the decision boundary x = -b/w
    w, b = 2.0, -1.0
    model = nn.Model(
        [nn.Dense(np.array([[w], [0.0]]), np.array([b, 0.0])), nn.Softmax()], 2, (1,)
    )
    x0 = np.array([1.5])  # boundary at x = 0.5 -> distance 1.0
    grid = np.linspace(0.05, 2.0, 40)
    res = theory.robustness_radius_bruteforce(
        model, x0, np.ones(1), tau=math.log(2.0), target=0, radius_grid=grid, directions=64, seed=0
    )
    assert res.violation_found
    assert abs(res.radius - 1.0) <= grid[1] - grid[0] + 1e-12


def test_radius_monotone_in_tau(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[1]
    target = int(desk_eval_dataset.labels[1])
    m = np.full(x0.shape, 0.9)
    grid = np.linspace(0.05, 2.0, 30)
    base = nn.masked_loss(desk_model, x0, m, target)
    radii = []
    for tau in (base + 0.5, base + 1.5, base + 3.0):
        res = theory.robustness_radius_bruteforce(
            desk_model, x0, m, tau, target, grid, directions=64, seed=1
        )
        radii.append(res.radius)
    assert all(radii[i] <= radii[i + 1] + 1e-12 for i in range(len(radii) - 1))


def test_radius_rejects_already_violating_start(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[2]
    with pytest.raises(ValueError):
        theory.robustness_radius_bruteforce(
            desk_model, x0, np.zeros_like(x0), tau=-1.0, target=0, radius_grid=[0.1]
        )


# -- theorem 1 (label consistency) ------------------------------------------------


def test_theorem1_zero_mask_is_degenerate(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[0]
    v = np.zeros_like(x0)
    v.reshape(-1)[0] = 1.0
    rep = theory.theorem1_check(desk_model, x0, np.zeros_like(x0), 0.1, v, tau=10.0, target=0)
    assert rep.degenerate
    assert math.isnan(rep.alpha_lower_bound)


def test_theorem1_negative_c_flagged(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[0]
    v = np.zeros_like(x0)
    v.reshape(-1)[0] = 1.0
    rep = theory.theorem1_check(
        desk_model, x0, np.full(x0.shape, 0.5), 0.1, v, tau=-5.0, target=0
    )
    assert rep.degenerate and rep.c < 0


def test_theorem1_hand_fixture_on_quadratic_surrogate():
    # surrogate with hand-chosen gradient profile: L(x) = c0 + b.x, so
    # g(x) = -b everywhere, the Hessian is zero, and the bound's right side
    # is alpha * |m|_1 * |b| exactly
    d = 4
    b = np.array([1.0, -2.0, 2.0, 0.0])
    surface = QuadraticLossSurface(A=np.zeros((d, d)), b=b, c0=0.2)
    m = np.array([0.5, 0.25, 1.0, 0.0])  # |m|_1 = 1.75
    v = np.array([1.0, 0.0, 0.0, 0.0])
    alpha, tau = 0.3, 5.0
    rep = theory.theorem1_check(surface, np.zeros(d), m, alpha, v, tau, target=0)
    assert rep.gdiff_norm == pytest.approx(0.0, abs=1e-12)
    assert rep.g0_norm == pytest.approx(np.linalg.norm(b), abs=1e-12)
    assert rep.rhs == pytest.approx(alpha * 1.75 * np.linalg.norm(b), abs=1e-12)
    assert rep.lhs == pytest.approx(float(b @ (alpha * v)), abs=1e-12)  # pure gradient term
    assert rep.holds
    assert rep.slack == pytest.approx(rep.rhs - rep.lhs, abs=1e-15)


def test_theorem1_exact_on_quadratic_surrogates():
    rng = np.random.default_rng(4)
    for trial in range(200):
        d = int(rng.integers(3, 8))
        surface = spd_surface(rng, d, c0=float(rng.uniform(0, 0.5)))
        x0 = rng.uniform(-1, 1, d)
        m = rng.uniform(0, 1, d)
        v = rng.normal(0, 1, d)
        v /= np.linalg.norm(v)
        alpha = float(rng.uniform(0.01, 2.0))
        tau = surface.masked_loss(x0, m, 0) + float(rng.uniform(0, 3.0))
        rep = theory.theorem1_check(surface, x0, m, alpha, v, tau, target=0)
        if not rep.degenerate:
            assert rep.holds
            assert rep.quadratic_model_error < 1e-9
            assert rep.alpha_bound_holds


def test_theorem1_batch_on_random_nets(desk_model, desk_eval_dataset):
    rng = np.random.default_rng(5)
    violations = 0
    checked = 0
    for j in range(300):
        x0 = desk_eval_dataset.images[int(rng.integers(0, 100))]
        target = int(rng.integers(0, 4))
        m = rng.uniform(0, 1, x0.shape)
        v = rng.normal(0, 1, x0.shape)
        v /= np.linalg.norm(v)
        alpha = float(rng.uniform(0.001, 0.3))
        rep = theory.theorem1_check(
            desk_model, x0, m, alpha, v, tau=theory.default_tau(4) + 3.0, target=target
        )
        if not rep.degenerate:
            checked += 1
            violations += not rep.holds
    assert checked > 250
    assert violations == 0


# -- theorem 2 (saliency consistency) ---------------------------------------------


def test_theorem2_trivial_cases(desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[0]
    rep0 = theory.theorem2_check(desk_model, x0, x0, np.full(x0.shape, 0.7), 0)
    assert rep0.lhs == 0.0 and rep0.rhs == 0.0 and rep0.holds
    repz = theory.theorem2_check(desk_model, x0, x0 + 0.01, np.zeros_like(x0), 0)
    assert repz.lhs == 0.0 and repz.rhs == 0.0 and repz.holds


def test_theorem2_holds_on_random_instances(desk_model, desk_eval_dataset):
    rng = np.random.default_rng(6)
    for j in range(200):
        x0 = desk_eval_dataset.images[int(rng.integers(0, 100))]
        xi = x0 + rng.normal(0, 0.05, x0.shape)
        m = rng.uniform(0, 1, x0.shape)
        rep = theory.theorem2_check(desk_model, x0, xi, m, int(rng.integers(0, 4)))
        assert rep.holds


def test_masked_norm_inequality_is_unconditional():
    rng = np.random.default_rng(7)
    d = 32
    a = rng.normal(0, 3, (10000, d))
    m = rng.uniform(0, 1, (10000, d))
    lhs = np.linalg.norm(a * m, axis=1)
    rhs = np.linalg.norm(a, axis=1) * np.abs(m).sum(axis=1)
    assert np.all(rhs - lhs >= -1e-12)
    # the library helper agrees
    assert theory.masked_norm_gap(a[0], m[0]) == pytest.approx(rhs[0] - lhs[0], abs=1e-12)


def test_bound_report_csv_summary(tmp_path, desk_model, desk_eval_dataset):
    x0 = desk_eval_dataset.images[0]
    v = np.zeros_like(x0)
    v.reshape(-1)[0] = 1.0
    reports = [
        theory.theorem1_check(desk_model, x0, np.full(x0.shape, 0.5), 0.05, v, 10.0, 0, "a"),
        theory.theorem1_check(desk_model, x0, np.zeros_like(x0), 0.05, v, 10.0, 0, "b"),
    ]
    path = tmp_path / "bounds.csv"
    theory.write_bound_reports(reports, path, "digest")
    lines = path.read_text().splitlines()
    assert lines[1].split(",") == list(theory.BOUND_COLUMNS)
    assert lines[-1].startswith("summary,violations=0,degenerate=1")
