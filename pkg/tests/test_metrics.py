"""Metric fixtures, identities, and range properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from relex import metrics, nn
from relex.metrics import MetricReport, SampleMetrics


def constant_model(p, classes=2):
    """Softmax model whose target-0 probability is p regardless of input."""
    logit = math.log(p / (1 - p)) if classes == 2 else None
    bias = np.array([logit, 0.0])
    return nn.Model([nn.Dense(np.zeros((2, 4)), bias), nn.Softmax()], 2, (4,))


def linear_score_model(weights, biases, d):
    """No-softmax model: outputs are affine scores (usable as probabilities
    when they stay in [0, 1])."""
    return nn.Model([nn.Dense(np.asarray(weights, float), np.asarray(biases, float))], len(biases), (d,))


# -- retrieval ------------------------------------------------------------------


def test_retrieval_identity_mask(desk_model, desk_eval_dataset):
    x = desk_eval_dataset.images[0]
    y = int(desk_eval_dataset.labels[0])
    assert metrics.retrieval_hit(desk_model, x, np.ones_like(x), y)


def test_retrieval_zero_mask_prefers_model_bias_class():
    model = nn.Model(
        [nn.Dense(np.zeros((2, 4)), np.array([0.0, 1.0])), nn.Softmax()], 2, (4,)
    )
    x = np.ones(4)
    assert not metrics.retrieval_hit(model, x, np.zeros(4), 0)
    assert metrics.retrieval_hit(model, x, np.zeros(4), 1)


def test_retrieval_modes_match_direct_forward(desk_model, desk_eval_dataset):
    # both protocol modes are just forward calls on masked inputs
    from relex import attack, explain

    x0 = desk_eval_dataset.images[1]
    y = int(desk_eval_dataset.labels[1])
    adv = attack.pgd_untargeted(desk_model, x0, y, attack.PGDConfig(epsilon=0.1, seed=0))
    m_adv = explain.simgrad(desk_model, adv, y)
    m_0 = explain.simgrad(desk_model, x0, y)
    for x_eval, m in ((adv, m_adv), (adv, m_0)):
        direct = int(np.argmax(nn.forward(desk_model, m * x_eval))) == y
        assert metrics.retrieval_hit(desk_model, x_eval, m, y) == direct


# -- deletion / preservation -----------------------------------------------------


def test_flat_curve_auc_equals_constant_probability():
    model = constant_model(0.7)
    x = np.random.default_rng(0).uniform(0, 1, 4)
    m = np.random.default_rng(1).uniform(0, 1, 4)
    assert metrics.deletion_auc(model, x, m, 0) == pytest.approx(0.7, abs=1e-12)
    assert metrics.preservation_auc(model, x, m, 0) == pytest.approx(0.7, abs=1e-12)


def test_deletion_two_pixel_trapezoid_fixture():
    # scores 1.0 -> 0.6 -> 0.1 as pixels flip in saliency order:
    # AUC = (1.0+0.6)/2 * 0.5 + (0.6+0.1)/2 * 0.5 = 0.575
    model = linear_score_model([[0.4, 0.5], [0.0, 0.0]], [0.1, 0.5], 2)
    x = np.array([1.0, 1.0])
    m = np.array([0.9, 0.5])  # flip pixel 0 first
    assert metrics.deletion_auc(model, x, m, 0) == pytest.approx(0.575, abs=1e-12)


def test_single_relevant_pixel_curves():
    # class score = x[0]; perfect saliency points at pixel 0
    model = linear_score_model([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], [0.0, 0.5], 3)
    x = np.array([0.9, 0.4, 0.6])
    m = np.array([1.0, 0.1, 0.2])
    deletion = metrics.deletion_auc(model, x, m, 0)
    # drops to zero after the first of three flips; trapezoid over the rest
    assert deletion == pytest.approx((0.9 + 0.0) / 2 * (1 / 3), abs=1e-12)
    preservation = metrics.preservation_auc(model, x, m, 0)
    assert preservation == pytest.approx(0.9 * 5 / 6, abs=1e-12)  # stays until the last flip


def test_uniform_map_makes_deletion_equal_preservation():
    model = constant_model(0.4)
    x = np.random.default_rng(2).uniform(0, 1, 4)
    m = np.full(4, 0.5)
    assert metrics.deletion_auc(model, x, m, 0) == metrics.preservation_auc(model, x, m, 0)


def test_deletion_of_map_equals_preservation_of_complement(desk_model, desk_eval_dataset):
    x = desk_eval_dataset.images[2]
    y = int(desk_eval_dataset.labels[2])
    m = np.random.default_rng(3).uniform(0, 1, x.shape)
    assert metrics.deletion_auc(desk_model, x, m, y) == metrics.preservation_auc(
        desk_model, x, 1.0 - m, y
    )
    # exact even with ties
    mt = np.round(m, 1)
    assert metrics.deletion_auc(desk_model, x, mt, y) == metrics.preservation_auc(
        desk_model, x, 1.0 - mt, y
    )


def test_curve_stride_sampling_keeps_endpoints(desk_model, desk_eval_dataset):
    x = desk_eval_dataset.images[3]
    y = int(desk_eval_dataset.labels[3])
    m = np.random.default_rng(4).uniform(0, 1, x.shape)
    full = metrics.deletion_auc(desk_model, x, m, y, sample_every=1)
    strided = metrics.deletion_auc(desk_model, x, m, y, sample_every=7)
    assert abs(full - strided) < 0.1  # coarse but close


# -- relevance R -----------------------------------------------------------------


def test_relevance_fixture_values():
    assert metrics.relevance_R(1.0, 0.0) == 1.0
    assert metrics.relevance_R(0.0, 0.3) == 0.0
    assert metrics.relevance_R(0.5, 1.0) == 0.0
    # reference clean-image scores: harmonic mean computed independently
    P, D = 0.4093, 0.0567
    expected = 2.0 / (1.0 / P + 1.0 / (1.0 - D))
    assert metrics.relevance_R(P, D) == pytest.approx(expected, abs=1e-12)
    assert metrics.relevance_R(P, D) == pytest.approx(0.5709, abs=1e-4)


@given(
    p=st.floats(0.0, 1.0, allow_nan=False),
    d=st.floats(0.0, 1.0, allow_nan=False),
)
def test_relevance_monotonicity(p, d):
    r = metrics.relevance_R(p, d)
    assert 0.0 <= r <= 1.0
    eps = 0.01
    if p + eps <= 1.0:
        assert metrics.relevance_R(p + eps, d) >= r - 1e-12
    if d + eps <= 1.0:
        assert metrics.relevance_R(p, d + eps) <= r + 1e-12


# -- spearman -------------------------------------------------------------------


def test_spearman_fixtures():
    a = np.array([1.0, 2.0, 3.0])
    assert metrics.spearman_rank(a, a) == 1.0
    assert metrics.spearman_rank(a, a[::-1].copy()) == -1.0
    assert metrics.spearman_rank(a, np.array([1.0, 3.0, 2.0])) == pytest.approx(0.5, abs=1e-12)
    assert metrics.spearman_rank(a, np.full(3, 2.0)) == 0.0  # constant convention


def test_spearman_matches_scipy_with_ties():
    from scipy.stats import spearmanr

    rng = np.random.default_rng(5)
    for _ in range(25):
        a = np.round(rng.normal(0, 1, 30), 1)  # coarse rounding forces ties
        b = np.round(rng.normal(0, 1, 30), 1)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        assert metrics.spearman_rank(a, b) == pytest.approx(spearmanr(a, b).statistic, abs=1e-12)


@given(
    hnp.arrays(np.float64, 12, elements=st.floats(-5, 5, allow_nan=False)),
    hnp.arrays(np.float64, 12, elements=st.floats(-5, 5, allow_nan=False)),
)
@settings(max_examples=60)
def test_spearman_symmetric_and_bounded(a, b):
    r1 = metrics.spearman_rank(a, b)
    assert -1.0 <= r1 <= 1.0
    assert metrics.spearman_rank(b, a) == pytest.approx(r1, abs=1e-12)
    # invariance under a strictly monotone transform; scaling by 2 is exact
    # in floats, so it cannot collapse distinct values into ties
    assert metrics.spearman_rank(2.0 * a, b) == pytest.approx(r1, abs=1e-12)


# -- top-k intersection -----------------------------------------------------------


def test_topk_fixtures():
    a = np.array([5.0, 4.0, 1.0, 0.0, 2.0])
    b = np.array([0.0, 9.0, 8.0, 1.0, 2.0])
    assert metrics.topk_intersection(a, a, 2) == 1.0
    assert metrics.topk_intersection(a, b, 2) == 0.5  # {0,1} vs {1,2}
    disjoint = np.array([1.0, 1.0, 0.0, 0.0])
    other = np.array([0.0, 0.0, 1.0, 1.0])
    assert metrics.topk_intersection(disjoint, other, 2) == 0.0


@given(
    hnp.arrays(np.float64, 10, elements=st.floats(-3, 3, allow_nan=False)),
    hnp.arrays(np.float64, 10, elements=st.floats(-3, 3, allow_nan=False)),
    st.integers(1, 10),
)
@settings(max_examples=60)
def test_topk_symmetric_bounded_monotone_invariant(a, b, k):
    v = metrics.topk_intersection(a, b, k)
    assert 0.0 <= v <= 1.0
    assert v == metrics.topk_intersection(b, a, k)
    # doubling is an exact, strictly monotone float transform
    assert metrics.topk_intersection(2.0 * a, b, k) == v


def test_topk_tie_break_by_pixel_index():
    a = np.array([1.0, 1.0, 1.0, 0.0])
    b = np.array([0.0, 1.0, 1.0, 1.0])
    # ties resolve to the lowest index: top-2(a) = {0,1}, top-2(b) = {1,2}
    assert metrics.topk_intersection(a, b, 2) == 0.5


# -- report container -------------------------------------------------------------


def _sample(i, hit, val):
    return SampleMetrics(str(i), hit, val, val, val, val, val, val)


def test_report_aggregates_are_means():
    report = MetricReport([_sample(0, True, 0.25), _sample(1, False, 0.75)], "digest")
    agg = report.aggregates()
    assert agg["retrieval_hit"] == 0.5
    assert agg["deletion"] == pytest.approx(0.5, abs=1e-12)


def test_report_csv_layout(tmp_path):
    report = MetricReport([_sample(0, True, 0.5)], "abc123")
    path = tmp_path / "r.csv"
    report.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_digest=abc123"
    assert lines[1].split(",") == list(metrics.METRIC_COLUMNS)
    assert lines[2].startswith("0,1,")
    assert lines[3].startswith("aggregate,1.0,")


def test_report_metric_ranges(benchmark_results):
    for report in benchmark_results.reports.values():
        for s in report.per_sample:
            assert 0.0 <= s.deletion <= 1.0
            assert 0.0 <= s.preservation <= 1.0
            assert 0.0 <= s.relevance <= 1.0
            assert -1.0 <= s.spearman_vs_clean <= 1.0
            assert 0.0 <= s.topk_vs_clean <= 1.0
