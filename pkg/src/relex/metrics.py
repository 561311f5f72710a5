"""Evaluation metrics: class retrieval, deletion/preservation fidelity,
harmonic relevance, rank similarity, and the per-sample report container.

Pixel orderings everywhere break ties by ascending pixel index (stable
sorts), so the cross-metric identities hold exactly: deletion with a map
equals preservation with its complement, and top-k sets are reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from . import nn
from .nn import Model, ShapeError


def retrieval_hit(model: Model, x_eval, m, target: int) -> bool:
    """True iff the masked input's most likely class is the target.
    Ties resolve to the lowest class index (argmax convention)."""
    x_eval = np.asarray(x_eval, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != x_eval.shape:
        raise ShapeError(f"mask shape {m.shape} does not match input {x_eval.shape}")
    p = nn.forward(model, m * x_eval)
    return bool(int(np.argmax(p)) == int(target))


def _flip_curve(model, x, m, target, flip_value, sample_every, descending):
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != x.shape:
        raise ShapeError(f"mask shape {m.shape} does not match input {x.shape}")
    flat = x.reshape(-1)
    d = flat.size
    values = m.reshape(-1)
    order = np.argsort(-values if descending else values, kind="stable")
    rank = np.empty(d, dtype=np.int64)
    rank[order] = np.arange(d)
    ks = np.arange(0, d + 1, max(int(sample_every), 1))
    if ks[-1] != d:
        ks = np.append(ks, d)
    flipped = np.where(rank[None, :] < ks[:, None], flip_value, flat[None, :])
    scores = nn.forward(model, flipped.reshape((-1,) + x.shape))[:, int(target)]
    return ks / d, scores


def deletion_auc(
    model: Model, x, m, target: int, flip_value: float = 0.0, sample_every: int = 1
) -> float:
    """Pixel-flipping score: zero pixels in descending saliency order and
    take the trapezoidal AUC of the target score over the flipped
    fraction, from 0 to 1 inclusive.  Low is good.  sample_every > 1
    samples the curve only every that many flips (for larger inputs)."""
    fractions, scores = _flip_curve(model, x, m, target, flip_value, sample_every, True)
    return float(np.trapezoid(scores, x=fractions))


def preservation_auc(
    model: Model, x, m, target: int, flip_value: float = 0.0, sample_every: int = 1
) -> float:
    """Like deletion_auc but flipping in ascending saliency order, so the
    drop should come as late as possible.  High is good."""
    fractions, scores = _flip_curve(model, x, m, target, flip_value, sample_every, False)
    return float(np.trapezoid(scores, x=fractions))


def relevance_R(P: float, D: float) -> float:
    """Harmonic mean of preservation and (1 - deletion):
    R = 2 P (1-D) / (P + (1-D)); defined as 0 when P = 0 or D = 1."""
    if not (0.0 <= P <= 1.0 and 0.0 <= D <= 1.0):
        raise ValueError(f"P and D must lie in [0, 1], got P={P}, D={D}")
    good = 1.0 - D
    if P <= 0.0 or good <= 0.0:
        return 0.0
    return 2.0 * P * good / (P + good)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    ranks[order] = np.arange(1, v.size + 1)
    _, inverse = np.unique(v, return_inverse=True)
    sums = np.bincount(inverse, weights=ranks)
    counts = np.bincount(inverse)
    return (sums / counts)[inverse]


def spearman_rank(m1, m2) -> float:
    """Spearman rank-order correlation with average ranks for ties.

    Convention: if either map is constant the correlation is undefined and
    0.0 is returned (callers can detect the case via ptp() == 0).
    """
    a = np.asarray(m1, dtype=np.float64).reshape(-1)
    b = np.asarray(m2, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"maps differ in size: {a.shape} vs {b.shape}")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return 0.0
    ra, rb = _average_ranks(a), _average_ranks(b)
    return float(np.corrcoef(ra, rb)[0, 1])


def topk_intersection(m1, m2, k: int) -> float:
    """|top_k(m1) & top_k(m2)| / k with the global tie-break (descending
    value, ascending pixel index)."""
    a = np.asarray(m1, dtype=np.float64).reshape(-1)
    b = np.asarray(m2, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"maps differ in size: {a.shape} vs {b.shape}")
    if not 1 <= k <= a.size:
        raise ValueError(f"k must be in [1, {a.size}], got {k}")
    ta = np.argsort(-a, kind="stable")[:k]
    tb = np.argsort(-b, kind="stable")[:k]
    return float(len(np.intersect1d(ta, tb, assume_unique=True)) / k)


# ---------------------------------------------------------------------------
# Report container.
# ---------------------------------------------------------------------------

METRIC_COLUMNS = (
    "sample_id",
    "retrieval_hit",
    "deletion",
    "preservation",
    "relevance",
    "spearman_vs_clean",
    "topk_vs_clean",
    "saliency_l1",
)


@dataclass
class SampleMetrics:
    sample_id: str
    retrieval_hit: bool
    deletion: float
    preservation: float
    relevance: float
    spearman_vs_clean: float
    topk_vs_clean: float
    saliency_l1: float


@dataclass
class MetricReport:
    """Per-image metric records plus their arithmetic means.

    Serializes to CSV with the fixed METRIC_COLUMNS order, one row per
    sample and a final `aggregate` row; the config digest is embedded as a
    leading comment line.
    """

    per_sample: list[SampleMetrics]
    config_digest: str = ""

    _NUMERIC = METRIC_COLUMNS[1:]

    def aggregates(self) -> dict[str, float]:
        out = {}
        for name in self._NUMERIC:
            vals = np.array([float(getattr(s, name)) for s in self.per_sample], dtype=np.float64)
            out[name] = float(vals.mean()) if vals.size else float("nan")
        return out

    def to_csv(self, path) -> None:
        agg = self.aggregates()
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_digest={self.config_digest}\n")
            writer = csv.writer(fh)
            writer.writerow(METRIC_COLUMNS)
            for s in self.per_sample:
                writer.writerow(
                    [s.sample_id, int(s.retrieval_hit)]
                    + [repr(float(getattr(s, n))) for n in self._NUMERIC[1:]]
                )
            if self.per_sample:
                writer.writerow(
                    ["aggregate", repr(agg["retrieval_hit"])]
                    + [repr(agg[n]) for n in self._NUMERIC[1:]]
                )
