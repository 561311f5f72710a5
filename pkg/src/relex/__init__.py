"""Robust saliency-map explanations with an adversarial evaluation harness.

The core pieces: a small float64 network engine with exact input
gradients (`relex.nn`), the noisy-batch mask learner and gradient
baselines (`relex.explain`), white-box attacks (`relex.attack`),
evaluation metrics (`relex.metrics`), numerical checks of the
local-smoothness bounds (`relex.theory`), data/persistence formats
(`relex.io`), and experiment pipelines (`relex.harness`) behind the
`relex` command-line tool (`relex.cli`).
"""

from . import attack, explain, harness, io, metrics, nn, theory, train
from .attack import PGDConfig, TopKFoolConfig, pgd_untargeted, topk_fooling
from .explain import (
    NoisyBatch,
    RelExConfig,
    RelExResult,
    intgrad,
    make_noisy_batch,
    objective_B,
    objective_J,
    postprocess_abs_percentile,
    postprocess_minmax,
    relex,
    simgrad,
    smoothgrad,
)
from .io import LabeledDataset, generate_synthetic, load_idx
from .metrics import (
    MetricReport,
    deletion_auc,
    preservation_auc,
    relevance_R,
    retrieval_hit,
    spearman_rank,
    topk_intersection,
)
from .nn import Model, forward, class_log_loss, hessian_vector_fd, input_gradient, mlp
from .theory import (
    BoundReport,
    QuadraticLossSurface,
    quadratic_residual,
    robustness_radius_bruteforce,
    theorem1_check,
    theorem2_check,
)
from .train import TrainConfig, TrainResult, train_classifier

__version__ = "0.1.0"
