"""Supervised and prototypical contrastive losses with exact gradients,
a SimpleShot few-shot harness, and a MAC cost model."""

__version__ = "0.1.0"

from .core import RngStream, l2_normalize, log_sum_exp, scaled_similarity
from .costmodel import CostParams, CostReport, closed_form, verify_instrumented
from .data import EmbeddingSet, SyntheticSpec, generate
from .fewshot import EvalConfig, EvalReport, evaluate, random_baseline, sample_episode, simpleshot_classify
from .losses import (
    LossConfig,
    LossResult,
    convergence_equivalence_probe,
    infonce_forward,
    protoclr_anchor_gradient,
    protoclr_forward,
    softmax_ce_forward,
    supcon_anchor_gradient,
    supcon_forward,
)
from .prototypes import LabeledBatch, Prototypes, class_centroids, variance_probe
