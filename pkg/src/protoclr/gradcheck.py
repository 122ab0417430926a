"""Central finite-difference checks of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import RngStream, normalize_rows
from .losses import (
    LossConfig,
    infonce_forward,
    protoclr_forward,
    softmax_ce_forward,
    supcon_forward,
)
from .prototypes import LabeledBatch, class_centroids

LOSSES = ("supcon", "protoclr", "infonce", "ce")
DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLD = 1e-6


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        keep = flat[j]
        flat[j] = keep + h
        up = f(x)
        flat[j] = keep - h
        down = f(x)
        flat[j] = keep
        gflat[j] = (up - down) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entry-wise discrepancy, relative to the gradient's scale."""
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def random_labels(n: int, classes: int, rng: RngStream) -> np.ndarray:
    """Labels with every one of ``min(classes, n)`` ids present, shuffled."""
    return (np.arange(n) % min(classes, n))[rng.permutation(n)]


def random_batch(n: int, d: int, classes: int, rng: RngStream) -> LabeledBatch:
    z = normalize_rows(rng.normal((n, d)))
    return LabeledBatch(z, random_labels(n, classes, rng))


@dataclass
class TrialResult:
    trial: int
    loss: str
    n: int
    d: int
    classes: int
    tau: float
    worst_relative_error: float


def _value_and_grad(loss: str, batch: LabeledBatch, cfg: LossConfig):
    if loss == "supcon":
        res = supcon_forward(batch, cfg)
    elif loss == "protoclr":
        res = protoclr_forward(batch, cfg)
    elif loss == "infonce":
        res = infonce_forward(batch, cfg)
    else:
        raise ValueError(loss)
    return res.value, res.grad


def frozen_protoclr_value(batch: LabeledBatch, cfg: LossConfig) -> Callable[[np.ndarray], float]:
    """ProtoCLR value as a function of the rows with centroids held fixed."""
    protos = class_centroids(batch, cfg.normalize_prototypes)
    c, idx, counts = protos.centroids, protos.index, protos.counts
    weighting = cfg.weighting("uniform")
    w = np.ones(batch.n) if weighting == "uniform" else 1.0 / (counts[idx] - 1)

    def value(z):
        logits = z @ c.T / cfg.temperature
        m = logits.max(axis=1)
        lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
        return float(np.sum(w * (lse - logits[np.arange(len(z)), idx])))

    return value


def check_batch(loss: str, batch: LabeledBatch, cfg: LossConfig, h: float = DEFAULT_STEP) -> float:
    """Worst relative error between the analytic and numeric gradient."""
    _, grad = _value_and_grad(loss, batch, cfg)
    if loss == "protoclr" and cfg.prototype_mode == "detached":
        f = frozen_protoclr_value(batch, cfg)
    else:
        f = lambda z: _value_and_grad(loss, batch.with_embeddings(z), cfg)[0]
    return relative_error(grad, numeric_grad(f, batch.embeddings, h))


def check_ce(n: int, classes: int, rng: RngStream, h: float = DEFAULT_STEP) -> float:
    logits = 3.0 * rng.normal((n, classes))
    labels = random_labels(n, classes, rng)
    res = softmax_ce_forward(logits, labels)
    num = numeric_grad(lambda x: softmax_ce_forward(x, labels).value, logits, h)
    return relative_error(res.grad, num)


def run_trials(
    loss: str,
    n: int,
    d: int,
    classes: int,
    tau: float,
    trials: int,
    seed: int,
    cfg: LossConfig | None = None,
    h: float = DEFAULT_STEP,
) -> list[TrialResult]:
    """Finite-difference checks on ``trials`` independently seeded batches.

    Loss-specific errors (for example a singleton anchor under the ``error``
    policy) propagate to the caller.
    """
    cfg = cfg or LossConfig(temperature=tau, prototype_mode="full")
    base = RngStream(seed)
    results = []
    for t in range(trials):
        rng = base.substream(t)
        if loss == "ce":
            err = check_ce(n, classes, rng, h)
        else:
            err = check_batch(loss, random_batch(n, d, classes, rng), cfg, h)
        results.append(TrialResult(t, loss, n, d, classes, cfg.temperature, err))
    return results
