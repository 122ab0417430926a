"""SupCon, ProtoCLR, NT-Xent and softmax cross-entropy with exact gradients.

Every ``*_forward`` returns the summed loss, the descent gradient with respect
to every input row, and a count of the multiply-accumulates spent on
similarity dot products (plus centroid accumulation for ProtoCLR).

The per-anchor helpers return the gradient decomposition in the printed
"pull towards positives minus softmax-weighted push" form. That form is the
ascent direction of the anchor's log-probability, i.e. the negated partial
derivative of the anchor's own loss term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream, check_temperature, l2_normalize, log_sum_exp_rows, softmax_rows
from .errors import (
    BatchEmpty,
    BatchTooSmall,
    LabelOutOfRange,
    OddRowCount,
    ShapeMismatch,
    SingletonAnchor,
)
from .prototypes import LabeledBatch, Prototypes, class_centroids

ANCHOR_WEIGHTS = ("auto", "inverse_positives", "uniform")
PROTOTYPE_MODES = ("detached", "full")
SINGLETON_POLICIES = ("skip_anchor", "error")


@dataclass(frozen=True)
class LossConfig:
    """Loss hyper-parameters.

    ``anchor_weight="auto"`` resolves to ``inverse_positives`` for SupCon and
    NT-Xent and to ``uniform`` for ProtoCLR.
    """

    temperature: float = 0.1
    anchor_weight: str = "auto"
    prototype_mode: str = "detached"
    singleton_policy: str = "skip_anchor"
    normalize_prototypes: bool = False

    def __post_init__(self):
        check_temperature(self.temperature)
        if self.anchor_weight not in ANCHOR_WEIGHTS:
            raise ValueError(f"anchor_weight must be one of {ANCHOR_WEIGHTS}")
        if self.prototype_mode not in PROTOTYPE_MODES:
            raise ValueError(f"prototype_mode must be one of {PROTOTYPE_MODES}")
        if self.singleton_policy not in SINGLETON_POLICIES:
            raise ValueError(f"singleton_policy must be one of {SINGLETON_POLICIES}")

    def weighting(self, default: str) -> str:
        return default if self.anchor_weight == "auto" else self.anchor_weight


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    macs: int


@dataclass
class AnchorGradient:
    index: int
    positive_term: np.ndarray
    negative_term: np.ndarray

    @property
    def paper_form(self) -> np.ndarray:
        return self.positive_term - self.negative_term


# --------------------------------------------------------------------- SupCon


def _pairwise_logits(z: np.ndarray, tau: float) -> tuple[np.ndarray, int]:
    n, d = z.shape
    # BLAS also forms the n diagonal products; they are masked out and not counted
    return z @ z.T / tau, n * (n - 1) * d


def _supcon_core(z, labels, tau, weighting, singleton_policy) -> LossResult:
    n = z.shape[0]
    if n < 2:
        raise BatchTooSmall(f"SupCon needs at least 2 rows, got {n}")
    others = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & others
    npos = pos.sum(axis=1)
    lonely = np.flatnonzero(npos == 0)
    if lonely.size and singleton_policy == "error":
        i = int(lonely[0])
        raise SingletonAnchor(i, int(labels[i]))

    has_pos = npos > 0
    if weighting == "inverse_positives":
        w = np.where(has_pos, 1.0 / np.maximum(npos, 1), 0.0)
    else:
        w = has_pos.astype(np.float64)

    logits, macs = _pairwise_logits(z, tau)
    lse = log_sum_exp_rows(logits, others)
    pos_logit_sum = np.where(pos, logits, 0.0).sum(axis=1)
    per_anchor = w * (npos * lse - pos_logit_sum)
    value = float(np.sum(per_anchor))

    # dL/dlogits, then both z_i and z_j receive it through z_i . z_j
    g = w[:, None] * (npos[:, None] * softmax_rows(logits, others) - pos)
    grad = (g + g.T) @ z / tau
    return LossResult(value, grad, macs)


def supcon_forward(batch: LabeledBatch, cfg: LossConfig) -> LossResult:
    """Supervised contrastive loss summed over anchors, with its full gradient."""
    return _supcon_core(
        batch.embeddings,
        batch.labels,
        cfg.temperature,
        cfg.weighting("inverse_positives"),
        cfg.singleton_policy,
    )


def supcon_anchor_gradient(batch: LabeledBatch, cfg: LossConfig, i: int) -> AnchorGradient:
    z, labels, tau = batch.embeddings, batch.labels, cfg.temperature
    n = batch.n
    if not 0 <= i < n:
        raise IndexError(f"anchor {i} out of range for {n} rows")
    others = np.arange(n) != i
    pos = others & (labels == labels[i])
    if not pos.any():
        raise SingletonAnchor(i, int(labels[i]))
    positive = z[pos].mean(axis=0) / tau
    logits = z[others] @ z[i] / tau
    s = np.exp(logits - logits.max())
    negative = (s @ z[others]) / s.sum() / tau
    return AnchorGradient(i, positive, negative)


# ------------------------------------------------------------------- ProtoCLR


def _protoclr_weights(protos: Prototypes, weighting: str) -> np.ndarray:
    sizes = protos.counts[protos.index]
    if weighting == "uniform":
        return np.ones(len(sizes))
    lonely = np.flatnonzero(sizes == 1)
    if lonely.size:
        i = int(lonely[0])
        raise SingletonAnchor(i, int(protos.classes[protos.index[i]]))
    return 1.0 / (sizes - 1)


def protoclr_forward(batch: LabeledBatch, cfg: LossConfig) -> LossResult:
    """Prototype contrastive loss against per-class batch centroids.

    ``prototype_mode="detached"`` treats the centroids as constants;
    ``"full"`` also back-propagates through the centroid means (and through
    their normalisation when ``normalize_prototypes`` is set).
    """
    if batch.n == 0:
        raise BatchEmpty("ProtoCLR needs at least one row")
    z, tau = batch.embeddings, cfg.temperature
    n, d = z.shape
    protos = class_centroids(batch, cfg.normalize_prototypes)
    w = _protoclr_weights(protos, cfg.weighting("uniform"))
    c = protos.centroids
    k = protos.num_classes
    macs = n * d + n * k * d

    logits = z @ c.T / tau
    lse = log_sum_exp_rows(logits)
    rows = np.arange(n)
    value = float(np.sum(w * (lse - logits[rows, protos.index])))

    g = softmax_rows(logits)
    g[rows, protos.index] -= 1.0
    g *= w[:, None]
    grad = g @ c / tau
    if cfg.prototype_mode == "full":
        grad_c = g.T @ z / tau
        if protos.norms is not None:
            radial = np.einsum("ij,ij->i", grad_c, c)
            grad_c = (grad_c - radial[:, None] * c) / protos.norms[:, None]
        grad += grad_c[protos.index] / protos.counts[protos.index][:, None]
    return LossResult(value, grad, macs)


def protoclr_anchor_gradient(batch: LabeledBatch, cfg: LossConfig, i: int) -> AnchorGradient:
    if batch.n == 0:
        raise BatchEmpty("ProtoCLR needs at least one row")
    if not 0 <= i < batch.n:
        raise IndexError(f"anchor {i} out of range for {batch.n} rows")
    tau = cfg.temperature
    protos = class_centroids(batch, cfg.normalize_prototypes)
    c = protos.centroids
    positive = c[protos.index[i]] / tau
    logits = c @ batch.embeddings[i] / tau
    s = np.exp(logits - logits.max())
    negative = (s @ c) / s.sum() / tau
    return AnchorGradient(i, positive, negative)


# --------------------------------------------------------- NT-Xent and CE


def infonce_forward(batch_two_views: LabeledBatch, cfg: LossConfig) -> LossResult:
    """NT-Xent over interleaved view pairs: rows 2j and 2j+1 are one example.

    The batch's own labels are ignored; each row's only positive is its twin.
    """
    n = batch_two_views.n
    if n % 2:
        raise OddRowCount(f"paired views need an even row count, got {n}")
    if n < 4:
        raise BatchTooSmall(f"NT-Xent needs at least 2 pairs, got {n // 2}")
    pair_ids = np.arange(n) // 2
    return _supcon_core(
        batch_two_views.embeddings, pair_ids, cfg.temperature, "inverse_positives", "error"
    )


def softmax_ce_forward(logits, labels) -> LossResult:
    """Mean negative log-likelihood of integer labels under row-softmax."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeMismatch(f"{n} logit rows but {labels.shape[0]} labels")
    if n == 0:
        raise BatchEmpty("cross-entropy of an empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    lse = log_sum_exp_rows(logits)
    value = float(np.mean(lse - logits[rows, labels]))
    grad = softmax_rows(logits)
    grad[rows, labels] -= 1.0
    return LossResult(value, grad / n, 0)


# ------------------------------------------------------- convergence probe


@dataclass
class ConvergenceReport:
    epsilon: float
    tau: float
    num_classes: int
    per_class: int
    dim: int
    mean_negative_term_gap: float
    mean_protoclr_gap: float


def substituted_negative_term(batch: LabeledBatch, tau: float, i: int, protos: Prototypes | None = None) -> np.ndarray:
    """SupCon's push term with every other row replaced by its class centroid.

    Equivalent to ProtoCLR's push term with each class weighted by how many
    rows it contributes to A(i) (its size, minus one for the anchor's class).
    """
    protos = protos or class_centroids(batch)
    multiplicity = protos.counts.astype(np.float64)
    multiplicity[protos.index[i]] -= 1.0
    c = protos.centroids
    logits = c @ batch.embeddings[i] / tau
    s = multiplicity * np.exp(logits - logits.max())
    return (s @ c) / s.sum() / tau


def convergence_equivalence_probe(
    num_classes: int, per_class: int, dim: int, epsilon: float, tau: float, rng: RngStream
) -> ConvergenceReport:
    """How far SupCon's push term is from its prototype form near convergence.

    Rows sit at ``normalize(center + epsilon * u)`` around unit-norm class
    centers. The headline gap compares SupCon's push term with the same sum
    after substituting centroids for rows; it vanishes at epsilon = 0 and
    grows linearly with epsilon. ``mean_protoclr_gap`` compares against
    ProtoCLR's own push term, which keeps a class-multiplicity offset.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if per_class < 2:
        raise ValueError("per_class must be >= 2")
    if num_classes < 1 or dim < 1:
        raise ValueError("num_classes and dim must be >= 1")
    tau = check_temperature(tau)
    centers = rng.substream(0).unit_vectors(num_classes, dim)
    noise = rng.substream(1).unit_vectors(num_classes * per_class, dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    z = np.stack([l2_normalize(centers[y] + epsilon * u) for y, u in zip(labels, noise)])
    batch = LabeledBatch(z, labels)
    cfg = LossConfig(temperature=tau)
    protos = class_centroids(batch)

    gaps, proto_gaps = [], []
    for i in range(batch.n):
        sup = supcon_anchor_gradient(batch, cfg, i).negative_term
        gaps.append(np.linalg.norm(sup - substituted_negative_term(batch, tau, i, protos)))
        proto = protoclr_anchor_gradient(batch, cfg, i).negative_term
        proto_gaps.append(np.linalg.norm(sup - proto))
    return ConvergenceReport(
        epsilon=float(epsilon),
        tau=tau,
        num_classes=num_classes,
        per_class=per_class,
        dim=dim,
        mean_negative_term_gap=float(np.mean(gaps)),
        mean_protoclr_gap=float(np.mean(proto_gaps)),
    )
