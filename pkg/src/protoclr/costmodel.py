"""Multiply-accumulate accounting for SupCon vs ProtoCLR similarity work.

One MAC is one scalar multiply-accumulate inside a similarity dot product or
a centroid accumulation. Exponentials, divisions and gradient arithmetic are
not counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CounterMismatch
from .losses import LossConfig, protoclr_forward, supcon_forward
from .prototypes import LabeledBatch

# Reported per-epoch totals at batch 256 (two views, so 512 rows per batch).
REFERENCE_SUPCON_MACS = 80.4e9
REFERENCE_PROTOCLR_MACS = 28.3e9
REFERENCE_RATIO = REFERENCE_SUPCON_MACS / REFERENCE_PROTOCLR_MACS

# Distinct classes per 512-row batch that reproduces the reported ratio.
# Inferred, not a published figure.
INFERRED_CLASSES_PER_BATCH = 180


@dataclass(frozen=True)
class CostParams:
    n: int  # rows per batch, views included
    classes: int
    d: int
    batches: int = 1

    def __post_init__(self):
        if not 1 <= self.classes <= self.n:
            raise ValueError(f"need 1 <= classes <= n, got classes={self.classes}, n={self.n}")
        if self.d < 1 or self.batches < 1:
            raise ValueError("d and batches must be >= 1")


@dataclass
class CostReport:
    params: CostParams
    supcon_macs: int
    protoclr_similarity_macs: int
    protoclr_centroid_macs: int
    instrumented_supcon_macs: int | None = None
    instrumented_protoclr_macs: int | None = None

    @property
    def protoclr_macs(self) -> int:
        return self.protoclr_similarity_macs + self.protoclr_centroid_macs

    @property
    def ratio(self) -> float:
        return self.supcon_macs / self.protoclr_macs

    @property
    def ratio_similarity_only(self) -> float:
        return self.supcon_macs / self.protoclr_similarity_macs


def closed_form(params: CostParams) -> CostReport:
    n, c, d, b = params.n, params.classes, params.d, params.batches
    return CostReport(
        params=params,
        supcon_macs=b * n * (n - 1) * d,
        protoclr_similarity_macs=b * n * c * d,
        protoclr_centroid_macs=b * n * d,
    )


def verify_instrumented(batch: LabeledBatch, cfg: LossConfig | None = None) -> CostReport:
    """Run both losses and check their MAC counters against :func:`closed_form`.

    Raises :class:`CounterMismatch` if either counter disagrees.
    """
    cfg = cfg or LossConfig()
    params = CostParams(batch.n, int(np.unique(batch.labels).size), batch.dim)
    report = closed_form(params)
    report.instrumented_supcon_macs = supcon_forward(batch, cfg).macs
    report.instrumented_protoclr_macs = protoclr_forward(batch, cfg).macs
    if report.instrumented_supcon_macs != report.supcon_macs:
        raise CounterMismatch(
            f"SupCon executed {report.instrumented_supcon_macs} MACs, model says {report.supcon_macs}"
        )
    if report.instrumented_protoclr_macs != report.protoclr_macs:
        raise CounterMismatch(
            f"ProtoCLR executed {report.instrumented_protoclr_macs} MACs, model says {report.protoclr_macs}"
        )
    return report
