"""Per-class batch centroids and the Monte-Carlo probe of their variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream, normalize_rows
from .errors import EmptyBatch, ShapeMismatch


@dataclass
class LabeledBatch:
    embeddings: np.ndarray
    labels: np.ndarray
    domains: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = self.embeddings.shape[0]
        if self.labels.shape[0] != n:
            raise ShapeMismatch(f"{n} embeddings but {self.labels.shape[0]} labels")
        if n and self.labels.min() < 0:
            raise ShapeMismatch("labels must be non-negative")
        if self.domains is not None:
            self.domains = np.asarray(self.domains, dtype=np.int64).ravel()
            if self.domains.shape[0] != n:
                raise ShapeMismatch(f"{n} embeddings but {self.domains.shape[0]} domains")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def with_embeddings(self, z: np.ndarray) -> "LabeledBatch":
        return LabeledBatch(z, self.labels, self.domains)


@dataclass
class Prototypes:
    classes: np.ndarray  # ascending distinct labels
    centroids: np.ndarray  # (|Y|, d)
    counts: np.ndarray  # |C(y)| per listed class
    index: np.ndarray  # row i -> position of its class in ``classes``
    norms: np.ndarray | None = None  # pre-normalisation norms, set when normalized

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def class_centroids(batch: LabeledBatch, normalize_prototypes: bool = False) -> Prototypes:
    """Mean embedding of each class present in the batch.

    Centroids are plain means unless ``normalize_prototypes`` is set, in which
    case each mean is rescaled to unit length afterwards.
    """
    if batch.n == 0:
        raise EmptyBatch("cannot compute centroids of an empty batch")
    classes, index, counts = np.unique(batch.labels, return_inverse=True, return_counts=True)
    sums = np.zeros((len(classes), batch.dim))
    np.add.at(sums, index, batch.embeddings)
    centroids = sums / counts[:, None]
    norms = None
    if normalize_prototypes:
        norms = np.linalg.norm(centroids, axis=1)
        centroids = normalize_rows(centroids)
    return Prototypes(classes, centroids, counts, index, norms)


@dataclass
class VarianceProbeReport:
    class_size: int
    resamples: int
    dim: int
    empirical_variance: float
    predicted_variance: float

    @property
    def relative_error(self) -> float:
        return abs(self.empirical_variance - self.predicted_variance) / self.predicted_variance


def variance_probe(dim: int, class_size: int, resamples: int, rng: RngStream) -> VarianceProbeReport:
    """Spread of a class centroid built from ``class_size`` i.i.d. N(0, I) draws.

    The population variance is 1 per coordinate, so the centroid's variance
    should be ``1 / class_size``.
    """
    if class_size < 1:
        raise ValueError("class_size must be >= 1")
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    draws = rng.normal((resamples, class_size, dim))
    centroids = draws.mean(axis=1)
    per_coord = centroids.var(axis=0, ddof=1)
    return VarianceProbeReport(
        class_size=class_size,
        resamples=resamples,
        dim=dim,
        empirical_variance=float(per_coord.mean()),
        predicted_variance=1.0 / class_size,
    )
