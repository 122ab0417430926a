"""Episodic k-shot evaluation with a SimpleShot nearest-centroid classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import RngStream, normalize_rows
from .data import EmbeddingSet
from .errors import ClassTooSmall, DimMismatch, EmptySupport


@dataclass
class Episode:
    k: int
    support: dict[int, np.ndarray]  # class id -> k row indices
    query: np.ndarray  # every remaining row index, ascending

    def support_indices(self) -> np.ndarray:
        return np.concatenate([self.support[c] for c in sorted(self.support)])


def sample_episode(es: EmbeddingSet, k: int, rng: RngStream) -> Episode:
    """Pick k support rows per class uniformly without replacement."""
    if k < 1:
        raise ValueError("k must be >= 1")
    support = {}
    for c in es.classes():
        members = np.flatnonzero(es.labels == c)
        if members.size < k + 1:
            raise ClassTooSmall(int(c), int(members.size), k)
        support[int(c)] = np.sort(members[rng.choice(members.size, k)])
    taken = np.zeros(es.n, dtype=bool)
    for idx in support.values():
        taken[idx] = True
    return Episode(k, support, np.flatnonzero(~taken))


def _nearest(queries: np.ndarray, protos: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), chunk):
        q = queries[start : start + chunk]
        dist = ((q[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(dist, axis=1)  # first minimum = smallest class id
    return out


def simpleshot_classify(support_embeddings, support_labels, queries) -> np.ndarray:
    """Nearest class centroid after centering on the support mean and L2 normalising.

    Both the class centroids and the queries are shifted by the mean of all
    support rows, rescaled to unit length, and each query takes the label
    of the closest centroid in Euclidean distance.
    """
    support = np.atleast_2d(np.asarray(support_embeddings, dtype=np.float64))
    labels = np.asarray(support_labels, dtype=np.int64).ravel()
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if support.shape[0] == 0 or labels.size == 0:
        raise EmptySupport("no support examples")
    if labels.size != support.shape[0]:
        raise DimMismatch(f"{support.shape[0]} support rows but {labels.size} labels")
    if queries.shape[0] and queries.shape[1] != support.shape[1]:
        raise DimMismatch(f"queries have {queries.shape[1]} dims, support has {support.shape[1]}")
    classes, inverse = np.unique(labels, return_inverse=True)
    sums = np.zeros((len(classes), support.shape[1]))
    np.add.at(sums, inverse, support)
    centroids = sums / np.bincount(inverse)[:, None]
    mu = support.mean(axis=0)
    protos = normalize_rows(centroids - mu)
    if queries.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    q = normalize_rows(queries - mu)
    return classes[_nearest(q, protos)]


@dataclass(frozen=True)
class EvalConfig:
    k: int = 1
    num_runs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")


@dataclass
class EvalReport:
    k: int
    accuracies: list[float]  # percent, one per run
    mean: float
    std: float  # sample standard deviation (0 for a single run)
    num_classes: int
    num_queries: int
    support_sizes: dict[int, int] = field(default_factory=dict)
    run_seeds: list[int] = field(default_factory=list)

    def display(self) -> str:
        return format_accuracy(self.mean, self.std)


def format_accuracy(mean: float, std: float) -> str:
    """Table-style ``mean±std``: one decimal for means >= 10, else two."""
    head = f"{mean:.1f}" if mean >= 10 else f"{mean:.2f}"
    return f"{head}±{std:.1f}"


def evaluate(
    es: EmbeddingSet,
    cfg: EvalConfig,
    embed_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> EvalReport:
    """Top-1 accuracy over ``cfg.num_runs`` independently seeded episodes.

    Run r uses substream r of the base seed. Accuracy is micro-averaged over
    every query row. ``embed_fn`` maps raw features to embeddings first.
    """
    feats = es.features.astype(np.float64)
    if embed_fn is not None:
        feats = embed_fn(feats)
    base = RngStream(cfg.seed)
    accs, seeds = [], []
    episode = None
    for r in range(cfg.num_runs):
        stream = base.substream(r)
        seeds.append(stream.seed)
        episode = sample_episode(es, cfg.k, stream)
        s_idx = episode.support_indices()
        pred = simpleshot_classify(feats[s_idx], es.labels[s_idx], feats[episode.query])
        accs.append(100.0 * float(np.mean(pred == es.labels[episode.query])))
    arr = np.asarray(accs)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return EvalReport(
        k=cfg.k,
        accuracies=accs,
        mean=float(arr.mean()),
        std=std,
        num_classes=len(episode.support),
        num_queries=int(episode.query.size),
        support_sizes={c: int(v.size) for c, v in episode.support.items()},
        run_seeds=seeds,
    )


def random_baseline(num_classes: int) -> float:
    """Expected top-1 accuracy (percent) of uniform guessing."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    return 100.0 / num_classes
