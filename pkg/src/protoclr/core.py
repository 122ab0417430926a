"""Numeric primitives and the seeded random stream used across the package.

Everything here works in float64. Similarities are kept as logits and only
exponentiated inside :func:`log_sum_exp` / :func:`softmax_rows`.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch, EmptyInput, NonPositiveTemperature, ZeroNorm

NORM_FLOOR = 1e-30

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def splitmix64_mix(x: int) -> int:
    """Scalar SplitMix64 finalizer, exposed for substream derivation."""
    return int(_mix(np.array([x & _MASK64], dtype=np.uint64))[0])


class RngStream:
    """SplitMix64 generator.

    The k-th output (k = 1, 2, ...) is ``mix(seed + k * GAMMA)``, so blocks of
    outputs are produced with vectorised uint64 arithmetic and the sequence is
    identical on every platform. A child stream for index ``i`` is seeded with
    ``mix(mix(seed) ^ ((i + 1) * GAMMA))``.

    A stream is single-owner; hand each worker its own :meth:`substream`.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counter = 0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, drawn={self._counter})"

    def substream(self, index: int) -> "RngStream":
        child = splitmix64_mix(self.seed) ^ (((int(index) + 1) * int(_GAMMA)) & _MASK64)
        return RngStream(splitmix64_mix(child))

    def next_u64(self, n: int) -> np.ndarray:
        ks = np.arange(self._counter + 1, self._counter + 1 + n, dtype=np.uint64)
        self._counter += n
        state = np.uint64(self.seed) + ks * _GAMMA
        return _mix(state)

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws on [0, 1) with 53 bits of resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        """Standard normal draws by Box-Muller."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """A uniformly random ordering of ``range(n)``."""
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from ``range(n)``, without replacement."""
        return self.permutation(n)[:k]

    def unit_vectors(self, count: int, dim: int) -> np.ndarray:
        """Rows drawn uniformly from the unit sphere in ``dim`` dimensions."""
        g = self.normal((count, dim))
        return normalize_rows(g)


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.sqrt(np.dot(v, v)))
    if not norm > NORM_FLOOR:
        raise ZeroNorm(f"cannot normalize a vector with norm {norm:g}")
    return v / norm


def normalize_rows(m) -> np.ndarray:
    """Row-wise :func:`l2_normalize` for a matrix."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if m.shape[0] and not np.all(norms > NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise ZeroNorm(f"row {bad} has norm {norms[bad]:g}")
    return m / norms[:, None]


def log_sum_exp(xs) -> float:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        raise EmptyInput("log_sum_exp of an empty sequence")
    m = xs.max()
    return float(m + np.log(np.sum(np.exp(xs - m))))


def log_sum_exp_rows(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-sum-exp; entries where ``mask`` is False are excluded."""
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True)))[:, 0]


def softmax_rows(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def check_temperature(tau: float) -> float:
    tau = float(tau)
    if not tau > 0 or not np.isfinite(tau):
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    return tau


def scaled_similarity(a, b, tau: float) -> float:
    """The logit (a . b) / tau."""
    tau = check_temperature(tau)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b) / tau)
