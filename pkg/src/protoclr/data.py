"""Synthetic multi-domain data and EMB1 / CSV embedding-set files."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import RngStream
from .errors import InconsistentRowLength, MalformedHeader, ProtoContrastError, ShapeMismatch, TruncatedPayload
from .prototypes import LabeledBatch

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1
FLAG_DOMAINS = 0x01
FLAG_NAMES = 0x02


@dataclass
class EmbeddingSet:
    """Row features with class ids, optional domain ids and class names.

    Features are held as float32, the storage precision of both file formats.
    """

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray | None = None
    class_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ShapeMismatch(f"features must be 2-D, got shape {self.features.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = self.features.shape[0]
        if self.labels.shape[0] != n:
            raise ShapeMismatch(f"{n} rows but {self.labels.shape[0]} labels")
        if n and self.labels.min() < 0:
            raise ShapeMismatch("labels must be non-negative")
        if self.domains is not None:
            self.domains = np.asarray(self.domains, dtype=np.int64).ravel()
            if self.domains.shape[0] != n:
                raise ShapeMismatch(f"{n} rows but {self.domains.shape[0]} domains")
            if n and self.domains.min() < 0:
                raise ShapeMismatch("domain ids must be non-negative")
        if self.class_names is not None:
            self.class_names = [str(s) for s in self.class_names]
            if n and self.labels.max() >= len(self.class_names):
                raise ShapeMismatch("a label has no entry in the class-name table")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, mask_or_index) -> "EmbeddingSet":
        idx = np.asarray(mask_or_index)
        return EmbeddingSet(
            self.features[idx],
            self.labels[idx],
            None if self.domains is None else self.domains[idx],
            self.class_names,
        )

    def to_batch(self) -> LabeledBatch:
        return LabeledBatch(self.features.astype(np.float64), self.labels, self.domains)

    def equals(self, other: "EmbeddingSet") -> bool:
        """Bit-exact equality of every field."""
        same_domains = (self.domains is None and other.domains is None) or (
            self.domains is not None
            and other.domains is not None
            and np.array_equal(self.domains, other.domains)
        )
        return (
            self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and same_domains
            and self.class_names == other.class_names
        )


# ------------------------------------------------------------------ generator


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    num_domains: int = 1
    dim: int = 16
    samples_per: int = 32  # per (class, domain) cell
    class_separation: float = 3.0
    domain_offset_scale: float = 0.0
    domain_transform: bool = False
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_domains < 1:
            raise ValueError(f"num_domains must be >= 1, got {self.num_domains}")
        if self.dim < 1 or self.samples_per < 1:
            raise ValueError("dim and samples_per must be >= 1")
        for name in ("class_separation", "domain_offset_scale", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}


def random_rotation(dim: int, rng: RngStream) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, signs fixed)."""
    q, r = np.linalg.qr(rng.normal((dim, dim)))
    return q * np.sign(np.diag(r))


def generate(spec: SyntheticSpec) -> EmbeddingSet:
    """Draw ``x = T_dom (mu_class + noise) + offset_dom`` for every cell.

    Class means lie on a sphere of radius ``class_separation``; domain
    offsets are Gaussian with scale ``domain_offset_scale``; ``T_dom`` is a
    random rotation when ``domain_transform`` is set. Rows are ordered by
    domain, then class, then sample.
    """
    rng = RngStream(spec.seed)
    d = spec.dim
    means = spec.class_separation * rng.substream(0).unit_vectors(spec.num_classes, d)
    offsets = spec.domain_offset_scale * rng.substream(1).normal((spec.num_domains, d))
    rot_rng = rng.substream(2)
    noise_rng = rng.substream(3)

    blocks, labels, domains = [], [], []
    for dom in range(spec.num_domains):
        rotation = random_rotation(d, rot_rng.substream(dom)) if spec.domain_transform else None
        for y in range(spec.num_classes):
            pts = means[y] + spec.noise_sigma * noise_rng.normal((spec.samples_per, d))
            if rotation is not None:
                pts = pts @ rotation.T
            blocks.append(pts + offsets[dom])
            labels.append(np.full(spec.samples_per, y))
            domains.append(np.full(spec.samples_per, dom))
    return EmbeddingSet(np.concatenate(blocks), np.concatenate(labels), np.concatenate(domains))


# ------------------------------------------------------------------ EMB1 files


def to_emb_bytes(es: EmbeddingSet) -> bytes:
    flags = (FLAG_DOMAINS if es.domains is not None else 0) | (FLAG_NAMES if es.class_names is not None else 0)
    parts = [EMB_MAGIC, struct.pack("<IIIB", EMB_VERSION, es.n, es.dim, flags)]
    parts.append(np.ascontiguousarray(es.features, dtype="<f4").tobytes())
    parts.append(es.labels.astype("<u4").tobytes())
    if es.domains is not None:
        parts.append(es.domains.astype("<u4").tobytes())
    if es.class_names is not None:
        parts.append(struct.pack("<I", len(es.class_names)))
        for name in es.class_names:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(parts)


def from_emb_bytes(data: bytes) -> EmbeddingSet:
    if len(data) < 17:
        raise MalformedHeader("EMB1 header is shorter than 17 bytes")
    if data[:4] != EMB_MAGIC:
        raise MalformedHeader(f"bad magic {data[:4]!r}")
    version, n, d, flags = struct.unpack_from("<IIIB", data, 4)
    if version != EMB_VERSION:
        raise MalformedHeader(f"unsupported EMB1 version {version}")
    if flags & ~(FLAG_DOMAINS | FLAG_NAMES):
        raise MalformedHeader(f"unknown flag bits {flags:#x}")
    if d < 1:
        raise MalformedHeader("dimension must be >= 1")
    pos = 17

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(data):
            raise TruncatedPayload(f"needed {nbytes} bytes at offset {pos}, file has {len(data)}")
        chunk = data[pos : pos + nbytes]
        pos += nbytes
        return chunk

    features = np.frombuffer(take(4 * n * d), dtype="<f4").reshape(n, d)
    labels = np.frombuffer(take(4 * n), dtype="<u4")
    domains = np.frombuffer(take(4 * n), dtype="<u4") if flags & FLAG_DOMAINS else None
    names = None
    if flags & FLAG_NAMES:
        (count,) = struct.unpack("<I", take(4))
        names = []
        for _ in range(count):
            (length,) = struct.unpack("<I", take(4))
            try:
                names.append(take(length).decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise MalformedHeader(f"class name is not UTF-8: {exc}") from None
    if pos != len(data):
        raise MalformedHeader(f"{len(data) - pos} unexpected trailing bytes")
    return EmbeddingSet(features.copy(), labels.astype(np.int64), None if domains is None else domains.astype(np.int64), names)


# ------------------------------------------------------------------- CSV files


def to_csv_text(es: EmbeddingSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "domain", *(f"f{j}" for j in range(es.dim))])
    domains = es.domains if es.domains is not None else np.full(es.n, -1)
    for row, y, dom in zip(es.features, es.labels, domains):
        # %.9g round-trips float32 exactly
        writer.writerow([int(y), int(dom), *("%.9g" % v for v in row)])
    return buf.getvalue()


def from_csv_text(text: str) -> EmbeddingSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:2] != ["label", "domain"] or len(header) < 3:
        raise MalformedHeader("CSV header must be label,domain,f0,...")
    d = len(header) - 2
    if header[2:] != [f"f{j}" for j in range(d)]:
        raise MalformedHeader("feature columns must be named f0..f{d-1}")
    labels, domains, rows = [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != d + 2:
            raise InconsistentRowLength(f"line {lineno}: {len(rec)} fields, expected {d + 2}")
        try:
            labels.append(int(rec[0]))
            domains.append(int(rec[1]))
            rows.append([float(v) for v in rec[2:]])
        except ValueError as exc:
            raise MalformedHeader(f"line {lineno}: {exc}") from None
    features = np.asarray(rows, dtype=np.float32).reshape(len(rows), d)
    dom = np.asarray(domains, dtype=np.int64)
    if not dom.size or np.all(dom == -1):
        dom = None
    elif np.any(dom < 0):
        raise ProtoContrastError("CSV mixes rows with and without a domain id")
    return EmbeddingSet(features, np.asarray(labels, dtype=np.int64), dom)


# -------------------------------------------------------------- path helpers


def is_csv(path) -> bool:
    return Path(path).suffix.lower() == ".csv"


def save(es: EmbeddingSet, path) -> None:
    """Write EMB1, or CSV when the path ends in ``.csv``."""
    path = Path(path)
    if is_csv(path):
        path.write_text(to_csv_text(es), encoding="utf-8")
    else:
        path.write_bytes(to_emb_bytes(es))


def load(path) -> EmbeddingSet:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == EMB_MAGIC or not is_csv(path):
        return from_emb_bytes(raw)
    return from_csv_text(raw.decode("utf-8"))
