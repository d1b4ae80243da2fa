"""Synthetic IDD/OOD generators and file readers (IDX, CSV).

Blob generation consumes one ``Xoshiro256pp(seed)`` stream in this order:

1. IDD centroids: for each class, ``dim`` normals, normalized to unit length
   and scaled by ``separation``.
2. OOD centroids: for each OOD class ``j``, ``dim`` normals normalized to a
   unit direction ``u``; the centroid is ``fraction * separation * u``, so it
   sits at radius ``fraction`` times the IDD radius.
3. IDD samples, class by class: centroid + ``dim`` standard normals each.
4. OOD samples, class by class, likewise.

Rings replace step 1-2 by radii (class ``c`` at ``separation * (c + 1)``, OOD
at ``separation * (class_count + fraction)``) and draw, per sample, one
uniform angle followed by ``dim`` noise normals; the ring lives in the first
two coordinates.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from gradova.rng import Xoshiro256pp

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
OOD_LABEL = -1


class DataFormatError(ValueError):
    pass


@dataclass
class OodSpec:
    class_count: int = 1
    samples_per_class: int = 1000
    fraction: float = 0.6

    def validate(self) -> None:
        if self.class_count < 1 or self.samples_per_class < 0:
            raise ValueError("ood: class_count must be >= 1 and samples_per_class >= 0")
        if self.fraction < 0:
            raise ValueError("ood: fraction must be >= 0")


@dataclass
class DatasetSpec:
    kind: str = "blobs"
    class_count: int = 4
    dim: int = 8
    samples_per_class: int = 250
    separation: float = 6.0
    seed: int = 0
    ood: OodSpec | None = field(default_factory=OodSpec)
    path: str | None = None
    labels_path: str | None = None
    has_label: bool = True

    def validate(self) -> None:
        if self.kind not in ("blobs", "rings", "idx_file", "csv_file"):
            raise ValueError(f"kind: unknown dataset kind {self.kind!r}")
        if self.kind in ("idx_file", "csv_file"):
            if not self.path:
                raise ValueError("path: file datasets need a path")
            return
        if self.class_count < 1:
            raise ValueError("class_count: must be >= 1")
        if self.dim < 1 or (self.kind == "rings" and self.dim < 2):
            raise ValueError("dim: too small for this kind")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class: must be >= 1")
        if not self.separation >= 0:
            raise ValueError("separation: must be >= 0")
        if self.ood is not None:
            self.ood.validate()

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"{sorted(unknown)[0]}: unknown dataset field")
        ood = doc.pop("ood", {})
        spec = cls(**doc, ood=None if ood is None else OodSpec(**ood))
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    """Samples as rows. ``labels`` is -1 where no class label exists."""

    features: np.ndarray
    labels: np.ndarray
    is_ood: np.ndarray

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.is_ood[idx])

    @property
    def idd(self) -> "Dataset":
        return self.subset(np.flatnonzero(~self.is_ood))

    @property
    def ood(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.is_ood))

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.is_ood for p in parts]),
        )


def _unit_rows(stream: Xoshiro256pp, n: int, dim: int) -> np.ndarray:
    v = stream.normal((n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def generate(spec: DatasetSpec) -> Dataset:
    """Deterministic IDD (+ optional OOD) sample set for a generator spec."""
    spec.validate()
    if spec.kind == "blobs":
        return _blobs(spec)
    if spec.kind == "rings":
        return _rings(spec)
    if spec.kind == "idx_file":
        return read_idx(spec.path, spec.labels_path)
    return read_csv(spec.path, spec.has_label)


def _blobs(spec: DatasetSpec) -> Dataset:
    stream = Xoshiro256pp(spec.seed)
    k, d, n = spec.class_count, spec.dim, spec.samples_per_class
    centroids = spec.separation * _unit_rows(stream, k, d)
    ood = spec.ood
    ood_centroids = np.zeros((0, d))
    if ood is not None:
        offsets = _unit_rows(stream, ood.class_count, d)
        ood_centroids = ood.fraction * spec.separation * offsets
    feats, labels, tags = [], [], []
    for c in range(k):
        feats.append(centroids[c] + stream.normal((n, d)))
        labels.append(np.full(n, c))
        tags.append(np.zeros(n, dtype=bool))
    if ood is not None:
        m = ood.samples_per_class
        for j in range(ood.class_count):
            feats.append(ood_centroids[j] + stream.normal((m, d)))
            labels.append(np.full(m, OOD_LABEL))
            tags.append(np.ones(m, dtype=bool))
    return Dataset(np.concatenate(feats), np.concatenate(labels).astype(np.int64), np.concatenate(tags))


def _ring_samples(stream: Xoshiro256pp, radius: float, n: int, dim: int) -> np.ndarray:
    out = np.empty((n, dim))
    for i in range(n):
        theta = 2.0 * np.pi * stream.uniform()
        out[i] = stream.normal((dim,))
        out[i, 0] += radius * np.cos(theta)
        out[i, 1] += radius * np.sin(theta)
    return out


def _rings(spec: DatasetSpec) -> Dataset:
    stream = Xoshiro256pp(spec.seed)
    k, d, n = spec.class_count, spec.dim, spec.samples_per_class
    feats, labels, tags = [], [], []
    for c in range(k):
        feats.append(_ring_samples(stream, spec.separation * (c + 1), n, d))
        labels.append(np.full(n, c))
        tags.append(np.zeros(n, dtype=bool))
    if spec.ood is not None:
        radius = spec.separation * (k + spec.ood.fraction)
        for _ in range(spec.ood.class_count):
            m = spec.ood.samples_per_class
            feats.append(_ring_samples(stream, radius, m, d))
            labels.append(np.full(m, OOD_LABEL))
            tags.append(np.ones(m, dtype=bool))
    return Dataset(np.concatenate(feats), np.concatenate(labels).astype(np.int64), np.concatenate(tags))


# -- IDX ---------------------------------------------------------------------


def _read_header(blob: bytes, path) -> tuple[int, tuple[int, ...], int]:
    if len(blob) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(blob) < end:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", blob[4:end])
    return magic, dims, end


def _read_idx_array(path) -> tuple[int, np.ndarray]:
    blob = Path(path).read_bytes()
    magic, dims, offset = _read_header(blob, path)
    expected = int(np.prod(dims, dtype=np.int64))
    payload = blob[offset:]
    if len(payload) < expected:
        raise DataFormatError(f"{path}: truncated: header promises {dims[0]} records, "
                              f"found {len(payload)} of {expected} bytes")
    return magic, np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)


def read_idx(path, labels_path=None) -> Dataset:
    """Read an IDX image file (and optional label file) scaled to [0, 1]."""
    magic, images = _read_idx_array(path)
    if magic != IDX_IMAGES:
        raise DataFormatError(f"{path}: expected image magic 0x{IDX_IMAGES:08x}")
    n = images.shape[0]
    features = images.reshape(n, -1).astype(np.float64) / 255.0
    labels = np.full(n, OOD_LABEL, dtype=np.int64)
    if labels_path is not None:
        lmagic, raw = _read_idx_array(labels_path)
        if lmagic != IDX_LABELS:
            raise DataFormatError(f"{labels_path}: expected label magic 0x{IDX_LABELS:08x}")
        if len(raw) != n:
            raise DataFormatError(f"label count {len(raw)} != image count {n}")
        labels = raw.astype(np.int64)
    return Dataset(features, labels, np.zeros(n, dtype=bool))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = IDX_LABELS if array.ndim == 1 else IDX_IMAGES
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


# -- CSV ---------------------------------------------------------------------


def read_csv(path, has_label: bool = False) -> Dataset:
    """Numeric CSV, one sample per row; optional integer label in the last column.

    A label of -1 marks an OOD sample.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(f"{path}:{lineno}: ragged row ({len(rows[-1])} vs {len(rows[0])} cells)")
    if not rows:
        return Dataset(np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))
    table = np.array(rows, dtype=np.float64)
    if not has_label:
        n = len(table)
        return Dataset(table, np.full(n, OOD_LABEL, dtype=np.int64), np.zeros(n, dtype=bool))
    raw = table[:, -1]
    if np.any(raw != np.round(raw)):
        raise DataFormatError(f"{path}: label column holds non-integers")
    labels = raw.astype(np.int64)
    return Dataset(table[:, :-1], labels, labels == OOD_LABEL)


def write_csv(path, dataset: Dataset, with_label: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for x, y in zip(dataset.features, dataset.labels):
            cells = [repr(float(v)) for v in x]
            if with_label:
                cells.append(str(int(y)))
            writer.writerow(cells)
