"""Labeled feature datasets, their on-disk format, and episode sampling.

A FeatureDataset is an immutable collection of fixed-width float64 feature
vectors with dense integer class ids. Episodes are N-way k-shot q-query
selections of dataset indices; support rows always come before query rows,
so row r of an episode's vertex matrix is a support vector iff r < N*k.

Binary feature-store layout, little-endian throughout:

    magic   b"CFSL"
    u32     format version (currently 1)
    u64     record count
    u32     feature dimension
    record  u32 class_id followed by dim float64 values, repeated
    u64     byte length of the class-name block (0 when absent)
    UTF-8   "id<TAB>name" lines, one per named class

Float payloads round-trip bit-exactly; saving the same dataset twice
produces byte-identical files.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, InfeasibleTaskError
from .rng import make_rng

_MAGIC = b"CFSL"
_VERSION = 1
_HEADER = struct.Struct("<IQI")  # version, record count, dimension


@dataclass(frozen=True)
class FeatureDataset:
    """Immutable labeled feature collection.

    Attributes:
        dim: Width of every feature vector.
        class_ids: int64 array of shape (n,), dense in [0, C).
        vectors: float64 array of shape (n, dim), all entries finite.
        class_names: Optional map from class id to a text label.
    """

    dim: int
    class_ids: np.ndarray
    vectors: np.ndarray
    class_names: dict[int, str] | None = None

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        class_ids = np.array(self.class_ids, dtype=np.int64, copy=True)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValueError(
                f"vectors must have shape (n, {self.dim}), got {vectors.shape}"
            )
        if class_ids.ndim != 1 or class_ids.shape[0] != vectors.shape[0]:
            raise ValueError("class_ids must be one id per vector")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("feature vectors must be finite")
        if class_ids.size:
            if class_ids.min() < 0:
                raise ValueError("class ids must be non-negative")
            present = np.unique(class_ids)
            if present.size != class_ids.max() + 1:
                raise ValueError("class ids must be dense in [0, C)")
        if self.class_names is not None:
            n_classes = int(class_ids.max()) + 1 if class_ids.size else 0
            for cid in self.class_names:
                if not 0 <= cid < n_classes:
                    raise ValueError(f"class name for absent class id {cid}")
        vectors.setflags(write=False)
        class_ids.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "class_ids", class_ids)

    @property
    def n_records(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.class_ids.max()) + 1 if self.class_ids.size else 0

    def indices_of_class(self, class_id: int) -> np.ndarray:
        """Dataset indices of one class, in ascending order."""
        return np.flatnonzero(self.class_ids == class_id)


@dataclass(frozen=True)
class EpisodeSpec:
    """Shape of an N-way k-shot q-query task."""

    n_way: int
    k_shot: int
    q_query: int

    def __post_init__(self) -> None:
        if self.n_way < 2:
            raise ValueError("n_way must be at least 2")
        if self.k_shot < 1 or self.q_query < 1:
            raise ValueError("k_shot and q_query must be at least 1")


@dataclass(frozen=True)
class Episode:
    """One sampled task: dataset indices plus their episode labels.

    support and query are lists of (dataset_index, episode_label) pairs,
    grouped by episode label. class_map[label] is the dataset class id the
    episode label was drawn from.
    """

    spec: EpisodeSpec
    support: tuple[tuple[int, int], ...]
    query: tuple[tuple[int, int], ...]
    class_map: tuple[int, ...]

    @property
    def support_labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.support], dtype=np.int64)

    @property
    def query_labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.query], dtype=np.int64)

    def vertex_matrix(self, dataset: FeatureDataset) -> np.ndarray:
        """Feature rows for this episode, support rows first."""
        idx = [i for i, _ in self.support] + [i for i, _ in self.query]
        return dataset.vectors[idx].copy()


# --- binary store -------------------------------------------------------


def save_features(dataset: FeatureDataset, path: str) -> None:
    """Write a dataset to the binary feature-store format."""
    parts = [_MAGIC, _HEADER.pack(_VERSION, dataset.n_records, dataset.dim)]
    ids = dataset.class_ids
    vecs = dataset.vectors
    for i in range(dataset.n_records):
        parts.append(struct.pack("<I", int(ids[i])))
        parts.append(vecs[i].astype("<f8", copy=False).tobytes())
    if dataset.class_names:
        lines = "".join(
            f"{cid}\t{dataset.class_names[cid]}\n" for cid in sorted(dataset.class_names)
        )
        block = lines.encode("utf-8")
        parts.append(struct.pack("<Q", len(block)))
        parts.append(block)
    else:
        parts.append(struct.pack("<Q", 0))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_features(path: str) -> FeatureDataset:
    """Read a feature store written by save_features.

    Raises:
        FileNotFoundError: path does not exist.
        DataFormatError: bad magic or version, truncated payload,
            non-finite values, or invariant-breaking class ids.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(_MAGIC) + _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    if buf[:4] != _MAGIC:
        raise DataFormatError(
            f"{path}: bad magic {buf[:4]!r}, expected {_MAGIC!r}"
        )
    version, count, dim = _HEADER.unpack_from(buf, 4)
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise DataFormatError(f"{path}: invalid dimension {dim}")
    off = 4 + _HEADER.size
    rec_size = 4 + 8 * dim
    need = off + count * rec_size + 8
    if len(buf) < need:
        raise DataFormatError(
            f"{path}: truncated payload, need {need} bytes, have {len(buf)}"
        )
    ids = np.empty(count, dtype=np.int64)
    vecs = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        (ids[i],) = struct.unpack_from("<I", buf, off)
        off += 4
        vecs[i] = np.frombuffer(buf, dtype="<f8", count=dim, offset=off)
        off += 8 * dim
    (name_len,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if len(buf) < off + name_len:
        raise DataFormatError(f"{path}: truncated class-name block")
    names: dict[int, str] | None = None
    if name_len:
        names = {}
        for line in buf[off : off + name_len].decode("utf-8").splitlines():
            cid_text, _, name = line.partition("\t")
            names[int(cid_text)] = name
    if not np.all(np.isfinite(vecs)):
        raise DataFormatError(f"{path}: non-finite feature values")
    try:
        return FeatureDataset(dim=dim, class_ids=ids, vectors=vecs, class_names=names)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


# --- text import --------------------------------------------------------


def import_csv(path: str) -> FeatureDataset:
    """Import "label,f1,...,fn" rows into a dataset.

    The first line may be a header; it is skipped when its feature fields
    do not parse as numbers. Labels become dense class ids in order of
    first appearance and are kept as class names.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows: list[tuple[str, list[float]]] = []
    dim: int | None = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 2:
            raise DataFormatError(f"{path}:{lineno}: expected label and features")
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError:
            if lineno == 1:
                continue  # header
            raise DataFormatError(
                f"{path}:{lineno}: non-numeric feature field"
            ) from None
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise DataFormatError(
                f"{path}:{lineno}: expected {dim} features, got {len(values)}"
            )
        rows.append((fields[0], values))
    if not rows or dim is None:
        raise DataFormatError(f"{path}: no data rows")
    label_to_id: dict[str, int] = {}
    for label, _ in rows:
        if label not in label_to_id:
            label_to_id[label] = len(label_to_id)
    ids = np.array([label_to_id[label] for label, _ in rows], dtype=np.int64)
    vecs = np.array([values for _, values in rows], dtype=np.float64)
    if not np.all(np.isfinite(vecs)):
        raise DataFormatError(f"{path}: non-finite feature values")
    names = {cid: label for label, cid in label_to_id.items()}
    return FeatureDataset(dim=dim, class_ids=ids, vectors=vecs, class_names=names)


# --- episode sampling ---------------------------------------------------


def sample_episode(dataset: FeatureDataset, spec: EpisodeSpec, seed: int) -> Episode:
    """Draw an episode without replacement, deterministically in the seed.

    Episode labels 0..N-1 are assigned in the order classes are drawn.
    Within a class, the first k drawn records are support and the next q
    are query; no record appears twice.

    Raises:
        InfeasibleTaskError: fewer than n_way classes, or a chosen class
            has fewer than k_shot + q_query records.
    """
    if dataset.n_classes < spec.n_way:
        raise InfeasibleTaskError(
            f"need {spec.n_way} classes, dataset has {dataset.n_classes}"
        )
    rng = make_rng(seed)
    chosen = rng.choice(dataset.n_classes, size=spec.n_way, replace=False)
    per_class = spec.k_shot + spec.q_query
    support: list[tuple[int, int]] = []
    query: list[tuple[int, int]] = []
    for label, class_id in enumerate(chosen):
        pool = dataset.indices_of_class(int(class_id))
        if pool.size < per_class:
            raise InfeasibleTaskError(
                f"class {int(class_id)} has {pool.size} records, "
                f"episode needs {per_class}"
            )
        picked = pool[rng.choice(pool.size, size=per_class, replace=False)]
        support.extend((int(i), label) for i in picked[: spec.k_shot])
        query.extend((int(i), label) for i in picked[spec.k_shot :])
    return Episode(
        spec=spec,
        support=tuple(support),
        query=tuple(query),
        class_map=tuple(int(c) for c in chosen),
    )
