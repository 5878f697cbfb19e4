"""Embedding matrices: binary/CSV ingest, label alignment, dataset splits.

Embeddings are stored in the EMB1 binary format (little endian):

    magic "EMB1" | u32 n | u32 dim | u16 tag_len | tag (UTF-8 source model)
    then n records of [u16 id_len | id bytes | dim x f32]

Binary storage keeps 32-bit values exact; CSV import exists for
interoperability only.
"""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, DataError, FormatError
from .labels import SoftLabelMatrix

_MAGIC = b"EMB1"


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x dim matrix of 32-bit features, one row per sample id."""

    sample_ids: tuple[str, ...]
    data: np.ndarray  # float32, shape (n, dim)
    source_model: str = ""

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 2:
            raise DataError(f"embedding data must be 2-D, got shape {d.shape}")
        if d.shape[0] != len(self.sample_ids):
            raise DataError(
                f"{d.shape[0]} rows but {len(self.sample_ids)} sample ids"
            )
        if d.shape[1] < 1:
            raise DataError("embedding dim must be positive")
        bad = ~np.isfinite(d)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"non-finite value at row {r}, column {c}")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def subset(self, indices: np.ndarray) -> "EmbeddingMatrix":
        ids = tuple(self.sample_ids[i] for i in indices)
        return EmbeddingMatrix(ids, self.data[indices], self.source_model)

    def select_features(self, columns: Sequence[int] | slice) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.sample_ids, self.data[:, columns], self.source_model)


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated payload while reading {what}")
    return buf


def write_embedding_file(m: EmbeddingMatrix, path: str) -> None:
    tag = m.source_model.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIH", m.n, m.dim, len(tag)))
        fh.write(tag)
        for i, sid in enumerate(m.sample_ids):
            sid_b = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(sid_b)))
            fh.write(sid_b)
            fh.write(m.data[i].tobytes())


def read_embedding_file(path: str) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        n, dim, tag_len = struct.unpack("<IIH", _read_exact(fh, 10, "header"))
        if dim < 1:
            raise FormatError(f"{path}: dim must be positive, got {dim}")
        tag = _read_exact(fh, tag_len, "source model tag").decode("utf-8")
        ids: list[str] = []
        data = np.empty((n, dim), dtype=np.float32)
        for i in range(n):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i} id length"))
            ids.append(_read_exact(fh, id_len, f"record {i} id").decode("utf-8"))
            row = _read_exact(fh, 4 * dim, f"record {i} features")
            data[i] = np.frombuffer(row, dtype="<f4")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {n} records")
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise FormatError(f"{path}: non-finite value at row {r}, column {c}")
    return EmbeddingMatrix(tuple(ids), data, tag)


def read_embedding_csv(path: str, source_model: str = "", header: bool = True) -> EmbeddingMatrix:
    """CSV import: first column sample id, remaining columns features."""
    ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        for rowno, row in enumerate(reader, start=2 if header else 1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError as e:
                raise FormatError(f"{path}: row {rowno}: {e}") from None
            ids.append(row[0])
    if not ids:
        raise FormatError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"{path}: inconsistent feature counts {sorted(widths)}")
    return EmbeddingMatrix(tuple(ids), np.asarray(rows, dtype=np.float32), source_model)


@dataclass(frozen=True)
class AlignedDataset:
    """Embeddings and soft labels over the same samples, in the same order."""

    embeddings: EmbeddingMatrix
    labels: SoftLabelMatrix
    dropped_embedding_ids: tuple[str, ...] = ()
    dropped_label_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.embeddings.sample_ids != self.labels.sample_ids:
            raise AlignmentError("embedding and label sample ids differ")

    @property
    def n(self) -> int:
        return self.embeddings.n

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return self.embeddings.sample_ids

    def subset(self, indices: np.ndarray) -> "AlignedDataset":
        return AlignedDataset(self.embeddings.subset(indices), self.labels.subset(indices))


def _index_by_id(ids: Sequence[str], side: str) -> dict[str, int]:
    table = {sid: i for i, sid in enumerate(ids)}
    if len(table) != len(ids):
        raise AlignmentError(f"duplicate sample ids on {side} side")
    return table


def align(embeddings: EmbeddingMatrix, labels: SoftLabelMatrix) -> AlignedDataset:
    """Inner-join on sample id, preserving embedding order.

    Ids present on only one side are reported on the result as
    dropped_embedding_ids / dropped_label_ids.
    """
    label_row = _index_by_id(labels.sample_ids, "label")
    _index_by_id(embeddings.sample_ids, "embedding")
    keep = [i for i, sid in enumerate(embeddings.sample_ids) if sid in label_row]
    if not keep:
        raise AlignmentError("no sample ids in common")
    kept_ids = set(embeddings.sample_ids[i] for i in keep)
    dropped_e = tuple(s for s in embeddings.sample_ids if s not in kept_ids)
    dropped_l = tuple(s for s in labels.sample_ids if s not in kept_ids)
    emb = embeddings.subset(np.asarray(keep, dtype=np.int64))
    lab_rows = np.asarray([label_row[sid] for sid in emb.sample_ids], dtype=np.int64)
    lab = labels.subset(lab_rows)
    return AlignedDataset(emb, lab, dropped_e, dropped_l)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/validation/test index sets covering 0..n-1."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(p, dtype=np.int64) for p in (self.train, self.validation, self.test)]
        for name, p in zip(("train", "validation", "test"), parts):
            object.__setattr__(self, name, p)
        merged = np.concatenate(parts)
        if len(np.unique(merged)) != len(merged):
            raise DataError("split partitions overlap")
        if merged.size and not np.array_equal(np.sort(merged), np.arange(len(merged))):
            raise DataError("split partitions do not cover 0..n-1")


def patient_group_key(sample_id: str) -> str:
    """Group key for CheXpert-style paths: the patientNNN path component."""
    m = re.search(r"patient\d+", sample_id)
    return m.group(0) if m else sample_id


def split_dataset(
    ds: AlignedDataset,
    fractions: tuple[float, float] = (0.99, 0.01),
    seed: int = 0,
    group_key: Callable[[str], str] | None = None,
) -> DatasetSplit:
    """Deterministic train/validation/test split; test takes the remainder.

    With group_key, all samples sharing a key land in the same partition.
    The default fractions follow the convention of tuning on a very small
    validation slice; pass explicit fractions for anything else.
    """
    f_train, f_val = fractions
    if f_train <= 0 or f_val <= 0:
        raise ConfigError("split fractions must be positive")
    if f_train + f_val > 1.0 + 1e-9:
        raise ConfigError("split fractions must sum to at most 1")
    n = ds.n
    if n == 0:
        raise DataError("cannot split an empty dataset")
    n_train = int(round(f_train * n))
    n_val = int(round(f_val * n))
    rng = np.random.default_rng(seed)

    if group_key is None:
        perm = rng.permutation(n)
        train = perm[:n_train]
        val = perm[n_train:n_train + n_val]
        test = perm[n_train + n_val:]
    else:
        keys = [group_key(sid) for sid in ds.sample_ids]
        groups: dict[str, list[int]] = {}
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
        names = list(groups)
        order = rng.permutation(len(names))
        train_l: list[int] = []
        val_l: list[int] = []
        test_l: list[int] = []
        for gi in order:
            members = groups[names[gi]]
            if len(train_l) < n_train:
                train_l.extend(members)
            elif len(val_l) < n_val:
                val_l.extend(members)
            else:
                test_l.extend(members)
        train, val, test = (np.asarray(p, dtype=np.int64) for p in (train_l, val_l, test_l))

    if train.size == 0 or val.size == 0:
        raise DataError("a partition would be empty; adjust fractions or n")
    return DatasetSplit(np.sort(train), np.sort(val), np.sort(test))
