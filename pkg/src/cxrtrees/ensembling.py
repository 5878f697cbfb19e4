"""Combining classifier outputs: plain and entropy-weighted averaging, stacking.

The operand is a prediction matrix: N classifiers x L labels of probabilities
for one input.  Entropy weighting scores each classifier's confidence as one
minus the Bernoulli entropy of its output; the "literal" mode applies those
weights without normalizing (and can leave [0, 1]), the default "normalized"
mode divides by the weight sum so the result stays a probability.

Column reductions sum terms in sorted order, so every combination strategy is
bit-exactly invariant under permutation of the classifier rows.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, DataError, FormatError
from .labels import SoftLabelMatrix
from .store import AlignedDataset, EmbeddingMatrix
from .trees import (
    ForestHyperparams,
    TreeEnsembleModel,
    read_model,
    train_random_forest,
    write_model,
)

_STACK_MAGIC = b"STK1"

#: Weight sums below this fall back to plain averaging for that label.
WEIGHT_FLOOR = 1e-12

ENSEMBLE_MODES = ("normalized", "literal")


@dataclass(frozen=True)
class PredictionMatrix:
    """Per-classifier, per-label probabilities for a single input."""

    classifier_names: tuple[str, ...]
    labels: tuple[str, ...]
    values: np.ndarray  # float64, shape (N, L)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape != (len(self.classifier_names), len(self.labels)):
            raise DataError(
                f"values shape {v.shape} inconsistent with "
                f"{len(self.classifier_names)} classifiers x {len(self.labels)} labels"
            )
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise DataError("prediction matrix entries must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "classifier_names", tuple(self.classifier_names))
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class EnsembleOutput:
    """Combined per-label probabilities for one input."""

    labels: tuple[str, ...]
    values: np.ndarray  # float64, shape (L,)
    fallback_labels: tuple[str, ...] = ()


def _sorted_sum(terms: np.ndarray) -> float:
    # Canonical summation order makes the reduction permutation invariant.
    return float(np.sum(np.sort(terms)))


def _column_mean(col: np.ndarray) -> float:
    if col[0] == col.min() == col.max():
        return float(col[0])
    return _sorted_sum(col) / len(col)


def simple_average(P: PredictionMatrix) -> EnsembleOutput:
    """Unweighted mean over classifiers, per label."""
    if P.values.shape[0] == 0:
        raise DataError("empty prediction matrix")
    out = np.array([_column_mean(P.values[:, j]) for j in range(len(P.labels))])
    return EnsembleOutput(P.labels, out)


def bernoulli_entropy(p):
    """Base-2 entropy of a Bernoulli(p) variable, with 0*log2(0) taken as 0.

    Accepts a scalar or an array; values outside [0, 1] are rejected.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (np.min(arr) < 0.0 or np.max(arr) > 1.0):
        raise DataError("probability outside [0, 1]")
    out = np.zeros_like(arr)
    interior = (arr > 0.0) & (arr < 1.0)
    q = arr[interior]
    out[interior] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    if np.isscalar(p) or arr.ndim == 0:
        return float(out)
    return out


def entropy_weighted_average(P: PredictionMatrix, mode: str = "normalized") -> EnsembleOutput:
    """Average each label's predictions weighted by classifier confidence.

    Confidence is 1 - H(p).  "literal" applies the weighted sum as-is;
    "normalized" (default) divides by the summed weights and falls back to
    the plain average for labels whose weights all vanish (flagged on the
    result).  Normalized outputs are clamped to the column's range, making
    them true convex combinations.
    """
    if mode not in ENSEMBLE_MODES:
        raise ConfigError(f"mode must be one of {ENSEMBLE_MODES}, got {mode!r}")
    if P.values.shape[0] == 0:
        raise DataError("empty prediction matrix")
    weights = 1.0 - bernoulli_entropy(P.values)
    out = np.empty(len(P.labels), dtype=np.float64)
    fallback: list[str] = []
    for j, label in enumerate(P.labels):
        col = P.values[:, j]
        w = weights[:, j]
        if mode == "literal":
            out[j] = _sorted_sum(w * col)
            continue
        w_sum = _sorted_sum(w)
        if w_sum < WEIGHT_FLOOR:
            fallback.append(label)
            out[j] = _column_mean(col)
        elif col.min() == col.max():
            out[j] = col[0]
        else:
            y = _sorted_sum(w * col) / w_sum
            out[j] = min(max(y, float(col.min())), float(col.max()))
    return EnsembleOutput(P.labels, out, tuple(fallback))


@dataclass(frozen=True)
class PredictionSet:
    """Predictions of N classifiers over n samples and L labels."""

    classifier_names: tuple[str, ...]
    labels: tuple[str, ...]
    sample_ids: tuple[str, ...]
    values: np.ndarray  # float64, shape (N, n, L)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        expected = (len(self.classifier_names), len(self.sample_ids), len(self.labels))
        if v.shape != expected:
            raise DataError(f"values shape {v.shape}, expected {expected}")
        if len(set(self.classifier_names)) != len(self.classifier_names):
            raise DataError("duplicate classifier names")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def single(
        cls,
        classifier: str,
        labels: Sequence[str],
        sample_ids: Sequence[str],
        matrix: np.ndarray,
    ) -> "PredictionSet":
        return cls((classifier,), tuple(labels), tuple(sample_ids), matrix[None, :, :])

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def matrix_for(self, sample_index: int) -> PredictionMatrix:
        return PredictionMatrix(
            self.classifier_names, self.labels, self.values[:, sample_index, :]
        )

    @classmethod
    def combine(cls, sets: Sequence["PredictionSet"]) -> "PredictionSet":
        """Stack several prediction sets over their common samples.

        Labels must agree (order taken from the first set); samples are
        inner-joined in the first set's order.
        """
        if not sets:
            raise DataError("no prediction sets to combine")
        first = sets[0]
        names: list[str] = []
        common = set(first.sample_ids)
        for ps in sets:
            if set(ps.labels) != set(first.labels):
                raise AlignmentError("prediction sets disagree on label sets")
            names.extend(ps.classifier_names)
            common &= set(ps.sample_ids)
        if len(set(names)) != len(names):
            raise AlignmentError(f"duplicate classifier names across sets: {names}")
        if not common:
            raise AlignmentError("no sample ids in common")
        ids = tuple(s for s in first.sample_ids if s in common)
        blocks = []
        for ps in sets:
            row_of = {sid: i for i, sid in enumerate(ps.sample_ids)}
            rows = [row_of[s] for s in ids]
            cols = [ps.labels.index(lab) for lab in first.labels]
            blocks.append(ps.values[:, rows, :][:, :, cols])
        return cls(tuple(names), first.labels, ids, np.concatenate(blocks, axis=0))


def _decimal12(v: float) -> str:
    # 12 significant digits, zero-padded, so reparsing is stable.
    return np.format_float_positional(v, precision=12, unique=False, fractional=False)


def write_predictions_csv(pset: PredictionSet, path: str) -> None:
    """Columns: classifier, sample_id, then one probability per label
    (12 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["classifier", "sample_id", *pset.labels])
        for ci, cname in enumerate(pset.classifier_names):
            for si, sid in enumerate(pset.sample_ids):
                writer.writerow(
                    [cname, sid, *(_decimal12(v) for v in pset.values[ci, si])]
                )


def read_predictions_csv(path: str) -> PredictionSet:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[:2] != ["classifier", "sample_id"]:
            raise FormatError(f"{path}: expected header classifier,sample_id,<labels>")
        labels = tuple(header[2:])
        by_classifier: dict[str, tuple[list[str], list[list[float]]]] = {}
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {rowno} has {len(row)} fields")
            ids, vals = by_classifier.setdefault(row[0], ([], []))
            ids.append(row[1])
            try:
                vals.append([float(c) for c in row[2:]])
            except ValueError as e:
                raise FormatError(f"{path}: row {rowno}: {e}") from None
    if not by_classifier:
        raise FormatError(f"{path}: no prediction rows")
    names = tuple(by_classifier)
    first_ids = tuple(by_classifier[names[0]][0])
    data = np.empty((len(names), len(first_ids), len(labels)), dtype=np.float64)
    for ci, cname in enumerate(names):
        ids, vals = by_classifier[cname]
        if tuple(ids) != first_ids:
            raise AlignmentError(
                f"{path}: classifier {cname!r} covers different samples "
                f"than {names[0]!r}"
            )
        data[ci] = np.asarray(vals)
    return PredictionSet(names, labels, first_ids, data)


#: Meta-learner defaults used when no hyperparameters are supplied.
DEFAULT_META_HP = ForestHyperparams(
    n_estimators=1400, max_depth=30, min_samples_split=5, min_samples_leaf=1
)


@dataclass(frozen=True, eq=False)
class StackingModel:
    """Per-label forest meta-learners over base classifier outputs."""

    base_names: tuple[str, ...]
    labels: tuple[str, ...]
    meta: tuple[TreeEnsembleModel, ...]  # one single-label model per label


def stack_train(
    base_predictions: PredictionSet,
    targets: SoftLabelMatrix,
    meta_hp: ForestHyperparams | None = None,
    n_threads: int = 1,
) -> StackingModel:
    """Train one meta-forest per label on the base classifiers' outputs.

    For sample j and label i the meta features are the T base outputs
    (z_j1 .. z_jT).  The caller must hold out the meta set from base
    classifier training.
    """
    hp = meta_hp if meta_hp is not None else DEFAULT_META_HP
    if base_predictions.n_samples == 0:
        raise DataError("empty meta training set")
    row_of = {sid: i for i, sid in enumerate(targets.sample_ids)}
    missing_ids = [s for s in base_predictions.sample_ids if s not in row_of]
    if missing_ids:
        raise AlignmentError(
            f"targets lack {len(missing_ids)} meta samples (first: {missing_ids[0]!r})"
        )
    rows = np.asarray([row_of[s] for s in base_predictions.sample_ids], dtype=np.int64)
    targets = targets.subset(rows)

    missing = [lab for lab in base_predictions.labels if lab not in targets.label_names]
    if missing:
        raise AlignmentError(f"targets missing labels: {missing}")

    metas = []
    for li, label in enumerate(base_predictions.labels):
        Z = np.ascontiguousarray(base_predictions.values[:, :, li].T, dtype=np.float32)
        emb = EmbeddingMatrix(base_predictions.sample_ids, Z, source_model=f"stack:{label}")
        soft = SoftLabelMatrix(
            base_predictions.sample_ids, (label,), targets.column(label).reshape(-1, 1)
        )
        metas.append(
            train_random_forest(AlignedDataset(emb, soft), (label,), hp, n_threads=n_threads)
        )
    return StackingModel(base_predictions.classifier_names, base_predictions.labels, tuple(metas))


def _base_permutation(model: StackingModel, names: Sequence[str]) -> list[int]:
    if set(names) != set(model.base_names):
        raise DataError(
            f"classifier set mismatch: model expects {sorted(model.base_names)}, "
            f"got {sorted(names)}"
        )
    return [names.index(b) for b in model.base_names]


def stack_predict(model: StackingModel, P: PredictionMatrix) -> EnsembleOutput:
    """Apply the meta-learners to one prediction matrix.

    Classifier rows are matched by name, so row order does not matter.
    """
    perm = _base_permutation(model, P.classifier_names)
    out = np.empty(len(model.labels), dtype=np.float64)
    for li, label in enumerate(model.labels):
        if label not in P.labels:
            raise DataError(f"prediction matrix missing label {label!r}")
        col = P.labels.index(label)
        z = P.values[perm, col].reshape(1, -1)
        out[li] = model.meta[li].predict(z)[0, 0]
    return EnsembleOutput(model.labels, out)


def stack_predict_set(model: StackingModel, pset: PredictionSet) -> np.ndarray:
    """Batch form of stack_predict: one row of combined outputs per sample."""
    perm = _base_permutation(model, pset.classifier_names)
    out = np.empty((pset.n_samples, len(model.labels)), dtype=np.float64)
    for li, label in enumerate(model.labels):
        if label not in pset.labels:
            raise DataError(f"prediction set missing label {label!r}")
        col = pset.labels.index(label)
        Z = pset.values[perm, :, col].T
        out[:, li] = model.meta[li].predict(Z)[:, 0]
    return out


def write_stacking_model(model: StackingModel, fh: BinaryIO) -> None:
    fh.write(_STACK_MAGIC)
    fh.write(struct.pack("<H", len(model.base_names)))
    for name in model.base_names:
        b = name.encode("utf-8")
        fh.write(struct.pack("<H", len(b)))
        fh.write(b)
    fh.write(struct.pack("<H", len(model.labels)))
    for li, label in enumerate(model.labels):
        b = label.encode("utf-8")
        fh.write(struct.pack("<H", len(b)))
        fh.write(b)
        blob = io.BytesIO()
        write_model(model.meta[li], blob)
        payload = blob.getvalue()
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def read_stacking_model(fh: BinaryIO) -> StackingModel:
    def need(count: int, what: str) -> bytes:
        buf = fh.read(count)
        if len(buf) != count:
            raise FormatError(f"truncated stacking file while reading {what}")
        return buf

    magic = fh.read(4)
    if magic != _STACK_MAGIC:
        raise FormatError(f"bad stacking magic {magic!r}")
    (n_base,) = struct.unpack("<H", need(2, "base count"))
    base = tuple(
        need(struct.unpack("<H", need(2, "base name len"))[0], "base name").decode("utf-8")
        for _ in range(n_base)
    )
    (n_labels,) = struct.unpack("<H", need(2, "label count"))
    labels = []
    metas = []
    for _ in range(n_labels):
        (ln,) = struct.unpack("<H", need(2, "label name len"))
        labels.append(need(ln, "label name").decode("utf-8"))
        (blob_len,) = struct.unpack("<I", need(4, "model blob len"))
        metas.append(read_model(io.BytesIO(need(blob_len, "model blob"))))
    if fh.read(1):
        raise FormatError("trailing bytes after stacking payload")
    return StackingModel(base, tuple(labels), tuple(metas))


def write_stacking_file(model: StackingModel, path: str) -> None:
    with open(path, "wb") as fh:
        write_stacking_model(model, fh)


def read_stacking_file(path: str) -> StackingModel:
    with open(path, "rb") as fh:
        return read_stacking_model(fh)
