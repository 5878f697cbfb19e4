"""Finding labels, the label hierarchy, raw annotations, and soft targets.

Annotations arrive as CheXpert-style CSV rows over {1, 0, -1, blank}.  The
uncertain class (-1) is mapped to a soft target drawn from U(a, b) with
b > a > 0.5, so downstream regressors see "probably positive" rather than a
hard guess.  Draws are keyed by (seed, sample index, label index) and are
reproducible regardless of iteration order.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, HierarchyError
from .hashing import mix_key, uniform_matrix


class AnnotationValue(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    UNCERTAIN = 2
    UNMENTIONED = 3


#: CSV cell spellings accepted for each annotation class.
_CELL_CODES = {
    "1": AnnotationValue.POSITIVE,
    "1.0": AnnotationValue.POSITIVE,
    "0": AnnotationValue.NEGATIVE,
    "0.0": AnnotationValue.NEGATIVE,
    "-1": AnnotationValue.UNCERTAIN,
    "-1.0": AnnotationValue.UNCERTAIN,
    "u": AnnotationValue.UNCERTAIN,
}

_ID_COLUMNS = ("sample_id", "Path")

UNMENTIONED_POLICIES = ("negative", "uncertain", "drop-sample")

#: The 14 CheXpert findings, in the conventional order.
DEFAULT_FINDINGS = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)

#: The five findings most evaluation work concentrates on.
FOCUS_FINDINGS = (
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Pleural Effusion",
)


@dataclass(frozen=True)
class FindingLabel:
    """One finding: a dense integer id, a unique name, and a focus flag."""

    id: int
    name: str
    is_focus: bool = False


class LabelRegistry:
    """Ordered set of findings with dense ids 0..L-1 and unique names."""

    def __init__(self, labels: Sequence[FindingLabel]):
        labels = tuple(labels)
        ids = [lab.id for lab in labels]
        if ids != list(range(len(labels))):
            raise ConfigError("label ids must be dense 0..L-1 in order")
        names = [lab.name for lab in labels]
        if len(set(names)) != len(names):
            raise ConfigError("label names must be unique")
        self._labels = labels
        self._by_name = {lab.name: lab.id for lab in labels}

    @classmethod
    def from_names(cls, names: Sequence[str], focus: Sequence[str] = ()) -> "LabelRegistry":
        focus_set = set(focus)
        unknown = focus_set - set(names)
        if unknown:
            raise ConfigError(f"focus labels not in registry: {sorted(unknown)}")
        return cls([FindingLabel(i, n, n in focus_set) for i, n in enumerate(names)])

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self._labels)

    @property
    def focus_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self._labels if lab.is_focus)

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"unknown label name: {name!r}") from None

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self) -> Iterator[FindingLabel]:
        return iter(self._labels)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelRegistry) and self._labels == other._labels


def default_registry() -> LabelRegistry:
    """The 14 CheXpert findings with the usual five focus labels flagged."""
    return LabelRegistry.from_names(DEFAULT_FINDINGS, focus=FOCUS_FINDINGS)


@dataclass(frozen=True)
class HierarchyReport:
    """Outcome of hierarchy validation, in label names."""

    roots: tuple[str, ...]
    internal: tuple[str, ...]
    leaves: tuple[str, ...]


@dataclass(frozen=True)
class LabelHierarchy:
    """Forest of parent links over a registry: child id -> parent id."""

    registry: LabelRegistry
    parent: Mapping[int, int] = field(default_factory=dict)

    @classmethod
    def empty(cls, registry: LabelRegistry) -> "LabelHierarchy":
        return cls(registry, {})

    @classmethod
    def from_name_pairs(
        cls, registry: LabelRegistry, pairs: Sequence[tuple[str, str]]
    ) -> "LabelHierarchy":
        parent: dict[int, int] = {}
        for child, par in pairs:
            cid = registry.id_of(child)
            if cid in parent:
                raise HierarchyError(f"label {child!r} assigned two parents")
            parent[cid] = registry.id_of(par)
        return cls(registry, parent)

    def internal_ids(self) -> tuple[int, ...]:
        """Labels that have at least one child."""
        return tuple(sorted(set(self.parent.values())))

    def leaf_ids(self) -> tuple[int, ...]:
        internal = set(self.parent.values())
        return tuple(i for i in range(len(self.registry)) if i not in internal)

    def ancestors(self, label_id: int) -> tuple[int, ...]:
        """Parent chain from immediate parent up to the root."""
        chain: list[int] = []
        seen = {label_id}
        cur = label_id
        while cur in self.parent:
            cur = self.parent[cur]
            if cur in seen:
                raise HierarchyError(f"cycle through label id {cur}")
            seen.add(cur)
            chain.append(cur)
        return tuple(chain)


def validate_hierarchy(h: LabelHierarchy) -> HierarchyReport:
    """Check acyclicity and id closure; report roots, internal nodes, leaves.

    Raises HierarchyError listing the offending cycle or dangling id.
    """
    n = len(h.registry)
    names = h.registry.names
    for child, par in h.parent.items():
        if not (0 <= child < n):
            raise HierarchyError(f"child id {child} outside registry of size {n}")
        if not (0 <= par < n):
            raise HierarchyError(f"dangling parent id {par} (child {names[child]!r})")

    # Walk up from every node; a repeat within one walk is a cycle.
    for start in h.parent:
        seen = [start]
        cur = start
        while cur in h.parent:
            cur = h.parent[cur]
            if cur in seen:
                cycle = seen[seen.index(cur):] + [cur]
                pretty = " -> ".join(names[i] for i in cycle)
                raise HierarchyError(f"cycle detected: {pretty}")
            seen.append(cur)

    internal = set(h.parent.values())
    roots = tuple(
        names[i]
        for i in sorted(internal | set(h.parent))
        if i not in h.parent
    )
    return HierarchyReport(
        roots=roots,
        internal=tuple(names[i] for i in sorted(internal)),
        leaves=tuple(names[i] for i in h.leaf_ids()),
    )


def load_hierarchy_file(path: str, registry: LabelRegistry) -> LabelHierarchy:
    """Parse a hierarchy file: one `child: parent` pair per line, # comments."""
    pairs: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'child: parent'")
            child, parent = (part.strip() for part in line.split(":", 1))
            if not child or not parent:
                raise FormatError(f"{path}:{lineno}: empty child or parent name")
            pairs.append((child, parent))
    return LabelHierarchy.from_name_pairs(registry, pairs)


def default_hierarchy(registry: LabelRegistry | None = None) -> LabelHierarchy:
    """Hierarchy from the bundled default file over the default registry."""
    registry = registry or default_registry()
    ref = importlib.resources.files("cxrtrees.data").joinpath("hierarchy_default.txt")
    with importlib.resources.as_file(ref) as path:
        return load_hierarchy_file(str(path), registry)


@dataclass(frozen=True)
class RawAnnotation:
    """One sample's annotation vector over the registry's labels."""

    sample_id: str
    values: np.ndarray  # int8 codes from AnnotationValue, length L

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int8)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LsrConfig:
    """Uncertain-label smoothing interval [a, b) and the stream seed."""

    a: float = 0.55
    b: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if not (self.b > self.a > 0.5):
            raise ConfigError(
                f"smoothing bounds must satisfy b > a > 0.5, got a={self.a}, b={self.b}"
            )
        if not (0 <= self.seed <= 0xFFFFFFFFFFFFFFFF):
            raise ConfigError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class SoftLabelMatrix:
    """Per-sample, per-label targets in [0, 1]."""

    sample_ids: tuple[str, ...]
    label_names: tuple[str, ...]
    targets: np.ndarray  # float64, shape (n, L)

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        if t.ndim != 2 or t.shape != (len(self.sample_ids), len(self.label_names)):
            raise DataError(
                f"targets shape {t.shape} inconsistent with "
                f"{len(self.sample_ids)} samples x {len(self.label_names)} labels"
            )
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise DataError("soft targets must lie in [0, 1]")
        t.flags.writeable = False
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.label_names.index(name)
        except ValueError:
            raise DataError(f"label {name!r} not present") from None
        return self.targets[:, j]

    def select_labels(self, names: Sequence[str]) -> "SoftLabelMatrix":
        cols = [self.label_names.index(n) for n in names]
        return SoftLabelMatrix(self.sample_ids, tuple(names), self.targets[:, cols])

    def subset(self, indices: np.ndarray) -> "SoftLabelMatrix":
        ids = tuple(self.sample_ids[i] for i in indices)
        return SoftLabelMatrix(ids, self.label_names, self.targets[indices])


def parse_label_csv(
    path: str,
    registry: LabelRegistry,
    policy: str = "negative",
) -> list[RawAnnotation]:
    """Read a CheXpert-style label CSV into raw annotations.

    The header must contain a sample-id column (``sample_id`` or ``Path``)
    plus one column per registered label; any other columns are ignored.
    Blank cells resolve per `policy`: negative, uncertain, or drop-sample.
    """
    if policy not in UNMENTIONED_POLICIES:
        raise ConfigError(f"unknown unmentioned policy {policy!r}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [c.strip() for c in header]

        id_col = next((header.index(c) for c in _ID_COLUMNS if c in header), None)
        if id_col is None:
            raise FormatError(
                f"{path}: no sample id column (expected one of {_ID_COLUMNS})"
            )
        col_of: dict[int, int] = {}
        for label in registry:
            if label.name not in header:
                raise FormatError(f"{path}: missing label column {label.name!r}")
            col_of[label.id] = header.index(label.name)

        out: list[RawAnnotation] = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            values = np.empty(len(registry), dtype=np.int8)
            drop = False
            for lid, col in col_of.items():
                cell = row[col].strip() if col < len(row) else ""
                if cell == "":
                    if policy == "drop-sample":
                        drop = True
                        break
                    values[lid] = (
                        AnnotationValue.NEGATIVE
                        if policy == "negative"
                        else AnnotationValue.UNCERTAIN
                    )
                    continue
                code = _CELL_CODES.get(cell)
                if code is None:
                    raise FormatError(
                        f"{path}: row {rowno}, column "
                        f"{registry.names[lid]!r}: unparseable cell {cell!r}"
                    )
                values[lid] = code
            if drop:
                continue
            out.append(RawAnnotation(row[id_col].strip(), values))
    return out


def write_label_csv(
    annotations: Sequence[RawAnnotation], registry: LabelRegistry, path: str
) -> None:
    """Write annotations in the CSV dialect parse_label_csv reads back."""
    cell = {
        AnnotationValue.POSITIVE: "1.0",
        AnnotationValue.NEGATIVE: "0.0",
        AnnotationValue.UNCERTAIN: "-1.0",
        AnnotationValue.UNMENTIONED: "",
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", *registry.names])
        for ann in annotations:
            writer.writerow(
                [ann.sample_id, *(cell[AnnotationValue(v)] for v in ann.values)]
            )


def apply_lsr(
    annotations: Sequence[RawAnnotation],
    cfg: LsrConfig,
    registry: LabelRegistry,
) -> SoftLabelMatrix:
    """Map annotations to soft targets: 1 -> 1.0, 0 -> 0.0, uncertain -> U(a, b).

    The draw for (sample i, label j) depends only on (cfg.seed, i, j), so the
    result is bit-identical across runs, orderings, and thread counts.
    """
    if not annotations:
        return SoftLabelMatrix((), registry.names, np.zeros((0, len(registry))))
    codes = np.stack([ann.values for ann in annotations])
    if codes.shape[1] != len(registry):
        raise DataError(
            f"annotation length {codes.shape[1]} != registry size {len(registry)}"
        )
    if np.any(codes == AnnotationValue.UNMENTIONED):
        raise DataError("unmentioned values must be resolved before smoothing")

    targets = np.zeros(codes.shape, dtype=np.float64)
    targets[codes == AnnotationValue.POSITIVE] = 1.0
    unc = codes == AnnotationValue.UNCERTAIN
    if unc.any():
        u = uniform_matrix(mix_key(cfg.seed), *codes.shape)
        targets[unc] = cfg.a + (cfg.b - cfg.a) * u[unc]
    ids = tuple(ann.sample_id for ann in annotations)
    return SoftLabelMatrix(ids, registry.names, targets)


def filter_conditional_subset(labels: SoftLabelMatrix, h: LabelHierarchy) -> np.ndarray:
    """Indices of samples positive (exactly 1.0) at every internal label of h."""
    internal = h.internal_ids()
    if not internal:
        return np.arange(labels.n, dtype=np.int64)
    cols = []
    for lid in internal:
        name = h.registry.names[lid]
        if name not in labels.label_names:
            raise DataError(f"internal label {name!r} missing from soft label matrix")
        cols.append(labels.label_names.index(name))
    mask = np.all(labels.targets[:, cols] == 1.0, axis=1)
    return np.flatnonzero(mask).astype(np.int64)
