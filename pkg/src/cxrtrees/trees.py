"""Random forests and second-order gradient boosting over embedding features.

Both families regress directly on soft targets in [0, 1].  Forests grow
variance-reduction trees on bootstrap samples with per-node feature subsets;
boosting fits depth-limited trees to the gradient/hessian of logistic loss
and passes the accumulated margin through a sigmoid.

Training is a pure function of (dataset, hyperparams, seed): every tree owns
a counter-based random stream keyed by (seed, label index, tree index), so
models are byte-identical for any thread count.
"""

from __future__ import annotations

import io
import itertools
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import BinaryIO, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, DataError, FormatError
from .hashing import MASK64, bootstrap_indices, stream_state_after, tree_key
from .store import AlignedDataset, EmbeddingMatrix

_MAGIC = b"TEM1"
_KIND_CODE = {"forest": 0, "boosted": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}

#: Probabilities are clamped this far from 0 and 1 before log-odds.
PROB_EPS = 1e-6


@dataclass(frozen=True)
class ForestHyperparams:
    n_estimators: int = 200
    max_depth: int = 15
    min_samples_split: int = 2
    min_samples_leaf: int = 10
    max_features: str | int = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if isinstance(self.max_features, str):
            if self.max_features not in ("sqrt", "all"):
                raise ConfigError("max_features must be 'sqrt', 'all', or a positive int")
        elif self.max_features < 1:
            raise ConfigError("fixed max_features must be >= 1")
        if not (0 <= self.seed <= MASK64):
            raise ConfigError("seed must fit in 64 unsigned bits")

    def resolve_max_features(self, dim: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(dim)))
        if self.max_features == "all":
            return dim
        return min(int(self.max_features), dim)


@dataclass(frozen=True)
class BoostHyperparams:
    rounds: int = 50
    max_depth: int = 3
    learning_rate: float = 0.1
    l2_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if not (0.0 <= self.learning_rate <= 1.0):
            raise ConfigError("learning_rate must be in [0, 1]")
        if self.l2_lambda < 0.0:
            raise ConfigError("l2_lambda must be >= 0")
        if not (0 <= self.seed <= MASK64):
            raise ConfigError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat preorder node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    value: np.ndarray  # float64
    left: np.ndarray  # uint32
    right: np.ndarray  # uint32

    def __post_init__(self):
        n = len(self.feature)
        for name in ("threshold", "value", "left", "right"):
            if len(getattr(self, name)) != n:
                raise DataError(f"tree array {name} length != {n}")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_for(self, X: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Leaf node index reached by each requested row of X."""
        if rows is None:
            rows = np.arange(X.shape[0], dtype=np.int64)
        out = np.empty(len(rows), dtype=np.int64)
        _kernels.leaf_of(
            np.ascontiguousarray(X, dtype=np.float32),
            np.asarray(rows, dtype=np.int64),
            self.feature, self.threshold, self.left, self.right, out,
        )
        return out


@dataclass(frozen=True, eq=False)
class TreeEnsembleModel:
    """Per-label tree ensembles plus everything needed to reapply them."""

    hyperparams: ForestHyperparams | BoostHyperparams
    label_names: tuple[str, ...]
    dim: int
    trees: tuple[tuple[Tree, ...], ...]  # one tuple of trees per label
    base_score: np.ndarray | None = None  # boosted only, one logit per label

    def __post_init__(self):
        object.__setattr__(self, "label_names", tuple(self.label_names))
        object.__setattr__(self, "trees", tuple(tuple(t) for t in self.trees))
        if len(self.trees) != len(self.label_names):
            raise DataError("one tree list per label required")
        if self.kind == "boosted":
            if self.base_score is None:
                raise DataError("boosted models need a base score per label")
            b = np.asarray(self.base_score, dtype=np.float64)
            if b.shape != (len(self.label_names),):
                raise DataError("one base score per label required")
            b.flags.writeable = False
            object.__setattr__(self, "base_score", b)
        elif self.base_score is not None:
            raise DataError("forest models carry no base score")

    @property
    def kind(self) -> str:
        return "forest" if isinstance(self.hyperparams, ForestHyperparams) else "boosted"

    def predict(self, embeddings: EmbeddingMatrix | np.ndarray) -> np.ndarray:
        return predict(self, embeddings)


def _as_feature_array(embeddings: EmbeddingMatrix | np.ndarray, dim: int) -> np.ndarray:
    X = embeddings.data if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings)
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != dim:
        raise DataError(f"expected feature dim {dim}, got shape {X.shape}")
    return X


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _targets_for(
    ds: AlignedDataset, labels: Sequence[str] | None, binarize_at: float | None
) -> tuple[tuple[str, ...], np.ndarray]:
    names = tuple(labels) if labels is not None else ds.labels.label_names
    missing = [n for n in names if n not in ds.labels.label_names]
    if missing:
        raise DataError(f"labels not in dataset: {missing}")
    cols = [ds.labels.label_names.index(n) for n in names]
    y = ds.labels.targets[:, cols].astype(np.float64)
    if binarize_at is not None:
        y = (y >= binarize_at).astype(np.float64)
    return names, y


def _grow_forest_tree(X: np.ndarray, y: np.ndarray, hp: ForestHyperparams, key) -> Tree:
    n = X.shape[0]
    rows = bootstrap_indices(key, n)
    state = stream_state_after(key, n)
    cap = 2 * n + 1
    feature = np.empty(cap, np.int32)
    threshold = np.empty(cap, np.float64)
    value = np.empty(cap, np.float64)
    left = np.empty(cap, np.uint32)
    right = np.empty(cap, np.uint32)
    n_nodes = _kernels.grow_variance_tree(
        X, y, rows, state,
        hp.max_depth, hp.min_samples_split, hp.min_samples_leaf,
        hp.resolve_max_features(X.shape[1]),
        feature, threshold, value, left, right,
    )
    return Tree(
        feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
        value[:n_nodes].copy(), left[:n_nodes].copy(), right[:n_nodes].copy(),
    )


def _run_tasks(tasks, n_threads: int) -> list:
    """Run callables preserving order; thread count never affects results."""
    if n_threads <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]


def train_random_forest(
    train: AlignedDataset,
    labels: Sequence[str] | None = None,
    hp: ForestHyperparams = ForestHyperparams(),
    n_threads: int = 1,
    binarize_at: float | None = None,
) -> TreeEnsembleModel:
    """Fit one forest per selected label on bootstrap resamples."""
    if train.n == 0:
        raise DataError("empty training set")
    names, Y = _targets_for(train, labels, binarize_at)
    X = np.ascontiguousarray(train.embeddings.data, dtype=np.float32)

    tasks = []
    for li in range(len(names)):
        y = np.ascontiguousarray(Y[:, li])
        for ti in range(hp.n_estimators):
            key = tree_key(hp.seed, li, ti)
            tasks.append(lambda y=y, key=key: _grow_forest_tree(X, y, hp, key))
    flat = _run_tasks(tasks, n_threads)
    per_label = tuple(
        tuple(flat[li * hp.n_estimators:(li + 1) * hp.n_estimators])
        for li in range(len(names))
    )
    return TreeEnsembleModel(hp, names, X.shape[1], per_label)


def _boost_one_label(X: np.ndarray, y: np.ndarray, hp: BoostHyperparams) -> tuple[float, tuple[Tree, ...]]:
    mean = float(np.clip(y.mean(), PROB_EPS, 1.0 - PROB_EPS))
    base = float(np.log(mean / (1.0 - mean)))
    margin = np.full(X.shape[0], base, dtype=np.float64)
    cap = 2 * X.shape[0] + 1
    trees: list[Tree] = []
    for _ in range(hp.rounds):
        p = _sigmoid(margin)
        grad = p - y
        hess = p * (1.0 - p)
        feature = np.empty(cap, np.int32)
        threshold = np.empty(cap, np.float64)
        value = np.empty(cap, np.float64)
        left = np.empty(cap, np.uint32)
        right = np.empty(cap, np.uint32)
        n_nodes = _kernels.grow_gain_tree(
            X, grad, hess, hp.l2_lambda, hp.learning_rate, hp.max_depth,
            feature, threshold, value, left, right,
        )
        tree = Tree(
            feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            value[:n_nodes].copy(), left[:n_nodes].copy(), right[:n_nodes].copy(),
        )
        _kernels.accumulate_tree(
            X, tree.feature, tree.threshold, tree.value, tree.left, tree.right, margin
        )
        trees.append(tree)
    return base, tuple(trees)


def train_gradient_boosting(
    train: AlignedDataset,
    labels: Sequence[str] | None = None,
    hp: BoostHyperparams = BoostHyperparams(),
    n_threads: int = 1,
    binarize_at: float | None = None,
) -> TreeEnsembleModel:
    """Fit one boosted ensemble per selected label (Newton steps, L2 leaves)."""
    if train.n == 0:
        raise DataError("empty training set")
    names, Y = _targets_for(train, labels, binarize_at)
    X = np.ascontiguousarray(train.embeddings.data, dtype=np.float32)

    tasks = [
        lambda y=np.ascontiguousarray(Y[:, li]): _boost_one_label(X, y, hp)
        for li in range(len(names))
    ]
    results = _run_tasks(tasks, n_threads)
    base = np.array([r[0] for r in results], dtype=np.float64)
    per_label = tuple(r[1] for r in results)
    return TreeEnsembleModel(hp, names, X.shape[1], per_label, base)


def predict(model: TreeEnsembleModel, embeddings: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    """Per-sample, per-label probabilities in [0, 1], rows in input order."""
    X = _as_feature_array(embeddings, model.dim)
    n = X.shape[0]
    out = np.empty((n, len(model.label_names)), dtype=np.float64)
    for li, trees in enumerate(model.trees):
        acc = np.zeros(n, dtype=np.float64)
        for tree in trees:
            _kernels.accumulate_tree(
                X, tree.feature, tree.threshold, tree.value, tree.left, tree.right, acc
            )
        if model.kind == "forest":
            out[:, li] = np.clip(acc / max(len(trees), 1), 0.0, 1.0)
        else:
            out[:, li] = _sigmoid(model.base_score[li] + acc)
    return out


#: Hyperparameter values observed across tuned forest configurations.
DEFAULT_FOREST_GRID: dict[str, tuple] = {
    "max_depth": (5, 15, 30),
    "min_samples_split": (2, 10, 50),
    "min_samples_leaf": (1, 10),
}


@dataclass(frozen=True)
class GridSearchResult:
    best: ForestHyperparams
    scores: tuple[tuple[ForestHyperparams, float], ...]


def grid_search(
    train: AlignedDataset,
    validation: AlignedDataset,
    grid: Mapping[str, Sequence] | None = None,
    labels: Sequence[str] | None = None,
    base_hp: ForestHyperparams = ForestHyperparams(),
    n_threads: int = 1,
) -> GridSearchResult:
    """Exhaustive forest hyperparameter search by mean validation AUROC.

    Ties prefer the simpler model: smaller max_depth, then larger
    min_samples_leaf, then larger min_samples_split.
    """
    from .evaluation import auroc  # local import keeps evaluation standalone

    grid = dict(grid) if grid is not None else dict(DEFAULT_FOREST_GRID)
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must be non-empty")
    valid_fields = set(ForestHyperparams.__dataclass_fields__)
    unknown = set(grid) - valid_fields
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")

    names, Y_val = _targets_for(validation, labels, binarize_at=None)
    truth = (Y_val >= 0.5).astype(np.int64)

    keys = list(grid)
    rows: list[tuple[ForestHyperparams, float]] = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        hp = replace(base_hp, **dict(zip(keys, combo)))
        model = train_random_forest(train, names, hp, n_threads=n_threads)
        preds = predict(model, validation.embeddings)
        score = float(
            np.mean([auroc(preds[:, li], truth[:, li]) for li in range(len(names))])
        )
        rows.append((hp, score))

    best = min(
        rows,
        key=lambda r: (-r[1], r[0].max_depth, -r[0].min_samples_leaf, -r[0].min_samples_split),
    )[0]
    return GridSearchResult(best, tuple(rows))


def _write_str(fh: BinaryIO, s: str) -> None:
    b = s.encode("utf-8")
    fh.write(struct.pack("<H", len(b)))
    fh.write(b)


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated model file while reading {what}")
    return buf


def _read_str(fh: BinaryIO, what: str) -> str:
    (ln,) = struct.unpack("<H", _read_exact(fh, 2, what))
    return _read_exact(fh, ln, what).decode("utf-8")


def _write_array(fh: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_array(fh: BinaryIO, n: int, dtype: str, what: str) -> np.ndarray:
    buf = _read_exact(fh, n * np.dtype(dtype).itemsize, what)
    return np.frombuffer(buf, dtype=dtype).copy()


def write_model(model: TreeEnsembleModel, fh: BinaryIO) -> None:
    fh.write(_MAGIC)
    fh.write(struct.pack("<B", _KIND_CODE[model.kind]))
    fh.write(struct.pack("<IH", model.dim, len(model.label_names)))
    hp = model.hyperparams
    if model.kind == "forest":
        mf_mode, mf_k = {"sqrt": (0, 0), "all": (1, 0)}.get(
            hp.max_features, (2, hp.max_features if isinstance(hp.max_features, int) else 0)
        )
        fh.write(struct.pack(
            "<IiIIBIQ", hp.n_estimators, hp.max_depth, hp.min_samples_split,
            hp.min_samples_leaf, mf_mode, mf_k, hp.seed & MASK64,
        ))
    else:
        fh.write(struct.pack(
            "<IiddQ", hp.rounds, hp.max_depth, hp.learning_rate,
            hp.l2_lambda, hp.seed & MASK64,
        ))
    for name in model.label_names:
        _write_str(fh, name)
    if model.kind == "boosted":
        _write_array(fh, model.base_score, "<f8")
    for trees in model.trees:
        fh.write(struct.pack("<I", len(trees)))
        for t in trees:
            fh.write(struct.pack("<I", t.n_nodes))
            _write_array(fh, t.feature, "<i4")
            _write_array(fh, t.threshold, "<f8")
            _write_array(fh, t.value, "<f8")
            _write_array(fh, t.left, "<u4")
            _write_array(fh, t.right, "<u4")


def read_model(fh: BinaryIO) -> TreeEnsembleModel:
    magic = fh.read(4)
    if magic != _MAGIC:
        raise FormatError(f"bad model magic {magic!r}, expected {_MAGIC!r}")
    (kind_code,) = struct.unpack("<B", _read_exact(fh, 1, "kind"))
    if kind_code not in _KIND_NAME:
        raise FormatError(f"unknown model kind byte {kind_code}")
    dim, n_labels = struct.unpack("<IH", _read_exact(fh, 6, "dims"))
    if kind_code == 0:
        fmt = "<IiIIBIQ"
        n_est, depth, msplit, mleaf, mf_mode, mf_k, seed = struct.unpack(
            fmt, _read_exact(fh, struct.calcsize(fmt), "forest hyperparams")
        )
        if mf_mode == 0:
            mf: str | int = "sqrt"
        elif mf_mode == 1:
            mf = "all"
        else:
            mf = mf_k
        hp: ForestHyperparams | BoostHyperparams = ForestHyperparams(
            n_est, depth, msplit, mleaf, mf, seed
        )
    else:
        fmt = "<IiddQ"
        rounds, depth, lr, lam, seed = struct.unpack(
            fmt, _read_exact(fh, struct.calcsize(fmt), "boost hyperparams")
        )
        hp = BoostHyperparams(rounds, depth, lr, lam, seed)
    names = tuple(_read_str(fh, f"label name {i}") for i in range(n_labels))
    base = None
    if kind_code == 1:
        base = _read_array(fh, n_labels, "<f8", "base scores")
    per_label = []
    for li in range(n_labels):
        (n_trees,) = struct.unpack("<I", _read_exact(fh, 4, f"tree count {li}"))
        trees = []
        for ti in range(n_trees):
            (n_nodes,) = struct.unpack("<I", _read_exact(fh, 4, f"node count {li}/{ti}"))
            what = f"tree {li}/{ti}"
            trees.append(Tree(
                _read_array(fh, n_nodes, "<i4", what),
                _read_array(fh, n_nodes, "<f8", what),
                _read_array(fh, n_nodes, "<f8", what),
                _read_array(fh, n_nodes, "<u4", what),
                _read_array(fh, n_nodes, "<u4", what),
            ))
        per_label.append(tuple(trees))
    if fh.read(1):
        raise FormatError("trailing bytes after model payload")
    return TreeEnsembleModel(hp, names, dim, tuple(per_label), base)


def write_model_file(model: TreeEnsembleModel, path: str) -> None:
    with open(path, "wb") as fh:
        write_model(model, fh)


def read_model_file(path: str) -> TreeEnsembleModel:
    with open(path, "rb") as fh:
        return read_model(fh)


def model_bytes(model: TreeEnsembleModel) -> bytes:
    buf = io.BytesIO()
    write_model(model, buf)
    return buf.getvalue()
