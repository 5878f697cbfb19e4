"""Conditional-probability training and ancestor-product inference.

Models for leaf findings are trained only on samples whose internal
(non-leaf) findings are all positive, so their outputs read as
P(label | ancestors positive).  Unconditional probabilities are recovered by
multiplying each label's output down its ancestor chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, HierarchyError
from .labels import LabelHierarchy, SoftLabelMatrix, filter_conditional_subset, validate_hierarchy
from .store import AlignedDataset, EmbeddingMatrix
from .trees import (
    BoostHyperparams,
    ForestHyperparams,
    TreeEnsembleModel,
    train_gradient_boosting,
    train_random_forest,
)


def propagate_to_unconditional(
    cond: np.ndarray,
    h: LabelHierarchy,
    columns: Sequence[str] | None = None,
) -> np.ndarray:
    """Turn conditional probabilities into unconditional ones.

    Each column's probability is multiplied by its parent's unconditional
    probability, walking the hierarchy top-down, so results never exceed any
    ancestor's value.  Root labels pass through unchanged.
    """
    cond = np.asarray(cond, dtype=np.float64)
    squeeze = cond.ndim == 1
    if squeeze:
        cond = cond.reshape(1, -1)
    names = tuple(columns) if columns is not None else h.registry.names
    if cond.shape[1] != len(names):
        raise DataError(f"{cond.shape[1]} columns but {len(names)} column names")
    col_of: dict[int, int] = {}
    for j, name in enumerate(names):
        if name not in h.registry:
            raise HierarchyError(f"label {name!r} absent from hierarchy registry")
        col_of[h.registry.id_of(name)] = j

    out = cond.copy()
    # Process labels in increasing chain depth so parents are final first.
    depths = []
    for name in names:
        lid = h.registry.id_of(name)
        chain = h.ancestors(lid)
        for anc in chain:
            if anc not in col_of:
                raise HierarchyError(
                    f"ancestor {h.registry.names[anc]!r} of {name!r} has no column"
                )
        depths.append((len(chain), lid))
    for _, lid in sorted(depths):
        parent = h.parent.get(lid)
        if parent is not None:
            out[:, col_of[lid]] = out[:, col_of[parent]] * cond[:, col_of[lid]]
    return out[0] if squeeze else out


@dataclass(frozen=True)
class ConditionalTreePipeline:
    """Paired models from two-stage training plus the composed predictor."""

    hierarchy: LabelHierarchy
    label_names: tuple[str, ...]
    leaf_model: TreeEnsembleModel
    internal_model: TreeEnsembleModel | None

    def predict_conditional(self, embeddings: EmbeddingMatrix | np.ndarray) -> np.ndarray:
        """Per-label conditional probabilities, columns in label_names order."""
        leaf_pred = self.leaf_model.predict(embeddings)
        out = np.empty((leaf_pred.shape[0], len(self.label_names)), dtype=np.float64)
        for j, name in enumerate(self.leaf_model.label_names):
            out[:, self.label_names.index(name)] = leaf_pred[:, j]
        if self.internal_model is not None:
            int_pred = self.internal_model.predict(embeddings)
            for j, name in enumerate(self.internal_model.label_names):
                out[:, self.label_names.index(name)] = int_pred[:, j]
        return out

    def predict(self, embeddings: EmbeddingMatrix | np.ndarray) -> np.ndarray:
        """Unconditional probabilities via the ancestor product."""
        return propagate_to_unconditional(
            self.predict_conditional(embeddings), self.hierarchy, self.label_names
        )


def train_conditional_tree_pipeline(
    ds: AlignedDataset,
    h: LabelHierarchy,
    family: str = "forest",
    hp: ForestHyperparams | BoostHyperparams | None = None,
    labels: Sequence[str] | None = None,
    n_threads: int = 1,
) -> ConditionalTreePipeline:
    """Two-stage training: leaf labels on the conditional subset, internal
    labels on the full data.  With an empty hierarchy this reduces to plain
    training and the composed predictor returns the raw outputs.
    """
    if family not in ("forest", "boosted"):
        raise DataError(f"unknown model family {family!r}")
    train_fn = train_random_forest if family == "forest" else train_gradient_boosting
    if hp is None:
        hp = ForestHyperparams() if family == "forest" else BoostHyperparams()

    validate_hierarchy(h)
    names = tuple(labels) if labels is not None else ds.labels.label_names
    internal_names = [h.registry.names[i] for i in h.internal_ids()]
    internal_in_scope = tuple(n for n in names if n in internal_names)
    leaf_in_scope = tuple(n for n in names if n not in internal_names)
    if not leaf_in_scope:
        raise DataError("no leaf labels to train on")

    subset_idx = filter_conditional_subset(ds.labels, h)
    if subset_idx.size == 0:
        raise DataError("conditional subset is empty; no sample is positive "
                        "at every internal label")

    leaf_model = train_fn(ds.subset(subset_idx), leaf_in_scope, hp, n_threads=n_threads)
    internal_model = (
        train_fn(ds, internal_in_scope, hp, n_threads=n_threads)
        if internal_in_scope
        else None
    )
    return ConditionalTreePipeline(h, names, leaf_model, internal_model)
