"""Synthetic hierarchical-label embedding datasets with known structure.

Each label gets a latent standard-normal score along one of L mutually
orthogonal random unit directions; features are the sum of score-weighted
directions, so every label is linearly recoverable but not axis-aligned.
A label is positive when its noisy latent (score + sigma * eps) is positive,
and children are additionally gated on their parent being positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .labels import (
    AnnotationValue,
    LabelHierarchy,
    LsrConfig,
    RawAnnotation,
    apply_lsr,
    validate_hierarchy,
)
from .store import AlignedDataset, EmbeddingMatrix


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    dim: int
    hierarchy: LabelHierarchy
    noise_sigma: float = 0.5
    uncertain_fraction: float = 0.0
    lsr_a: float = 0.55
    lsr_b: float = 0.85
    seed: int = 0
    direction_seeds: tuple[int, ...] | None = None

    def __post_init__(self):
        n_labels = len(self.hierarchy.registry)
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.dim < n_labels:
            raise ConfigError(f"dim must be >= number of labels ({n_labels})")
        if not (0.0 <= self.uncertain_fraction <= 1.0):
            raise ConfigError("uncertain_fraction must be in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.direction_seeds is not None and len(self.direction_seeds) != n_labels:
            raise ConfigError("need one direction seed per label")


@dataclass(frozen=True)
class GroundTruth:
    """Generative parameters returned alongside the dataset."""

    directions: np.ndarray  # (L, dim), orthonormal rows
    latent_scores: np.ndarray  # (n, L), the clean per-label scores
    hard_labels: np.ndarray  # (n, L) int8, truth before uncertainty injection
    annotations: list[RawAnnotation]


def _directions(spec: SyntheticSpec, n_labels: int) -> np.ndarray:
    if spec.direction_seeds is not None:
        rows = [
            np.random.default_rng([int(s) & 0xFFFFFFFF]).standard_normal(spec.dim)
            for s in spec.direction_seeds
        ]
        raw = np.stack(rows)
    else:
        raw = np.random.default_rng([spec.seed, 101]).standard_normal((n_labels, spec.dim))
    q, r = np.linalg.qr(raw.T)  # orthonormalize so projections recover scores
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def generate(spec: SyntheticSpec) -> tuple[AlignedDataset, GroundTruth]:
    """Draw a dataset; deterministic under spec.seed."""
    registry = spec.hierarchy.registry
    validate_hierarchy(spec.hierarchy)
    n, L = spec.n_samples, len(registry)

    W = _directions(spec, L)
    S = np.random.default_rng([spec.seed, 202]).standard_normal((n, L))
    noise = np.random.default_rng([spec.seed, 303]).standard_normal((n, L))
    latent = S + spec.noise_sigma * noise

    hard = np.zeros((n, L), dtype=np.int8)
    by_depth = sorted(range(L), key=lambda lid: len(spec.hierarchy.ancestors(lid)))
    for lid in by_depth:
        own = latent[:, lid] > 0.0
        parent = spec.hierarchy.parent.get(lid)
        hard[:, lid] = own if parent is None else (own & (hard[:, parent] == 1))

    codes = np.where(hard == 1, AnnotationValue.POSITIVE, AnnotationValue.NEGATIVE)
    if spec.uncertain_fraction > 0.0:
        unc = np.random.default_rng([spec.seed, 404]).random((n, L))
        codes = np.where(
            unc < spec.uncertain_fraction, AnnotationValue.UNCERTAIN, codes
        )

    width = max(6, len(str(n - 1)))
    ids = [f"s{i:0{width}d}" for i in range(n)]
    annotations = [
        RawAnnotation(ids[i], codes[i].astype(np.int8)) for i in range(n)
    ]
    soft = apply_lsr(
        annotations, LsrConfig(spec.lsr_a, spec.lsr_b, spec.seed), registry
    )
    emb = EmbeddingMatrix(tuple(ids), (S @ W).astype(np.float32), "synthetic")
    return AlignedDataset(emb, soft), GroundTruth(W, S, hard, annotations)
