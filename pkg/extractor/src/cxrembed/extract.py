"""Batch feature extraction into the EMB1 format."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbones import build_backbone
from .config import ExtractorConfig
from .embfile import write_embedding_file
from .preprocessing import load_grayscale, prepare_tensor

logger = logging.getLogger(__name__)

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _resolve_inputs(images: str | Sequence[str]) -> tuple[list[str], Path | None]:
    """Return (sample ids, base directory).  Accepts a directory, a manifest
    CSV of paths (single column, optional `path` header), or a path list."""
    if not isinstance(images, (str, Path)):
        return [str(p) for p in images], None
    root = Path(images)
    if root.is_dir():
        found = sorted(
            str(p.relative_to(root))
            for p in root.rglob("*")
            if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        return found, root
    ids: list[str] = []
    with open(root, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            if row[0].strip().lower() == "path":
                continue
            ids.append(row[0].strip())
    return ids, root.parent


def extract(images: str | Sequence[str], cfg: ExtractorConfig, out_path: str) -> str:
    """Run the backbone over every readable image and write an EMB1 file.

    One row per manifest entry, sample_id as listed (relative paths when a
    directory was given).  Unreadable images are skipped with a warning and
    listed in `<out_path>.skipped.txt`.  Repeated paths reuse the first
    computed features, so duplicate manifest rows are bit-identical.
    """
    sample_ids, base = _resolve_inputs(images)
    if not sample_ids:
        raise ValueError("no images to extract")

    model = build_backbone(cfg.backbone, cfg.input_size, cfg.weights, cfg.seed)

    tensors: dict[str, np.ndarray] = {}
    skipped: list[str] = []
    kept: list[str] = []
    for sid in sample_ids:
        if sid in tensors:
            kept.append(sid)
            continue
        full = str(base / sid) if base is not None else sid
        try:
            gray = load_grayscale(full)
            tensors[sid] = prepare_tensor(gray, cfg)
        except Exception as e:
            logger.warning("skipping unreadable image %s: %s", full, e)
            skipped.append(sid)
            continue
        kept.append(sid)

    if skipped:
        sidecar = out_path + ".skipped.txt"
        Path(sidecar).write_text("".join(s + "\n" for s in skipped), encoding="utf-8")
        logger.warning("listed %d skipped images in %s", len(skipped), sidecar)
    if not kept:
        raise ValueError("every input image was unreadable")

    unique = list(tensors)
    features: dict[str, np.ndarray] = {}
    for start in range(0, len(unique), cfg.batch_size):
        chunk = unique[start:start + cfg.batch_size]
        batch = np.stack([tensors[sid] for sid in chunk])
        rows = model.predict(batch, verbose=0)
        for sid, row in zip(chunk, rows):
            features[sid] = row.astype(np.float32)

    data = np.stack([features[sid] for sid in kept])
    if data.shape[1] != cfg.expected_dim:
        raise RuntimeError(
            f"backbone produced dim {data.shape[1]}, declared {cfg.expected_dim}"
        )
    write_embedding_file(kept, data, cfg.backbone, out_path)
    return out_path
