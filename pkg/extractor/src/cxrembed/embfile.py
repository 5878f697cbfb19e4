"""Writer for the EMB1 embedding binary (little endian).

Layout: magic "EMB1" | u32 n | u32 dim | u16 tag_len | tag bytes,
then n records of [u16 id_len | id bytes | dim x f32].
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

MAGIC = b"EMB1"


def write_embedding_file(
    sample_ids: Sequence[str],
    data: np.ndarray,
    source_model: str,
    path: str,
) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2 or data.shape[0] != len(sample_ids):
        raise ValueError(f"data shape {data.shape} does not match {len(sample_ids)} ids")
    if not np.isfinite(data).all():
        raise ValueError("embedding rows must be finite")
    tag = source_model.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIH", data.shape[0], data.shape[1], len(tag)))
        fh.write(tag)
        for sid, row in zip(sample_ids, data):
            sid_b = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(sid_b)))
            fh.write(sid_b)
            fh.write(row.tobytes())
