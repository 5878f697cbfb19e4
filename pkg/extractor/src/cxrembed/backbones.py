"""Pretrained CNN backbones with their pooled feature widths."""

from __future__ import annotations

import logging

logger = logging.getLogger(__name__)

#: Global-average-pooled output width per supported backbone.
BACKBONE_DIMS = {
    "DenseNet121": 1024,
    "DenseNet169": 1664,
    "DenseNet201": 1920,
    "InceptionResNetV2": 1536,
    "Xception": 2048,
    "VGG16": 512,
    "VGG19": 512,
}


def build_backbone(name: str, input_size: int, weights: str | None, seed: int):
    """Build a backbone ending in global average pooling.

    With weights=None the initialization is seeded, so the snapshot (and
    therefore extraction) is reproducible without downloaded weights.  When
    "imagenet" weights cannot be fetched, falls back to the seeded
    initialization with a warning.
    """
    import tensorflow as tf

    factories = {
        "DenseNet121": tf.keras.applications.DenseNet121,
        "DenseNet169": tf.keras.applications.DenseNet169,
        "DenseNet201": tf.keras.applications.DenseNet201,
        "InceptionResNetV2": tf.keras.applications.InceptionResNetV2,
        "Xception": tf.keras.applications.Xception,
        "VGG16": tf.keras.applications.VGG16,
        "VGG19": tf.keras.applications.VGG19,
    }
    if name not in factories:
        raise ValueError(f"unknown backbone {name!r}")

    tf.keras.utils.set_random_seed(seed)
    kwargs = dict(
        include_top=False,
        pooling="avg",
        input_shape=(input_size, input_size, 3),
    )
    try:
        model = factories[name](weights=weights, **kwargs)
    except Exception as e:  # weight download unavailable, fall back to seeded init
        if weights is None:
            raise
        logger.warning(
            "could not load %r weights for %s (%s); using seeded random "
            "initialization; extracted features will not match a tuned backbone",
            weights, name, e,
        )
        tf.keras.utils.set_random_seed(seed)
        model = factories[name](weights=None, **kwargs)

    dim = int(model.output_shape[-1])
    if dim != BACKBONE_DIMS[name]:
        raise RuntimeError(
            f"{name} produced dim {dim}, expected {BACKBONE_DIMS[name]}"
        )
    return model
