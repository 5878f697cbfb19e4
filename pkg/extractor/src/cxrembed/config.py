"""Extractor configuration."""

from __future__ import annotations

from dataclasses import dataclass

from .backbones import BACKBONE_DIMS

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ExtractorConfig:
    """How images are preprocessed and which backbone pools them.

    Images are resized to resize_size, center-cropped to input_size,
    replicated from grayscale to three channels, scaled to [0, 1], and
    normalized with the ImageNet statistics the backbones were designed for.
    """

    backbone: str = "DenseNet121"
    input_size: int = 224
    resize_size: int = 256
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    batch_size: int = 8
    weights: str | None = None  # "imagenet" needs network access; None is seeded
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONE_DIMS:
            raise ValueError(
                f"unknown backbone {self.backbone!r}; expected one of "
                f"{sorted(BACKBONE_DIMS)}"
            )
        if self.input_size < 32 or self.resize_size < self.input_size:
            raise ValueError("need resize_size >= input_size >= 32")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def expected_dim(self) -> int:
        return BACKBONE_DIMS[self.backbone]
