"""CNN backbone feature extractor exporting EMB1 embedding files."""

import os

# Keep inference numerics stable across runs; must be set before TF loads.
os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "2")
os.environ.setdefault("TF_ENABLE_ONEDNN_OPTS", "0")

from .backbones import BACKBONE_DIMS, build_backbone
from .config import ExtractorConfig
from .extract import extract
from .embfile import write_embedding_file

__version__ = "0.1.0"
