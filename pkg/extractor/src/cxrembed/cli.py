"""Command-line wrapper around the extractor."""

from __future__ import annotations

import logging
import sys

import click

from .backbones import BACKBONE_DIMS
from .config import ExtractorConfig
from .extract import extract


@click.command()
@click.option("--images", required=True,
              help="Image directory or manifest CSV of paths.")
@click.option("--backbone", type=click.Choice(sorted(BACKBONE_DIMS)),
              default="DenseNet121", show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--weights", default=None,
              help="'imagenet' to load pretrained weights (needs network); "
                   "default is a seeded untrained snapshot.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False, writable=True))
def main(images, backbone, batch_size, weights, seed, out):
    """Extract global-average-pooled CNN features into an EMB1 file."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    cfg = ExtractorConfig(
        backbone=backbone, batch_size=batch_size, weights=weights, seed=seed
    )
    try:
        extract(images, cfg, out)
    except (ValueError, RuntimeError, OSError) as e:
        click.echo(f"error:{type(e).__name__}: {e}", err=True)
        sys.exit(1)
    click.echo(f"wrote {out} ({backbone}, dim {cfg.expected_dim})")


if __name__ == "__main__":
    main()
