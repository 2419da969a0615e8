"""Contrastive representation learning with diffusion-generated positives."""

__version__ = "0.1.0"
