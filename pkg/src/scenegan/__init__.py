"""Compositional multi-class scene GAN with grouped super-classes,
style-space edit discovery, and an interactive editing service."""

__version__ = "0.1.0"
