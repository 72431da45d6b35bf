"""Converter from pretrained CLIP checkpoints to the mobmod encoder bundle."""

__version__ = "0.1.0"
