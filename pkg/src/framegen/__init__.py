"""Latent-diffusion video frame interpolation at desk scale."""

__version__ = "0.1.0"
