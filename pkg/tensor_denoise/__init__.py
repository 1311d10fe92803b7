"""Seismic volume denoising with tensor dictionary learning in the t-product algebra."""

__version__ = "0.1.0"
