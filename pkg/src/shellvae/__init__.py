"""Collapse-resistant VAE training on spherical-shell data with cluster-aware penalties."""

__version__ = "0.1.0"
