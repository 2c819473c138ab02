"""Collaborative latent-space voice prototyping: chains of one-dimensional
slider trials over a PCA-parametrized speaker embedding space, with
simulated participants, a web coordinator, and an analysis suite."""

__version__ = "0.1.0"
