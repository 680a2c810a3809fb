"""Deterministic federated-learning simulator with geometry-guided
embedding augmentation."""

__version__ = "0.1.0"
