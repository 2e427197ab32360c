"""Perturbed Bayes-optimal inference: models, exact posteriors and overlap identities."""

__version__ = "0.1.0"
