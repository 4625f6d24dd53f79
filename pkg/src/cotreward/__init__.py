"""Decomposed contrastive language rewards with self-imitation, at desk scale."""

__version__ = "0.1.0"
