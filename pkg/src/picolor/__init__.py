"""Probabilistic image colorization."""
