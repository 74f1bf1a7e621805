"""Thin-film fracture limits: densities, reductions, envelopes and recovery maps."""

__version__ = "0.1.0"
