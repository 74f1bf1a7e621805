"""Deformation maps used to build recovery sequences."""
