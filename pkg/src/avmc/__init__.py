"""Adaptive non-intrusive stochastic Galerkin solver for parametric Darcy
problems based on tensor-train regression of sampled solutions."""

__version__ = "0.1.0"
