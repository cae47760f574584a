"""Learned quadratic Lyapunov certificates and model-free CBF safety filtering."""

__version__ = "0.1.0"
