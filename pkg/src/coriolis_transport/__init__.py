"""Rotating-plane transport equation: characteristics, gradient blow-up and stochastic regularisation."""
__version__ = "0.1.0"
