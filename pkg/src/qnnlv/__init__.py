"""Lotka-Volterra dynamics of quantum neural network training: simulation,
closed-form theory and ensemble statistics."""

__version__ = "0.1.0"
