"""Calibrated molecular property prediction with Bayesian graph networks."""

__version__ = "0.1.0"
