"""Granger causality from a Jacobian-regularized residual-MLP forecaster."""

__version__ = "0.1.0"
