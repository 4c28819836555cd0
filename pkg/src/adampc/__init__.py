"""Adaptive MPC for constrained trajectory tracking of uncertain LTI systems."""

__version__ = "0.1.0"
