"""Interpolatory HDG solver library for semilinear parabolic problems."""

__version__ = "0.1.0"
