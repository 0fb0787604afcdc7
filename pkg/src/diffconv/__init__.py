"""Lie symmetry classification engine for f(x) u_t = (D(u) u_x)_x + K(u) u_x."""

__version__ = "0.1.0"
