"""Tamed Euler-type simulation of Levy-driven SDEs with super-linear coefficients."""

__version__ = "0.1.0"
