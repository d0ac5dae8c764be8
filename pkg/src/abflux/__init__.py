"""Numerical toolkit for electromagnetic inverse problems in domains with moving obstacles."""

__version__ = "0.1.0"
