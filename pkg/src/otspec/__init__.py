"""Optimal-transport distances between multivariate spectra and moment-constrained spectral estimation."""

__version__ = "0.1.0"
