"""Finite-sample semiparametric profile quasi-likelihood inference."""

from .experiments import VERSION as __version__

__all__ = ["__version__"]
