"""Wrapper feature selection: CNN features, binary DE search, linear SVM fitness."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
