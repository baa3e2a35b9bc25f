"""Information leakage from attribute updates in retrained classifiers."""
__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
