"""Learning fast linear-transform algorithms as butterfly factorizations."""

__version__ = "0.1.0"
