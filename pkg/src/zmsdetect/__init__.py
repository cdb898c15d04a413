"""Privacy-preserving distributed K-sample testing with zero-modulo-sum masks."""

__version__ = "0.1.0"
