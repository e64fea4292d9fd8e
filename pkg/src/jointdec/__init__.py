"""Joint decision of multiple heads and multiple networks for image classification."""

__version__ = "0.1.0"
