"""Semi-supervised image classification with pseudo-label pair loss."""

__version__ = "0.1.0"
