"""Fully convolutional text-to-speech: Text2Mel + SSRN on a small numpy autodiff core."""

__version__ = "0.1.0"
