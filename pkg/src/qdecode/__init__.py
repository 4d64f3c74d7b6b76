"""Iterative sentence decoding with a deep Q-network over a frozen encoder-decoder LSTM."""

from .errors import InvalidArgument, InvalidState

__version__ = "0.1.0"
__all__ = ["InvalidArgument", "InvalidState", "__version__"]
