"""Hann-windowed OFDM reception with equalised MRC and soft interference
cancellation, plus the baseline receivers and a Monte Carlo harness."""

from .errors import ConfigError, InvalidInput

__version__ = "0.1.0"

__all__ = ["ConfigError", "InvalidInput", "__version__"]
