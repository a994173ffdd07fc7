"""lobcalib - Limit order book simulator calibration with negatively correlated search."""

__version__ = "0.1.0"
