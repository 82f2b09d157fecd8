"""Conditional-mean estimation along stopping times for stationary series."""

__version__ = "0.1.0"

from .dyadic import DyadicValue, h_value
from .estimator import LevelCompletion, PathEstimator, StreamingEstimator, naive_lambda_oracle
from .quantize import Cell, PastVector, QuantizedBlock, cell_index, dstar, quantize_block, representative

__all__ = [
    "DyadicValue",
    "h_value",
    "Cell",
    "PastVector",
    "QuantizedBlock",
    "cell_index",
    "dstar",
    "quantize_block",
    "representative",
    "LevelCompletion",
    "PathEstimator",
    "StreamingEstimator",
    "naive_lambda_oracle",
]
