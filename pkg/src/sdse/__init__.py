"""Abstractive summarization with syntactic source encoding and
per-step selective gates, on a small numpy autodiff engine."""

from .estimator import SyntacticSummarizer
from .train import TrainConfig

__all__ = ["SyntacticSummarizer", "TrainConfig"]
__version__ = "0.1.0"
