"""Compact video-language transformer with temporal token rolling.

Pure-numpy reverse-mode engine, synthetic moving-shape corpus, pretraining
and retrieval objectives, evaluation protocols and an attention-cost bench.
"""

__version__ = "0.1.0"
