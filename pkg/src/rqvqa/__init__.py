"""Blind video quality assessment from fused quality-aware features.

Multi-source feature ingestion (sidecar files or deterministic toy
extractors), a correlation-loss trained regression head, rank-statistics
evaluation with monotonic logistic mapping, and a split/ensemble harness.
"""

__version__ = "0.1.0"
