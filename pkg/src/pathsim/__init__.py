"""Desk-scale patient-pathway modeling toolkit.

Structured-text patient records, a toy bottleneck transformer, an iterative
trajectory simulator, evaluation metrics, and a synthetic cohort generator.
"""

__version__ = "0.1.0"
