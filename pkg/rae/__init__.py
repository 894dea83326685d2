"""Recommendation aim-adaptation engine: survey analysis, calibrated priors and an aim-weight policy."""

__version__ = "1.0.0"
