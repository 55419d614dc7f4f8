"""Quantile boosting forecasts of rare high temperatures with adaptive conformal intervals."""

__version__ = "0.1.0"
