"""Neural coarse-graining: self-predictive class representations of timeseries."""

__version__ = "0.1.0"
