"""Eye-tracking dwell time as implicit feedback for matrix-factorization recommenders."""

__version__ = "0.1.0"
