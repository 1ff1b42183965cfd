"""Joint time-series forecasting with masked tokens and quantile heads."""

__version__ = "0.1.0"
