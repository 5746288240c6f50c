"""Posted pricing for items with stochastic horizons."""

__version__ = "0.1.0"
