"""Monte Carlo engine for safety-aware response-adaptive non-inferiority trials."""

__version__ = "0.1.0"
