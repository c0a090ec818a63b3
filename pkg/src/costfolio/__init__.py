"""Trader-population statistics and cost-aware portfolio optimization."""
__version__ = "0.1.0"
