"""Supplier allocation with learned Black-Litterman views."""
__version__ = "0.1.0"
