"""Timed observers and temporal-logic inference for hybrid systems."""

__version__ = "0.1.0"
