"""Metric temporal logic: syntax, parsing and robustness semantics."""
from .ast import (TRUE, Always, And, Eventually, Formula, Interval, Not, Or, Predicate,
                  TrueF, Until, coordinates, horizon)
from .parser import parse, to_text
from .semantics import (PLAIN, STRONG, WEAK, Signal, evaluate, ext_robustness, reach,
                        robustness, sat, signed_dist, window)

__all__ = [
    "TRUE", "Always", "And", "Eventually", "Formula", "Interval", "Not", "Or", "Predicate",
    "TrueF", "Until", "coordinates", "horizon", "parse", "to_text", "PLAIN", "STRONG", "WEAK",
    "Signal", "evaluate", "ext_robustness", "reach", "robustness", "sat", "signed_dist",
    "window",
]
