"""Numerical diagnostics for asymptotic stability of Markov-Feller semigroups."""

__version__ = "0.1.0"
