"""Quorum-sensing many-particle simulations and their mean-field limit."""

__version__ = "0.1.0"
