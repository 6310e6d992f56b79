"""Matching mechanisms, preference estimation and counterfactual welfare for
fragmented two-sided markets under balancedness constraints."""

__version__ = "0.1.0"
