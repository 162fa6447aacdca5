"""Feasibility-guaranteed OCBF control for two-road traffic merging."""

__version__ = "0.1.0"
