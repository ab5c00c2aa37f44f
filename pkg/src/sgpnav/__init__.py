"""Sparse-GP occupancy surfaces and reactive subgoal navigation on uneven terrain."""

__version__ = "0.1.0"
