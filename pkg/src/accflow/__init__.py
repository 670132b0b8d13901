"""Stochastic traffic accident models on a periodic road.

Microscopic follow-the-leader dynamics, a macroscopic LWR model with space
dependent flux, the coupled micro model driven by macroscopic accidents, and
Monte Carlo tools that measure the micro-macro discrepancy.
"""

__version__ = "0.1.0"
