"""Simulation and verification of stochastic conservation laws on compact manifolds."""

__version__ = "0.1.0"
