"""Lag-effect estimation for stochastic service systems."""
