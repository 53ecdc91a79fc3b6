"""Simulation, oracle, study and reporting components."""
