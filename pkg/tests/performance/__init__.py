"""Performance benchmark tests for the service lag-effects toolkit.

Uses pytest-benchmark to measure execution time of critical paths such as
panel simulation, row building, estimation and CSV parsing.
"""
