"""Unit tests package for the service lag-effects toolkit.

This package contains isolated unit tests that verify one module at a time
on small in-memory panels and seeded simulations.
"""
