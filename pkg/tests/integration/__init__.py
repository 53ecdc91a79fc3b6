"""Integration tests - testing component interaction and data workflows.

Integration tests verify that multiple components work together correctly.
Unlike unit tests which isolate individual functions, integration tests
read and write real files and run the command line end to end.

Test categories:
- Analysis workflows: CSV panels, propensity selection, lag-effect tables
- Study workflows: replication suites, thread-count determinism, provenance
- CLI workflows: sub-commands, exit codes, JSON error lines
- Replication studies: Monte Carlo checks marked ``slow``
"""
