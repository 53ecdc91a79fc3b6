"""Hypothesis property-based tests for the service lag-effects toolkit.

Covers the panel CSV reader and writer, estimation-row building, the
regression kernels and the importance weights.

Note:
    Tests here require an explicit ``@pytest.mark.property`` decorator,
    unlike ``unit/`` and ``integration/``, this package is not auto-marked
    by ``conftest.pytest_collection_modifyitems``.

Example:
    Run all property tests::

        poetry run pytest tests/property_based/ -v -m property
"""
