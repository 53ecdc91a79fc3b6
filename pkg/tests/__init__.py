"""Test suite for the service lag-effects toolkit."""
