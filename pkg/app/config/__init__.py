"""Configuration package for the lag-effects toolkit."""
