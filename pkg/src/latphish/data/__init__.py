"""Bundled default lists and word data."""
