"""Lateral-phishing detection and attacker characterization for enterprise email."""

__version__ = "0.1.0"
