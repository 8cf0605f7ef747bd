"""Episodic memory networks with tensor attention gates for bAbI-style QA."""

__version__ = "0.1.0"
