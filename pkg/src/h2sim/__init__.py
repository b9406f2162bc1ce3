"""Functional model and cycle-level simulator for a three-engine SNN training accelerator."""

__version__ = "0.1.0"
