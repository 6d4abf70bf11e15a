"""Periodic-orbit families on homotopies of stable energy surfaces."""
__version__ = "0.1.0"
