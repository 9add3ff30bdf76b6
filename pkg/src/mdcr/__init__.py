"""Multi-domain causal representation learning from unpaired data."""

__version__ = "0.1.0"
