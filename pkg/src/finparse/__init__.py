"""Multi-stage field extraction for scanned financial documents."""

__version__ = "0.1.0"
