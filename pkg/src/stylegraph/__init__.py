"""Multi-label style classification with a label graph and soft training."""

__version__ = "0.1.0"
