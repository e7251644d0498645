"""Cell-based maximum-entropy approximants and meshless total-Lagrangian explicit dynamics."""

__version__ = "0.1.0"
