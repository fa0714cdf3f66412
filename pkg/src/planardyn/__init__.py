"""Rigid-body sliding/toppling simulation and learned dynamics prediction."""

__version__ = "0.1.0"
