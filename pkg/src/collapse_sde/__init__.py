"""Energy-driven stochastic state reduction on projective Hilbert space."""

__version__ = "0.1.0"
