"""Two-party distributed rejection sampling of the singlet correlations."""

__version__ = "0.1.0"
