"""0D vascular network models with data-driven junction coefficients."""

__version__ = "0.1.0"
