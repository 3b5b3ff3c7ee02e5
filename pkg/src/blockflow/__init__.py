"""Block-spin renormalization-group engine on anisotropic space-time lattices."""

__version__ = "0.1.0"
